import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorseg.preprocess import (Patch, PreprocessError, SamplingPolicy,
                                 flip_lr, sample_patches, zscore_normalize)
from tumorseg.volume import LabelVolume, ModalityStack, Volume


def stack_from(data):
    data = np.asarray(data, dtype=np.float32)
    v = Volume(data.shape, (1, 1, 1), data)
    return ModalityStack(v, v, v, v, "case")


def test_zscore_hand_values():
    # brain voxels [1, 2, 3]: mean 2, population std sqrt(2/3)
    data = np.array([0, 1, 2, 3]).reshape(1, 1, 4)
    out = zscore_normalize(Volume((1, 1, 4), (1, 1, 1), data))
    expected = [0.0, -1.224745, 0.0, 1.224745]
    assert out.data.ravel() == pytest.approx(expected, abs=1e-5)


def test_zscore_statistics_and_background():
    rng = np.random.default_rng(1)
    data = rng.gamma(2.0, 2.0, size=(8, 8, 8)).astype(np.float32)
    data[:4] = 0.0  # background half
    out = zscore_normalize(Volume((8, 8, 8), (1, 1, 1), data))
    brain = data != 0
    assert np.all(out.data[~brain] == 0)
    vals = out.data[brain].astype(np.float64)
    assert abs(vals.mean()) < 1e-5
    assert abs(vals.std() - 1.0) < 1e-5


@settings(max_examples=20)
@given(shift=st.floats(-50, 50))
def test_zscore_shift_invariance(shift):
    base = np.arange(1, 28, dtype=np.float32).reshape(3, 3, 3)
    a = zscore_normalize(Volume((3, 3, 3), (1, 1, 1), base))
    shifted = base + np.float32(shift)
    if np.any(shifted == 0):
        shifted = shifted + np.float32(0.25)
    b = zscore_normalize(Volume((3, 3, 3), (1, 1, 1), shifted))
    assert np.allclose(a.data, b.data, atol=1e-4)


def test_zscore_errors():
    with pytest.raises(PreprocessError, match="empty brain"):
        zscore_normalize(Volume((1, 1, 2), (1, 1, 1), np.zeros((1, 1, 2))))
    with pytest.raises(PreprocessError, match="zero variance"):
        zscore_normalize(Volume((1, 1, 2), (1, 1, 1), np.full((1, 1, 2), 3.0)))


def phantom_with_blob(n=24, r=4):
    """Cube grid with a centered spherical tumor blob."""
    zyx = np.indices((n, n, n))
    d2 = ((zyx - n // 2) ** 2).sum(axis=0)
    labels = np.where(d2 <= r * r, 1, 0).astype(np.uint8)
    intensity = np.ones((n, n, n), dtype=np.float32)
    return (stack_from(intensity),
            LabelVolume((n, n, n), (1, 1, 1), labels))


def test_sample_patches_all_tumor_centered():
    stack, labels = phantom_with_blob()
    policy = SamplingPolicy(tumor_fraction=1.0, patches_per_case=4, seed=7)
    patches = sample_patches(stack, labels, policy, patch_size=8)
    assert len(patches) == 4
    assert all(p.center_label != 0 for p in patches)


def test_sample_patches_fraction_half():
    stack, labels = phantom_with_blob()
    policy = SamplingPolicy(tumor_fraction=0.5, patches_per_case=8, seed=3)
    patches = sample_patches(stack, labels, policy, patch_size=8)
    tumor_centered = sum(p.center_label != 0 for p in patches)
    assert abs(tumor_centered - 4) <= 1


def test_sample_patches_deterministic():
    stack, labels = phantom_with_blob()
    policy = SamplingPolicy(tumor_fraction=0.5, patches_per_case=6, seed=11)
    a = sample_patches(stack, labels, policy, patch_size=8)
    b = sample_patches(stack, labels, policy, patch_size=8)
    assert [p.origin for p in a] == [p.origin for p in b]
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.data, pb.data)


def test_sample_patches_pads_small_volume():
    data = np.ones((12, 12, 12), dtype=np.float32)
    labels = LabelVolume((12, 12, 12), (1, 1, 1), np.zeros((12, 12, 12)))
    policy = SamplingPolicy(tumor_fraction=0.0, patches_per_case=1, seed=0)
    patches = sample_patches(stack_from(data), labels, policy, patch_size=16)
    p = patches[0]
    assert p.origin == (0, 0, 0)
    assert p.data.shape == (4, 16, 16, 16)
    assert np.all(p.data[:, 12:, :, :] == 0)
    assert np.all(p.data[:, :12, :12, :12] == 1)


def test_sample_patches_no_tumor_error():
    data = np.ones((8, 8, 8), dtype=np.float32)
    labels = LabelVolume((8, 8, 8), (1, 1, 1), np.zeros((8, 8, 8)))
    policy = SamplingPolicy(tumor_fraction=1.0, patches_per_case=1, seed=0)
    with pytest.raises(PreprocessError, match="case"):
        sample_patches(stack_from(data), labels, policy, patch_size=8)


def test_patches_inside_padded_volume():
    stack, labels = phantom_with_blob()
    policy = SamplingPolicy(tumor_fraction=0.5, patches_per_case=10, seed=2)
    for p in sample_patches(stack, labels, policy, patch_size=8):
        assert all(0 <= o and o + 8 <= 24 for o in p.origin)


def flip_test_patch():
    rng = np.random.default_rng(5)
    data = rng.standard_normal((4, 4, 4, 4)).astype(np.float32)
    labels = rng.choice([0, 1, 2, 4], size=(4, 4, 4)).astype(np.uint8)
    return Patch(data, (0, 0, 0), labels)


def test_flip_is_involution():
    p = flip_test_patch()
    back = flip_lr(flip_lr(p))
    assert np.array_equal(back.data, p.data)
    assert np.array_equal(back.label_cube, p.label_cube)


def test_flip_reverses_width():
    data = np.zeros((4, 4, 4, 4), dtype=np.float32)
    data[0, 0, 0, :] = [1, 2, 3, 4]
    p = Patch(data, (0, 0, 0))
    assert flip_lr(p).data[0, 0, 0, :].tolist() == [4, 3, 2, 1]


def test_flip_moves_labels_with_image():
    # mark one voxel in both the image and the labels; both must land at
    # the mirrored width coordinate w -> p-1-w
    p_size = 4
    data = np.zeros((4, p_size, p_size, p_size), dtype=np.float32)
    labels = np.zeros((p_size, p_size, p_size), dtype=np.uint8)
    z, y, w = 1, 2, 0
    data[:, z, y, w] = 7.0
    labels[z, y, w] = 4
    flipped = flip_lr(Patch(data, (0, 0, 0), labels))
    assert flipped.data[0, z, y, p_size - 1 - w] == 7.0
    assert flipped.label_cube[z, y, p_size - 1 - w] == 4
    assert flipped.label_cube.sum() == 4  # nothing else moved


def test_flip_preserves_channel_multisets():
    p = flip_test_patch()
    f = flip_lr(p)
    for c in range(4):
        assert sorted(p.data[c].ravel()) == sorted(f.data[c].ravel())
