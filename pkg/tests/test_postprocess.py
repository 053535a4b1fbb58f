import numpy as np
import pytest

from tumorseg.metrics import dsc
from tumorseg.postprocess import (Component, connected_components,
                                  convert_small_enhancing, postprocess_pipeline,
                                  remove_small_tumors)
from tumorseg.volume import LabelVolume, Region, region_mask


def labelvol(arr):
    arr = np.asarray(arr, dtype=np.uint8)
    return LabelVolume(arr.shape, (1, 1, 1), arr)


def relaxation_labels(mask, connectivity):
    """Independent component oracle: iterate min-label propagation until a
    fixpoint; each voxel ends at its component's smallest flat index."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.size
    ids = np.where(mask.ravel(), np.arange(n), n).reshape(mask.shape)
    if connectivity == 6:
        offsets = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    else:
        offsets = [(dz, dy, dx)
                   for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                   if (dz, dy, dx) > (0, 0, 0)]
    while True:
        prev = ids.copy()
        for dz, dy, dx in offsets:
            shifted = np.full_like(ids, n)
            src = tuple(slice(d, None) if d >= 0 else slice(None, d)
                        for d in (dz, dy, dx))
            dst = tuple(slice(None, -d) if d > 0 else
                        (slice(-d, None) if d < 0 else slice(None))
                        for d in (dz, dy, dx))
            shifted[dst] = ids[src]
            np.minimum(ids, np.where(mask, shifted, n), out=ids)
            shifted = np.full_like(ids, n)
            shifted[src] = ids[dst]
            np.minimum(ids, np.where(mask, shifted, n), out=ids)
        if np.array_equal(ids, prev):
            break
    return ids


def components_from_oracle(mask, connectivity):
    ids = relaxation_labels(mask, connectivity).ravel()
    n = mask.size
    out = []
    for root in np.unique(ids):
        if root == n:
            continue
        out.append(np.flatnonzero(ids == root))
    out.sort(key=lambda idx: idx[0])
    return out


def test_two_separate_cubes():
    mask = np.zeros((6, 6, 6), dtype=bool)
    mask[0:2, 0:2, 0:2] = True
    mask[4:6, 4:6, 4:6] = True
    comps = connected_components(mask, 26)
    assert [c.size for c in comps] == [8, 8]


def test_empty_mask():
    assert connected_components(np.zeros((3, 3, 3), dtype=bool)) == []


def test_diagonal_connectivity_difference():
    mask = np.zeros((2, 2, 2), dtype=bool)
    mask[0, 0, 0] = True
    mask[1, 1, 1] = True
    assert len(connected_components(mask, 26)) == 1
    assert len(connected_components(mask, 6)) == 2


@pytest.mark.parametrize("connectivity", [6, 26])
def test_components_match_relaxation_oracle(connectivity):
    rng = np.random.default_rng(42)
    for _ in range(25):
        mask = rng.random((12, 12, 12)) < 0.35
        got = connected_components(mask, connectivity)
        expected = components_from_oracle(mask, connectivity)
        assert len(got) == len(expected)
        for g, e in zip(got, expected):
            assert np.array_equal(g.indices, e)


def test_components_partition_mask():
    rng = np.random.default_rng(7)
    mask = rng.random((10, 10, 10)) < 0.4
    comps = connected_components(mask, 26)
    all_idx = np.concatenate([c.indices for c in comps]) if comps else np.array([])
    assert len(all_idx) == len(set(all_idx.tolist()))  # pairwise disjoint
    assert len(all_idx) == mask.sum()                  # union covers mask


def cube_labels(out, corner, edge, label):
    z, y, x = corner
    out[z:z + edge, y:y + edge, x:x + edge] = label
    return out


def test_small_component_removed_boundary_exact():
    # 999 voxels: 10x10x10 cube minus one voxel; 1500: 10x10x15 block
    arr = np.zeros((12, 12, 40), dtype=np.uint8)
    arr[1:11, 1:11, 1:11] = 2
    arr[1, 1, 1] = 0                # 999 voxels
    arr[1:11, 1:11, 20:35] = 2      # 1500 voxels
    out = remove_small_tumors(labelvol(arr), min_voxels=1000)
    assert (out.data[:, :, :12] != 0).sum() == 0
    assert (out.data[:, :, 20:35] != 0).sum() == 1500


def test_exactly_1000_voxels_survive():
    arr = np.zeros((12, 12, 12), dtype=np.uint8)
    arr[1:11, 1:11, 1:11] = 1  # exactly 1000
    out = remove_small_tumors(labelvol(arr), min_voxels=1000)
    assert np.array_equal(out.data, arr)


def test_remove_small_noop_on_empty():
    arr = np.zeros((4, 4, 4), dtype=np.uint8)
    out = remove_small_tumors(labelvol(arr))
    assert np.array_equal(out.data, arr)


def test_enhancing_299_converted_300_kept():
    arr299 = np.zeros((10, 10, 10), dtype=np.uint8)
    arr299.reshape(-1)[:299] = 4
    out = convert_small_enhancing(labelvol(arr299), threshold=300)
    assert (out.data == 4).sum() == 0
    assert (out.data == 1).sum() == 299

    arr300 = np.zeros((10, 10, 10), dtype=np.uint8)
    arr300.reshape(-1)[:300] = 4
    out = convert_small_enhancing(labelvol(arr300), threshold=300)
    assert (out.data == 4).sum() == 300


def test_enhancing_zero_unchanged():
    arr = np.zeros((4, 4, 4), dtype=np.uint8)
    arr[0, 0, 0] = 1
    out = convert_small_enhancing(labelvol(arr))
    assert np.array_equal(out.data, arr)


def test_pipeline_removes_spurious_blob_keeps_tumor():
    arr = np.zeros((24, 24, 48), dtype=np.uint8)
    cube_labels(arr, (2, 2, 2), 11, 2)   # 1331 voxel tumor
    cube_labels(arr, (4, 4, 30), 7, 2)   # 343 voxel false positive
    out = postprocess_pipeline(labelvol(arr), min_voxels=1000)
    assert (out.data[:, :, 25:] != 0).sum() == 0
    assert (out.data[2:13, 2:13, 2:13] == 2).all()


def test_pipeline_idempotent():
    rng = np.random.default_rng(9)
    arr = np.zeros((20, 20, 20), dtype=np.uint8)
    cube_labels(arr, (2, 2, 2), 12, 2)
    arr[5:9, 5:9, 5:9] = 4
    arr[rng.random(arr.shape) < 0.01] = 1
    once = postprocess_pipeline(labelvol(arr))
    twice = postprocess_pipeline(once)
    assert np.array_equal(once.data, twice.data)


def test_pipeline_never_adds_wt_voxels():
    rng = np.random.default_rng(10)
    arr = rng.choice([0, 0, 0, 1, 2, 4], size=(16, 16, 16)).astype(np.uint8)
    out = postprocess_pipeline(labelvol(arr))
    wt_in = region_mask(labelvol(arr), Region.WT)
    wt_out = region_mask(out, Region.WT)
    assert np.all(wt_out <= wt_in)


def test_postprocess_improves_wt_dsc_with_false_positive():
    truth = np.zeros((24, 24, 48), dtype=np.uint8)
    cube_labels(truth, (2, 2, 2), 11, 2)
    pred = truth.copy()
    cube_labels(pred, (4, 4, 30), 8, 2)  # 512 voxel spurious component
    cleaned = postprocess_pipeline(labelvol(pred), min_voxels=1000)
    before = dsc(pred != 0, truth != 0)
    after = dsc(cleaned.data != 0, truth != 0)
    assert after > before
