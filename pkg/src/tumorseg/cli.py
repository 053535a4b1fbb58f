"""Pipeline CLI: every stage as a subcommand over a shared JSON config.

Exit codes: 0 success, 1 stage failure (including gradcheck violations),
2 usage errors (argparse), 3 malformed config, 4 missing inputs.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import metrics as seg_metrics
from . import survival as surv
from .cases import (MissingInputError, SurvivalRecord, case_ids, load_labels,
                    load_stack, read_survival_csv, save_stack,
                    write_survival_csv)
from .config import ConfigError, PipelineConfig, load_config, save_config
from .inference import argmax_labels, flip_averaged_predict
from .model import Adam, Model, load_checkpoint, save_checkpoint, train_step
from .nifti import load_nifti, load_nifti_labels
from .phantom import make_phantom_case
from .postprocess import postprocess_pipeline
from .preprocess import SamplingPolicy, flip_lr, sample_patches, zscore_normalize
from .radiomics import build_feature_vector, write_features_csv, read_features_csv
from .volume import ModalityStack, brain_mask, write_internal

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4

SUBCOMMANDS = (
    "convert", "preprocess", "train", "predict", "postprocess", "evaluate",
    "features", "survival-train", "survival-cv", "survival-predict",
    "gradcheck", "demo",
)


def _echo_config(cfg: PipelineConfig, out_dir: Path | None) -> None:
    print(f"effective config (seed={cfg.seed}):")
    print(cfg.to_json())
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "effective_config.json")


def _map_cases(fn, ids, jobs: int):
    """Apply fn to each case id, optionally threaded; results in id order."""
    if jobs <= 1:
        return [fn(cid) for cid in ids]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, ids))


# -- stage implementations ----------------------------------------------------

def _cmd_convert(cfg: PipelineConfig, args) -> int:
    src = Path(args.nifti_dir)
    out = Path(cfg.paths.cases_dir)
    if not src.is_dir():
        raise MissingInputError(f"NIfTI directory {src} does not exist")
    converted = 0
    for case_dir in sorted(p for p in src.iterdir() if p.is_dir()):
        case_out = out / case_dir.name
        case_out.mkdir(parents=True, exist_ok=True)
        for name in ("t1", "t2", "t1c", "flair"):
            matches = sorted(case_dir.glob(f"*_{name}.nii*"))
            if not matches:
                raise MissingInputError(f"{case_dir}: no *_{name}.nii[.gz] file")
            write_internal(load_nifti(matches[0]), case_out / f"{name}.mvol")
        seg = sorted(case_dir.glob("*_seg.nii*"))
        if seg:
            write_internal(load_nifti_labels(seg[0]), case_out / "seg.mvol")
        converted += 1
    print(f"converted {converted} cases into {out}")
    return EXIT_OK


def _cmd_preprocess(cfg: PipelineConfig, args) -> int:
    out = Path(cfg.paths.output_dir) / "preprocessed"
    ids = case_ids(cfg.paths.cases_dir)

    def run(cid):
        stack = load_stack(cfg.paths.cases_dir, cid)
        normalized = ModalityStack(*(zscore_normalize(v) for v in stack.volumes()),
                                   case_id=cid)
        save_stack(normalized, out)
        seg = Path(cfg.paths.cases_dir) / cid / "seg.mvol"
        if seg.exists():
            write_internal(load_labels(seg), out / cid / "seg.mvol")
        return cid

    _map_cases(run, ids, args.jobs)
    print(f"preprocessed {len(ids)} cases into {out}")
    return EXIT_OK


def _training_pool(cfg: PipelineConfig, pre_dir) -> list:
    patches = []
    for i, cid in enumerate(case_ids(pre_dir)):
        stack = load_stack(pre_dir, cid)
        labels = load_labels(Path(pre_dir) / cid / "seg.mvol")
        policy = SamplingPolicy(cfg.sampling.tumor_fraction,
                                cfg.sampling.patches_per_case,
                                cfg.sampling.seed + i)
        patches.extend(sample_patches(stack, labels, policy,
                                      cfg.model.patch_size))
    return patches


def _cmd_train(cfg: PipelineConfig, args) -> int:
    pre_dir = Path(cfg.paths.output_dir) / "preprocessed"
    if not pre_dir.is_dir():
        raise MissingInputError(f"run preprocess first: {pre_dir} missing")
    pool = _training_pool(cfg, pre_dir)
    steps = args.steps if args.steps is not None else cfg.train.steps

    model = Model(cfg.model)
    opt = Adam(model, lr=cfg.train.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    for step in range(steps):
        patch = pool[step % len(pool)]
        if rng.random() < 0.5:
            patch = flip_lr(patch)
        loss = train_step(model, patch.data, patch.label_cube, opt, cfg.loss)
        if step % 10 == 0 or step == steps - 1:
            print(f"step {step:5d}  loss {loss:.6f}")
    ckpt = Path(cfg.paths.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt)
    print(f"saved checkpoint {ckpt}")
    return EXIT_OK


def _cmd_predict(cfg: PipelineConfig, args) -> int:
    ckpt = Path(cfg.paths.checkpoint)
    if not ckpt.exists():
        raise MissingInputError(f"checkpoint {ckpt} missing")
    model = load_checkpoint(ckpt)
    window = args.window or cfg.inference.window or model.cfg.patch_size
    stride = args.stride or cfg.inference.stride or window // 2
    pre_dir = Path(cfg.paths.output_dir) / "preprocessed"
    if not pre_dir.is_dir():
        raise MissingInputError(f"run preprocess first: {pre_dir} missing")
    out = Path(cfg.paths.output_dir) / "predictions"
    out.mkdir(parents=True, exist_ok=True)
    ids = case_ids(pre_dir)

    def run(cid):
        stack = load_stack(pre_dir, cid)
        pv = flip_averaged_predict(model, stack, window, stride)
        write_internal(argmax_labels(pv), out / f"{cid}.mvol")
        return cid

    _map_cases(run, ids, args.jobs)
    print(f"predicted {len(ids)} cases (window={window}, stride={stride}) "
          f"into {out}")
    return EXIT_OK


def _cmd_postprocess(cfg: PipelineConfig, args) -> int:
    pred_dir = Path(cfg.paths.output_dir) / "predictions"
    if not pred_dir.is_dir():
        raise MissingInputError(f"run predict first: {pred_dir} missing")
    out = Path(cfg.paths.output_dir) / "postprocessed"
    out.mkdir(parents=True, exist_ok=True)
    min_voxels = args.min_voxels or cfg.postprocess.min_tumor_voxels
    threshold = args.et_threshold or cfg.postprocess.enhancing_threshold
    files = sorted(pred_dir.glob("*.mvol"))
    if not files:
        raise MissingInputError(f"no predictions in {pred_dir}")

    def run(path):
        labels = load_labels(path)
        cleaned = postprocess_pipeline(labels, min_voxels, threshold,
                                       cfg.postprocess.connectivity)
        write_internal(cleaned, out / path.name)
        return path.name

    _map_cases(run, files, args.jobs)
    print(f"postprocessed {len(files)} cases into {out}")
    return EXIT_OK


def _cmd_evaluate(cfg: PipelineConfig, args) -> int:
    out_dir = Path(cfg.paths.output_dir)
    pred_dir = out_dir / args.pred_subdir
    if not pred_dir.is_dir():
        raise MissingInputError(f"prediction directory {pred_dir} missing")
    ids = case_ids(cfg.paths.cases_dir)

    def run(cid):
        truth_path = Path(cfg.paths.cases_dir) / cid / "seg.mvol"
        pred_path = pred_dir / f"{cid}.mvol"
        if not pred_path.exists():
            raise MissingInputError(f"{pred_path} missing")
        return seg_metrics.score_regions(load_labels(pred_path),
                                         load_labels(truth_path), cid)

    scores = [s for case in _map_cases(run, ids, args.jobs) for s in case]
    seg_metrics.write_case_csv(scores, out_dir / "metrics.csv")
    seg_metrics.write_summary_csv(scores, out_dir / "metrics_summary.csv")
    print(f"wrote {out_dir / 'metrics.csv'} and {out_dir / 'metrics_summary.csv'}")
    return EXIT_OK


def _cmd_features(cfg: PipelineConfig, args) -> int:
    out_dir = Path(cfg.paths.output_dir)
    labels_dir = out_dir / args.labels_subdir if args.labels_subdir else None
    meta = read_survival_csv(cfg.paths.survival_csv)
    ids = case_ids(cfg.paths.cases_dir)

    def run(cid):
        if labels_dir is None:  # ground truth
            label_path = Path(cfg.paths.cases_dir) / cid / "seg.mvol"
        else:
            label_path = labels_dir / f"{cid}.mvol"
        labels = load_labels(label_path)
        stack = load_stack(cfg.paths.cases_dir, cid)
        rec = meta.get(cid)
        if rec is None:
            raise MissingInputError(f"no survival metadata for case {cid}")
        vec = build_feature_vector(labels, brain_mask(stack), rec.age, cid)
        extras = {
            "survival_days": "" if rec.survival_days is None
            else repr(rec.survival_days),
            "resection_status": rec.resection_status,
        }
        return vec, extras

    rows = _map_cases(run, ids, args.jobs)
    out_path = out_dir / args.features_csv
    out_dir.mkdir(parents=True, exist_ok=True)
    write_features_csv(rows, out_path,
                       extra_cols=("survival_days", "resection_status"))
    print(f"wrote {out_path}")
    return EXIT_OK


def _survival_matrix(cfg: PipelineConfig, features_path, require_days=True):
    if not Path(features_path).exists():
        raise MissingInputError(f"features file {features_path} missing")
    vectors, extras = read_features_csv(features_path)
    X, y, kept = [], [], []
    for vec, ex in zip(vectors, extras):
        if cfg.survival.gtr_only and ex.get("resection_status") != "GTR":
            continue
        days = ex.get("survival_days", "")
        if require_days and not days:
            continue
        X.append(vec.as_array())
        y.append(float(days) if days else np.nan)
        kept.append(vec.case_id)
    if not X:
        raise MissingInputError(f"no usable survival cases in {features_path}")
    return np.array(X), np.array(y), kept


def _cmd_survival_train(cfg: PipelineConfig, args) -> int:
    out_dir = Path(cfg.paths.output_dir)
    X, y, kept = _survival_matrix(cfg, out_dir / args.features_csv)
    forest = surv.fit_forest(X, y, cfg.forest)
    path = out_dir / "forest.json"
    surv.save_forest(forest, path)
    print(f"trained forest on {len(kept)} cases -> {path}")
    return EXIT_OK


def _cmd_survival_cv(cfg: PipelineConfig, args) -> int:
    out_dir = Path(cfg.paths.output_dir)
    X, y, kept = _survival_matrix(cfg, out_dir / args.features_csv)
    k = args.folds or min(cfg.survival.folds, len(y))
    result = surv.cross_validate(X, y, k, cfg.forest, cfg.seed,
                                 cfg.survival.short_days, cfg.survival.long_days)
    path = out_dir / "survival_cv.csv"
    cols = ["fold", "n", "accuracy", "mse", "median_se", "std_se", "spearman_r"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for i, fold in enumerate(result["per_fold"]):
            if fold is None:
                continue
            w.writerow([i, result["fold_sizes"][i]] +
                       [repr(fold[c]) for c in cols[2:]])
        w.writerow(["pooled", len(y)] +
                   [repr(result["pooled"][c]) for c in cols[2:]])
    print(f"{k}-fold CV pooled accuracy "
          f"{result['pooled']['accuracy']:.3f} -> {path}")
    return EXIT_OK


def _cmd_survival_predict(cfg: PipelineConfig, args) -> int:
    out_dir = Path(cfg.paths.output_dir)
    forest_path = out_dir / "forest.json"
    if not forest_path.exists():
        raise MissingInputError(f"forest model {forest_path} missing")
    forest = surv.load_forest(forest_path)
    X, _, kept = _survival_matrix(cfg, out_dir / args.features_csv,
                                  require_days=False)
    path = out_dir / "survival_predictions.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case_id", "predicted_days", "class"])
        for cid, row in zip(kept, X):
            days = surv.predict_days(forest, row)
            cls = surv.classify_days(days, cfg.survival.short_days,
                                     cfg.survival.long_days)
            w.writerow([cid, repr(days), cls])
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_gradcheck(cfg: PipelineConfig, args) -> int:
    results, elapsed = gc.run_suite(seeds=range(args.gradcheck_seeds))
    failed = False
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:20s} max rel err {r.max_rel_err:.3e} "
              f"(tol {r.tolerance:.0e})  {status}")
        failed |= not r.passed
    print(f"gradcheck finished in {elapsed:.1f}s")
    return EXIT_FAILURE if failed else EXIT_OK


def _cmd_demo(cfg: PipelineConfig, args) -> int:
    out = Path(cfg.paths.output_dir)
    cases = Path(cfg.paths.cases_dir)
    n = args.cases

    records = []
    for i in range(n):
        cid = f"phantom{i:03d}"
        stack, labels, meta = make_phantom_case(cid, cfg.seed * 1000 + i)
        save_stack(stack, cases)
        write_internal(labels, cases / cid / "seg.mvol")
        records.append(SurvivalRecord(cid, meta["age"], meta["survival_days"],
                                      meta["resection_status"]))
    write_survival_csv(records, cfg.paths.survival_csv)
    print(f"generated {n} phantom cases in {cases}")

    rc = _cmd_preprocess(cfg, args)
    rc = rc or _cmd_train(cfg, args)
    rc = rc or _cmd_predict(cfg, args)
    rc = rc or _cmd_postprocess(cfg, args)
    rc = rc or _cmd_evaluate(cfg, args)
    rc = rc or _cmd_features(cfg, args)
    rc = rc or _cmd_survival_cv(cfg, args)
    return rc


_HANDLERS = {
    "convert": _cmd_convert,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "postprocess": _cmd_postprocess,
    "evaluate": _cmd_evaluate,
    "features": _cmd_features,
    "survival-train": _cmd_survival_train,
    "survival-cv": _cmd_survival_cv,
    "survival-predict": _cmd_survival_predict,
    "gradcheck": _cmd_gradcheck,
    "demo": _cmd_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tumorseg",
        description="Brain-tumor segmentation and survival pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="JSON pipeline config")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="per-case parallelism")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--cases-dir", help="override cases directory")
        return p

    add("convert", help="NIfTI cases -> internal .mvol") \
        .add_argument("--nifti-dir", required=True)
    add("preprocess", help="z-score normalize cases")
    p = add("train", help="train the segmentation network")
    p.add_argument("--steps", type=int)
    p = add("predict", help="sliding-window flip-averaged inference")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p = add("postprocess", help="connected-component cleanup")
    p.add_argument("--min-voxels", type=int)
    p.add_argument("--et-threshold", type=int)
    p = add("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred-subdir", default="postprocessed")
    p = add("features", help="extract survival features")
    p.add_argument("--labels-subdir", default="postprocessed",
                   help="empty string = ground-truth labels")
    p.add_argument("--features-csv", default="features.csv")
    p = add("survival-train", help="fit the survival forest")
    p.add_argument("--features-csv", default="features.csv")
    p = add("survival-cv", help="k-fold cross-validated survival metrics")
    p.add_argument("--features-csv", default="features.csv")
    p.add_argument("--folds", type=int)
    p = add("survival-predict", help="predict survival days")
    p.add_argument("--features-csv", default="features.csv")
    p = add("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--gradcheck-seeds", type=int, default=20)
    p = add("demo", help="full pipeline on synthetic phantoms")
    p.add_argument("--cases", type=int, default=3)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--min-voxels", type=int)
    p.add_argument("--et-threshold", type=int)
    p.add_argument("--pred-subdir", default="postprocessed")
    p.add_argument("--labels-subdir", default="postprocessed")
    p.add_argument("--features-csv", default="features.csv")
    p.add_argument("--folds", type=int)
    return parser


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    path_updates = {}
    if args.out:
        path_updates["output_dir"] = args.out
        path_updates["checkpoint"] = str(Path(args.out) / "model.ckpt")
    if args.cases_dir:
        path_updates["cases_dir"] = args.cases_dir
        path_updates["survival_csv"] = str(Path(args.cases_dir) / "survival.csv")
    if path_updates:
        updates["paths"] = dataclasses.replace(cfg.paths, **path_updates)
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    if args.command == "demo":
        # the demo self-provisions a desk-scale run; an explicit --config
        # keeps its own model/loss sections
        train = dataclasses.replace(
            cfg.train, steps=args.steps,
            learning_rate=cfg.train.learning_rate if args.config else 1e-3)
        model = cfg.model if args.config else dataclasses.replace(
            cfg.model, seed=cfg.seed)
        cfg = dataclasses.replace(cfg, model=model, train=train)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _echo_config(cfg, Path(cfg.paths.output_dir))
        return _HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - stage failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
