"""Command-line entry points.

Exit codes: 0 success, 1 input error, 2 numeric failure.
"""

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import make_risk_pipeline, save_model, stratified_kfold_cv
from .exceptions import (
    EmptyInputError,
    InputError,
    InvalidInputError,
    JoinError,
    NumericError,
)
from .features import (
    FEATURE_NAMES,
    extract_feature_vector,
    fragment_map,
    parse_risk,
    relabel_lumen,
    split_fragments,
    worst_grade,
)
from .io import read_pgm, read_tensor, write_pgm, write_tensor
from .losses import LOSS_KINDS
from .metrics import dice_scores, pixel_f1, quadratic_weighted_kappa
from .synth import _uniform_mix, gen_cohort, gen_tiles, inject_label_noise
from .tensor_core import N_TISSUE_CLASSES, TISSUE_CLASS_NAMES
from .training import Dataset, TileSet, TrainConfig, evaluate, train

log = logging.getLogger("segrisk")

LOSS_COLUMNS = {"cc": "CC", "focal": "Focal", "bitempered": "Bi-tempered", "lovasz": "Lovasz"}
# sub-streams derived from the single --seed
STREAM_TRAIN, STREAM_VAL, STREAM_TEST, STREAM_COHORT, STREAM_NOISE = range(1, 6)


# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest(path):
    """sha256 of a file, or of the sorted (name, digest) list of a directory."""
    path = Path(path)
    if path.is_file():
        return {"path": str(path), "sha256": sha256_file(path)}
    if path.is_dir():
        h = hashlib.sha256()
        files = sorted(p for p in path.rglob("*") if p.is_file() and p.name != "manifest.json")
        for p in files:
            h.update(f"{p.relative_to(path).as_posix()}\0{sha256_file(p)}\n".encode())
        return {"path": str(path), "sha256": h.hexdigest(), "files": len(files)}
    return {"path": str(path), "sha256": None}


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(out_dir, command, args, seeds, inputs, outputs):
    """Record everything needed to rerun ``command``; no timestamps, so reruns match."""
    out_dir = Path(out_dir)
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    manifest = {
        "command": command,
        "flags": flags,
        "seeds": seeds,
        "tool_version": __version__,
        "inputs": {name: digest(p) for name, p in inputs.items()},
        "outputs": {
            Path(p).relative_to(out_dir).as_posix(): sha256_file(p) for p in sorted(map(Path, outputs))
        },
    }
    write_json(manifest, out_dir / "manifest.json")


def make_out_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInputError(f"cannot create output directory {path}: {exc}") from None
    return path


def load_tile_dir(path):
    """Read ``<id>.rgb.tns`` / ``<id>.mask.pgm`` pairs in sorted id order."""
    path = Path(path)
    if not path.is_dir():
        raise InvalidInputError(f"tile directory {path} does not exist")
    images, masks, ids = [], [], []
    for rgb_path in sorted(path.glob("*.rgb.tns")):
        tile_id = rgb_path.name[: -len(".rgb.tns")]
        mask_path = path / f"{tile_id}.mask.pgm"
        if not mask_path.exists():
            raise InvalidInputError(f"tile {tile_id} has no mask {mask_path.name}")
        rgb = read_tensor(rgb_path).astype(np.float64)
        mask = read_pgm(mask_path)
        if rgb.ndim != 3 or rgb.shape[:2] != mask.shape:
            raise InvalidInputError(f"tile {tile_id}: image {rgb.shape} does not match mask {mask.shape}")
        images.append(rgb)
        masks.append(mask)
        ids.append(tile_id)
    if not images:
        raise EmptyInputError(f"no *.rgb.tns tiles in {path}")
    return images, masks, ids


def seed_stream(seed, stream):
    return [int(seed), int(stream)]


# --------------------------------------------------------------------------
# gen-synth
# --------------------------------------------------------------------------


def cmd_gen_synth(args):
    if args.tiles + args.val_tiles + args.test_tiles + args.cohort == 0:
        raise InvalidInputError("nothing to generate; pass --tiles and/or --cohort")
    if not 2 <= args.classes <= N_TISSUE_CLASSES:
        raise InvalidInputError(f"--classes must lie in 2..{N_TISSUE_CLASSES}")
    out = make_out_dir(args.out)
    outputs = []
    mix = tuple(_uniform_mix(args.classes))
    splits = (("train", args.tiles, STREAM_TRAIN), ("val", args.val_tiles, STREAM_VAL),
              ("test", args.test_tiles, STREAM_TEST))
    for name, n, stream in splits:
        if n == 0:
            continue
        split_dir = make_out_dir(out / name)
        tiles = gen_tiles(n, seed_stream(args.seed, stream), size=args.size, class_mix=mix,
                          noise=args.appearance_noise)
        for i, (rgb, mask) in enumerate(tiles):
            rgb_path = split_dir / f"tile_{i:05d}.rgb.tns"
            mask_path = split_dir / f"tile_{i:05d}.mask.pgm"
            write_tensor(rgb.astype(np.float32), rgb_path)
            write_pgm(mask, mask_path)
            outputs += [rgb_path, mask_path]
        log.info("wrote %d %s tiles", n, name)
    if args.cohort:
        slide_dir = make_out_dir(out / "slides")
        slides = gen_cohort(args.cohort, seed_stream(args.seed, STREAM_COHORT), args.max_fragments)
        labels_path = out / "labels.csv"
        with open(labels_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slide_id", "grade"])
            for i, (seg, grade, _) in enumerate(slides):
                slide_id = f"slide_{i:05d}"
                p = slide_dir / f"{slide_id}.mask.pgm"
                write_pgm(seg, p)
                outputs.append(p)
                w.writerow([slide_id, int(grade)])
        outputs.append(labels_path)
        log.info("wrote %d slides", args.cohort)
    seeds = {"seed": args.seed, "derivation": "SeedSequence([seed, stream]); streams train=1 val=2 test=3 cohort=4"}
    write_manifest(out, "gen-synth", args, seeds, {}, outputs)
    return 0


# --------------------------------------------------------------------------
# train / compare-losses
# --------------------------------------------------------------------------


def _config_from_args(args, loss_kind):
    return TrainConfig(
        loss_kind=loss_kind,
        loss_params={"alpha": args.alpha, "gamma": args.gamma, "t1": args.t1, "t2": args.t2},
        initial_lr=args.lr,
        plateau_factor=args.plateau_factor,
        plateau_patience=args.plateau_patience,
        early_stop_patience=args.early_stop,
        max_epochs=args.max_epochs,
        iterations_per_epoch=args.iterations,
        batch_size=args.batch_size,
        hidden=args.hidden,
        augment=not args.no_augment,
        seed=args.seed,
    )


def _resolve_splits(args):
    """``--data`` may be a tile directory or a gen-synth root with train/ val/ test/."""
    data = Path(args.data)
    train_dir, val_dir = data, args.val
    test_dir = getattr(args, "test", None)
    if (data / "train").is_dir():
        train_dir = data / "train"
        val_dir = val_dir or (data / "val")
        if test_dir is None and (data / "test").is_dir():
            test_dir = data / "test"
    if val_dir is None:
        raise InvalidInputError("no validation tiles; pass --val")
    return train_dir, Path(val_dir), (Path(test_dir) if test_dir else None)


def _noisy(masks, rate, seed, n_classes):
    if rate == 0:
        return masks
    return [inject_label_noise(m, rate, seed_stream(seed, STREAM_NOISE) + [i], n_classes)
            for i, m in enumerate(masks)]


def _load_dataset(args):
    train_dir, val_dir, test_dir = _resolve_splits(args)
    tr_images, tr_masks, _ = load_tile_dir(train_dir)
    va_images, va_masks, _ = load_tile_dir(val_dir)
    n_classes = args.classes or max(TileSet(tr_images, tr_masks).n_classes(),
                                    TileSet(va_images, va_masks).n_classes())
    tr_masks = _noisy(tr_masks, args.noise, args.seed, n_classes)
    dataset = Dataset(TileSet(tr_images, tr_masks), TileSet(va_images, va_masks))
    test = TileSet(*load_tile_dir(test_dir)[:2]) if test_dir else None
    inputs = {"train": train_dir, "val": val_dir}
    if test_dir:
        inputs["test"] = test_dir
    return dataset, test, n_classes, inputs


def _train_one(dataset, config, n_classes, out_dir):
    def progress(epoch, trainlog):
        log.info("%s epoch %d loss %.5f val %.5f dice %.4f lr %g", config.loss_kind, epoch,
                 trainlog.train_loss[-1], trainlog.val_loss[-1], trainlog.val_dice[-1], trainlog.lr[-1])

    model, trainlog = train(dataset, config, n_classes, callback=progress)
    out_dir = make_out_dir(out_dir)
    write_json(model.to_dict(), out_dir / "model.json")
    trainlog.write_csv(out_dir / "trainlog.csv")
    return model, trainlog, [out_dir / "model.json", out_dir / "trainlog.csv"]


def _train_summary(trainlog):
    best = int(np.argmin(trainlog.val_loss))
    return {
        "epochs_run": len(trainlog) - 1,
        "best_epoch": trainlog.epoch[best],
        "best_val_loss": trainlog.val_loss[best],
        "best_val_dice": trainlog.val_dice[best],
        "final_lr": trainlog.lr[-1],
    }


def cmd_train(args):
    dataset, _, n_classes, inputs = _load_dataset(args)
    config = _config_from_args(args, args.loss)
    out = make_out_dir(args.out)
    _, trainlog, outputs = _train_one(dataset, config, n_classes, out)
    summary = _train_summary(trainlog)
    write_json(summary, out / "train_summary.json")
    outputs.append(out / "train_summary.json")
    write_manifest(out, "train", args, {"seed": args.seed}, inputs, outputs)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _fmt(v):
    return "" if v is None or np.isnan(v) else f"{v:.6f}"


def cmd_compare_losses(args):
    kinds = [k.strip() for k in args.losses.split(",") if k.strip()]
    bad = [k for k in kinds if k not in LOSS_KINDS]
    if bad or not kinds:
        raise InvalidInputError(f"unknown losses {bad}; choose from {','.join(LOSS_KINDS)}")
    dataset, test, n_classes, inputs = _load_dataset(args)
    eval_set, eval_name = (test, "test") if test is not None else (dataset.val, "val")
    out = make_out_dir(args.out)
    outputs, results = [], {}
    for kind in kinds:
        model, trainlog, files = _train_one(dataset, _config_from_args(args, kind), n_classes, out / kind)
        outputs += files
        report = evaluate(model, eval_set, n_classes)
        per_class = [None] * N_TISSUE_CLASSES
        for c in range(n_classes):
            if not np.isnan(report.per_class[c]):
                per_class[c] = float(report.per_class[c])
        results[kind] = {"per_class": per_class, "mean": float(report.mean), **_train_summary(trainlog)}
        log.info("%s: mean Dice %.4f on %s", kind, report.mean, eval_name)

    table = out / "table.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class"] + [LOSS_COLUMNS[k] for k in kinds])
        for c, name in enumerate(TISSUE_CLASS_NAMES):
            w.writerow([name] + [_fmt(results[k]["per_class"][c]) for k in kinds])
        w.writerow(["Average"] + [_fmt(results[k]["mean"]) for k in kinds])
    report = {
        "evaluated_on": eval_name,
        "n_classes": n_classes,
        "class_names": list(TISSUE_CLASS_NAMES),
        "label_noise_rate": args.noise,
        "losses": results,
    }
    if "cc" in results and "bitempered" in results:
        report["bitempered_minus_cc_mean_dice"] = results["bitempered"]["mean"] - results["cc"]["mean"]
    write_json(report, out / "report.json")
    outputs += [table, out / "report.json"]
    write_manifest(out, "compare-losses", args, {"seed": args.seed, "noise_stream": STREAM_NOISE},
                   inputs, outputs)
    print(table.read_text(), end="")
    return 0


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


def _feature_row(slide_id, frag_id, vec):
    arr = vec.to_array()
    hist = [repr(float(v)) for v in arr[:N_TISSUE_CLASSES]]
    stats = [str(int(arr[N_TISSUE_CLASSES]))] + [f"{v:.6f}" for v in arr[N_TISSUE_CLASSES + 1:]]
    return [slide_id, frag_id] + hist + stats


def cmd_features(args):
    seg_dir = Path(args.segmaps)
    if not seg_dir.is_dir():
        raise InvalidInputError(f"segmentation directory {seg_dir} does not exist")
    paths = sorted(seg_dir.glob("*.pgm"))
    if not paths:
        raise EmptyInputError(f"no .pgm maps in {seg_dir}")
    out = make_out_dir(args.out)
    header = ["slide_id", "frag_id"] + list(FEATURE_NAMES)
    frag_rows, slide_rows, failures = [], [], []
    for p in paths:
        slide_id = p.name[: -len(".mask.pgm")] if p.name.endswith(".mask.pgm") else p.stem
        try:
            seg = read_pgm(p)
            kw = {"pixel_area": args.pixel_area, "connectivity": args.connectivity, "min_area": args.min_area}
            masks = split_fragments(seg, min_pixels=args.fragment_min_pixels)
            rows = [_feature_row(slide_id, str(i), extract_feature_vector(fragment_map(seg, m), **kw))
                    for i, m in enumerate(masks)]
            slide_row = _feature_row(slide_id, "all", extract_feature_vector(seg, **kw))
        except InputError as exc:
            log.error("%s: %s", p.name, exc)
            failures.append(p.name)
            continue
        frag_rows += rows
        slide_rows.append(slide_row)
    files = {"features.csv": frag_rows + slide_rows, "slides.csv": slide_rows}
    outputs = []
    for name, rows in files.items():
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(sorted(rows, key=lambda r: (r[0], r[1] == "all", r[1].zfill(6))))
        outputs.append(out / name)
    inputs = {"segmaps": seg_dir}
    if args.fragment_labels:
        outputs.append(_write_slide_grades(args.fragment_labels, out / "slide_labels.csv"))
        inputs["fragment_labels"] = args.fragment_labels
    write_manifest(out, "features", args, {}, inputs, outputs)
    if failures:
        print(f"error: {len(failures)} unreadable map(s): {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


def _write_slide_grades(fragment_labels, path):
    """Collapse ``slide_id,frag_id,grade`` rows to one worst-grade row per slide."""
    grades = {}
    for r in _read_csv(fragment_labels, ("slide_id", "grade")):
        grades.setdefault(r["slide_id"], []).append(parse_risk(r["grade"]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slide_id", "grade"])
        for slide_id in sorted(grades):
            w.writerow([slide_id, int(worst_grade(grades[slide_id]))])
    return path


# --------------------------------------------------------------------------
# classify
# --------------------------------------------------------------------------


def _read_csv(path, required=("slide_id",)):
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"{path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise InvalidInputError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def join_features_labels(feature_rows, label_rows):
    """Slide-level feature matrix aligned to the labels; mismatched ids raise JoinError."""
    slide_rows = [r for r in feature_rows if r.get("frag_id", "all") == "all"]
    feats = {}
    for r in slide_rows:
        if r["slide_id"] in feats:
            raise JoinError(f"duplicate feature row for slide {r['slide_id']}")
        try:
            feats[r["slide_id"]] = [float(r[name]) for name in FEATURE_NAMES]
        except (KeyError, ValueError) as exc:
            raise InvalidInputError(f"bad feature row for {r.get('slide_id')}: {exc}") from None
    labels = {}
    for r in label_rows:
        if r["slide_id"] in labels:
            raise JoinError(f"duplicate label for slide {r['slide_id']}")
        labels[r["slide_id"]] = int(parse_risk(r["grade"]))
    missing_labels = sorted(set(feats) - set(labels))
    missing_feats = sorted(set(labels) - set(feats))
    if missing_labels or missing_feats:
        parts = []
        if missing_feats:
            parts.append(f"labels without features: {', '.join(missing_feats[:20])}")
        if missing_labels:
            parts.append(f"features without labels: {', '.join(missing_labels[:20])}")
        raise JoinError("slide ids do not align; " + "; ".join(parts))
    ids = sorted(labels)
    return ids, np.array([feats[i] for i in ids]), np.array([labels[i] for i in ids])


def cmd_classify(args):
    ids, X, y = join_features_labels(_read_csv(args.features, ("slide_id",) + FEATURE_NAMES),
                                    _read_csv(args.labels, ("slide_id", "grade")))
    if len(ids) < args.folds:
        raise InvalidInputError(f"{len(ids)} slides cannot be split into {args.folds} folds")
    result = stratified_kfold_cv(X, y, n_folds=args.folds, n_trees=args.trees, seed=args.seed)
    out = make_out_dir(args.out)
    report = result.to_dict()
    report["auc_std_meaning"] = "standard deviation across folds"
    report["predictions"] = [
        {"slide_id": s, "label": int(t), "pred": int(p), "fold": int(f)}
        for s, t, p, f in zip(ids, result.labels, result.pred, result.folds)
    ]
    write_json(report, out / "cv_report.json")
    summary = result.summary() + "\n"
    (out / "summary.txt").write_text(summary)
    # one more forest on every slide, for scoring new cases
    save_model(make_risk_pipeline(args.trees, args.seed).fit(X, y), out / "model.json")
    write_manifest(out, "classify", args, {"seed": args.seed, "tree_seed": "seed + tree index"},
                   {"features": args.features, "labels": args.labels},
                   [out / "cv_report.json", out / "summary.txt", out / "model.json"])
    print(summary, end="")
    return 0


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def _read_labels(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"{path} does not exist")
    if path.suffix == ".pgm":
        return read_pgm(path)
    if path.suffix == ".tns":
        return read_tensor(path)
    tokens = [t for t in re.split(r"[\s,]+", path.read_text()) if t]
    try:
        return np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError:
        raise InvalidInputError(f"{path}: expected integers separated by commas or whitespace") from None


def cmd_metrics(args):
    pred, ref = _read_labels(args.pred), _read_labels(args.ref)
    if pred.shape != ref.shape:
        raise InvalidInputError(f"shape mismatch: pred {pred.shape} vs ref {ref.shape}")
    if args.metric == "kappa":
        report = {"metric": "kappa", "value": quadratic_weighted_kappa(ref.ravel(), pred.ravel(), args.categories)}
    else:
        if args.lumen_relabel:
            ref = relabel_lumen(read_tensor(args.lumen_relabel), ref)
        fn = dice_scores if args.metric == "dice" else pixel_f1
        report = {"metric": args.metric, **fn(pred, ref, args.classes, args.absent_as_zero).to_dict()}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _rate(text):
    v = float(text)
    if not 0.0 <= v <= 0.5:
        raise argparse.ArgumentTypeError("rate must lie in [0, 0.5]")
    return v


def _add_schedule(p):
    g = p.add_argument_group("training schedule")
    g.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    g.add_argument("--plateau-factor", type=float, default=0.5)
    g.add_argument("--plateau-patience", type=int, default=20, help="epochs without Dice gain before lr drops")
    g.add_argument("--early-stop", type=int, default=50, help="epochs without val-loss gain before stopping")
    g.add_argument("--max-epochs", type=int, default=200)
    g.add_argument("--iterations", type=int, default=50, help="minibatches per epoch")
    g.add_argument("--batch-size", type=int, default=5)
    g.add_argument("--hidden", type=int, default=32)
    g.add_argument("--no-augment", action="store_true", help="disable flips and 90 degree rotations")
    g = p.add_argument_group("loss parameters")
    g.add_argument("--alpha", type=float, default=0.25, help="focal alpha")
    g.add_argument("--gamma", type=float, default=2.0, help="focal gamma")
    g.add_argument("--t1", type=float, default=0.8, help="bi-tempered t1")
    g.add_argument("--t2", type=float, default=1.2, help="bi-tempered t2")


def _add_data(p):
    p.add_argument("--data", required=True, help="training tile dir, or a gen-synth root with train/ val/ test/")
    p.add_argument("--val", help="validation tile dir")
    p.add_argument("--classes", type=int, default=None, help="number of classes (default: from the masks)")
    p.add_argument("--noise", type=_rate, default=0.0, help="label-noise rate applied to training masks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="segrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write synthetic tiles and/or a planted slide cohort")
    p.add_argument("--tiles", type=int, default=0, help="training tiles")
    p.add_argument("--val-tiles", type=int, default=0)
    p.add_argument("--test-tiles", type=int, default=0)
    p.add_argument("--classes", type=int, default=N_TISSUE_CLASSES, help="uniform mix over the first N classes")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--appearance-noise", type=float, default=0.05)
    p.add_argument("--cohort", type=int, default=0, help="number of slides")
    p.add_argument("--max-fragments", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train the pixel scorer with one loss")
    p.add_argument("--loss", choices=LOSS_KINDS, default="cc")
    _add_data(p)
    _add_schedule(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare-losses", help="train every loss and tabulate Dice")
    _add_data(p)
    p.add_argument("--test", help="held-out tile dir (default: test/ under --data, else the val tiles)")
    p.add_argument("--losses", default=",".join(LOSS_KINDS), help="comma-separated subset")
    _add_schedule(p)
    p.set_defaults(func=cmd_compare_losses)

    p = sub.add_parser("features", help="slide and fragment feature vectors from label maps")
    p.add_argument("--segmaps", required=True)
    p.add_argument("--pixel-area", type=float, default=1.0, help="square micrometres per pixel")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    p.add_argument("--min-area", type=float, default=30.0, help="smallest kept tumour cluster, square micrometres")
    p.add_argument("--fragment-min-pixels", type=int, default=1000)
    p.add_argument("--fragment-labels", help="CSV slide_id,frag_id,grade; writes worst-grade slide_labels.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("classify", help="cross-validated random-forest risk classification")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--trees", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("metrics", help="Dice, pixel F1 or quadratic kappa for paired files")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metric", choices=("dice", "f1", "kappa"), default="dice")
    p.add_argument("--classes", type=int, default=N_TISSUE_CLASSES)
    p.add_argument("--categories", type=int, default=4, help="ordinal categories for kappa")
    p.add_argument("--absent-as-zero", action="store_true", help="score absent classes 0 (per-centre mode)")
    p.add_argument("--lumen-relabel", metavar="RGB_TNS", help="relabel bright reference pixels as background")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
