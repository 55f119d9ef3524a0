"""Command-line entry point: ``arcnet {phantom,train,eval,infer,render}``.

Every command accepts ``--config`` (a JSON file whose keys mirror the long
flag names) plus ``--seed`` and ``--variant``. Flags given on the command line
override the config file.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from arcnet import data, metrics, training
from arcnet.model import VARIANTS, canonical_variant
from arcnet.phantom import PhantomConfig, generate_cohort, generate_phantom

GPU_REFERENCE = "reference point: about 6 s for a 500-frame pullback on the original GPU setup"
VARIANT_CHOICES = ("full", "one-way", "single", "polar", *VARIANTS)

MILD_RGB = (255, 210, 0)
SEVERE_RGB = (40, 110, 255)
SCAFFOLD_RGB = (110, 110, 110)


class CliError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return cfg


def _merge(config, args, names):
    """Config-file values, overridden by any flag the user actually passed."""
    merged = dict(config)
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return merged


def _write_labels(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(np.asarray(rows).tolist())


def _read_label_rows(path):
    try:
        with open(path, newline="") as fh:
            return [[int(v) for v in row] for row in csv.reader(fh) if row]
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read labels {path}: {exc}") from None


# ---------------------------------------------------------------- phantom

PHANTOM_FLAGS = ("n_frames", "frame_size", "n_alines", "seed", "patients", "pullbacks_per_patient")


def cmd_phantom(args):
    cfg = _merge(_load_config(args.config), args, PHANTOM_FLAGS)
    patients = int(cfg.pop("patients", 1))
    per_patient = int(cfg.pop("pullbacks_per_patient", 1))
    phantom = PhantomConfig.from_dict(cfg)
    if patients * per_patient == 1:
        sets = [generate_phantom(phantom)]
    else:
        sets = generate_cohort(phantom, patients, per_patient, seed=phantom.seed)
    try:
        manifest = data.save_dataset(sets, args.out)
    except OSError as exc:
        raise CliError(f"cannot write dataset to {args.out}: {exc}") from None
    n = sum(len(ds) for ds in sets)
    print(f"wrote {len(sets)} pullback(s), {n} frames -> {manifest}")
    return 0


# ---------------------------------------------------------------- train

TRAIN_FLAGS = ("lr0", "plateau_factor", "patience", "epochs", "batches_per_epoch",
               "batch_size", "tv_weight", "seed", "variant")


def _model_size(train_cfg):
    return train_cfg.model_config().height


def cmd_train(args):
    raw = _merge(_load_config(args.config), args, TRAIN_FLAGS)
    split_seed = raw.pop("split_seed", 0)
    cfg = training.TrainConfig.from_dict(raw)
    size = _model_size(cfg)
    sets = data.load_dataset(args.manifest, size=size)
    if args.val_manifest:
        train_sets, val_sets = sets, data.load_dataset(args.val_manifest, size=size)
    else:
        train_sets, val_sets, test_sets = data.split_by_patient(sets, seed=split_seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "split.json").write_text(json.dumps({
            name: [ds.pullback_id for ds in part]
            for name, part in (("train", train_sets), ("val", val_sets), ("test", test_sets))
        }, indent=1))
    if not train_sets:
        raise CliError("no training pullbacks after the patient split")
    training.train(train_sets, val_sets, cfg, out_dir=args.out, resume=args.resume,
                   log=lambda msg: print(msg, flush=True))
    print(f"best checkpoint -> {Path(args.out) / 'best.pt'}")
    return 0


# ---------------------------------------------------------------- infer / eval


def _selected(sets, ids):
    if not ids:
        return sets
    chosen = [ds for ds in sets if ds.pullback_id in ids]
    missing = set(ids) - {ds.pullback_id for ds in chosen}
    if missing:
        raise CliError(f"pullback(s) not in manifest: {sorted(missing)}")
    return chosen


def _load_model(path, variant=None):
    try:
        model = training.load_checkpoint(path)[0]
    except (OSError, KeyError, RuntimeError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}") from None
    if variant is not None and canonical_variant(variant) != model.config.variant:
        raise CliError(f"checkpoint holds variant {model.config.variant!r}, not {canonical_variant(variant)!r}")
    return model


def cmd_infer(args):
    model = _load_model(args.checkpoint, args.variant)
    sets = _selected(data.load_dataset(args.manifest, size=model.config.height), args.pullback)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timing = []
    for ds in sets:
        result = training.infer(model, ds, batch_size=args.batch_size)
        np.save(out / f"{ds.pullback_id}.logits.npy", result.logits)
        _write_labels(out / f"{ds.pullback_id}.labels.csv", result.labels)
        timing.append({"pullback": ds.pullback_id, "frames": result.n_frames,
                       "seconds": result.seconds, "ms_per_frame": result.ms_per_frame})
        print(f"{ds.pullback_id}: {result.n_frames} frames in {result.seconds:.2f} s "
              f"({result.ms_per_frame:.1f} ms/frame)")
    (out / "timing.json").write_text(json.dumps(timing, indent=1))
    print(GPU_REFERENCE)
    return 0


def cmd_eval(args):
    if (args.checkpoint is None) == (args.predictions is None):
        raise CliError("give exactly one of --checkpoint or --predictions")
    model = _load_model(args.checkpoint, args.variant) if args.checkpoint else None
    size = model.config.height if model else args.size
    sets = _selected(data.load_dataset(args.manifest, size=size), args.pullback)
    pairs = []
    for ds in sets:
        if model is not None:
            predicted = training.infer(model, ds).labels
        else:
            predicted = _read_label_rows(Path(args.predictions) / f"{ds.pullback_id}.labels.csv")
            if len(predicted) != len(ds):
                raise CliError(f"{ds.pullback_id}: {len(predicted)} predicted rows for {len(ds)} frames")
        pairs.extend(zip(predicted, ds.labels))
    report = metrics.evaluate(pairs, min_run=args.min_run)
    report.save(args.out)
    for key, value in report.table_row().items():
        print(f"{key:26s} {'n/a' if value is None else f'{value:.4f}'}")
    for warning in report.warnings:
        print(f"warning: {warning}")
    print(f"report -> {args.out}")
    return 0


# ---------------------------------------------------------------- render


def overlay(frame, reference, prediction=None):
    """RGB overlay: outer ring = reference, inner ring = prediction.

    A-line ``j`` of ``n`` is drawn over the angles nearest to ``2*pi*j/n``,
    the ray sampled by polar column ``j``.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[0] != frame.shape[1]:
        raise CliError(f"render expects a square grayscale frame, got shape {frame.shape}")
    reference = np.asarray(reference, dtype=np.int64)
    n = reference.size
    if prediction is not None and np.asarray(prediction).size != n:
        raise CliError("reference and prediction lengths differ")
    size = frame.shape[0]
    rgb = np.repeat(np.clip(frame, 0, 1)[..., None] * 255, 3, axis=2)
    c = (size - 1) / 2
    r_max = size / 2 - 1
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(yy - c, xx - c) / r_max
    phi = np.mod(np.arctan2(yy - c, xx - c), 2 * np.pi)
    col = np.floor(phi * n / (2 * np.pi) + 0.5).astype(np.int64) % n
    rings = [((0.93, 0.99), reference), ((0.86, 0.92), prediction)]
    for (lo, hi), labels in rings:
        for edge in (lo, hi):
            rgb[np.abs(r - edge) * r_max < 0.5] = SCAFFOLD_RGB
        if labels is None:
            continue
        band = (r > lo) & (r < hi)
        cls = np.asarray(labels, dtype=np.int64)[col]
        rgb[band & (cls == 1)] = MILD_RGB
        rgb[band & (cls == 2)] = SEVERE_RGB
    return rgb.astype(np.uint8)


def cmd_render(args):
    from PIL import Image

    try:
        with Image.open(args.frame) as im:
            frame = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise CliError(f"cannot read frame {args.frame}: {exc}") from None

    def row(path):
        rows = _read_label_rows(path)
        if not 0 <= args.row < len(rows):
            raise CliError(f"{path} has no row {args.row}")
        return rows[args.row]

    reference = row(args.reference)
    prediction = row(args.prediction) if args.prediction else None
    Image.fromarray(overlay(frame, reference, prediction)).save(args.out)
    print(f"overlay -> {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with defaults for this command")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", choices=VARIANT_CHOICES)

    parser = argparse.ArgumentParser(prog="arcnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-frames", dest="n_frames", type=int)
    p.add_argument("--frame-size", dest="frame_size", type=int)
    p.add_argument("--n-alines", dest="n_alines", type=int)
    p.add_argument("--patients", type=int)
    p.add_argument("--pullbacks-per-patient", dest="pullbacks_per_patient", type=int)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", dest="val_manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    for flag, kind in (("lr0", float), ("plateau-factor", float), ("patience", int),
                       ("epochs", int), ("batches-per-epoch", int), ("batch-size", int),
                       ("tv-weight", float)):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=kind)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score predictions against references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of <pullback>.labels.csv files")
    p.add_argument("--pullback", nargs="*")
    p.add_argument("--size", type=int, default=352, help="frame size when scoring stored predictions")
    p.add_argument("--min-run", dest="min_run", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="predict A-line labels for pullbacks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pullback", nargs="*")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("render", parents=[common], help="draw annotation rings on a frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--reference", required=True, help="label CSV")
    p.add_argument("--prediction", help="label CSV")
    p.add_argument("--row", type=int, default=0, help="frame index within the label CSVs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError) as exc:
        print(f"arcnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
