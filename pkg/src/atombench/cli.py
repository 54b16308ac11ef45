"""``atombench`` command line: phantom, generate, train, predict, baseline, eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every subcommand prints its resolved configuration as one JSON line before
doing any work.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields
from pathlib import Path


from .baseline import EasyPoseTable, HardSearchGrid, exhaustive_search_easy, exhaustive_search_hard, pose_to_prediction
from .blockgrid import DEFAULT_GRID
from .dataset import (
    SPLITS,
    DatasetConfig,
    DatasetError,
    generate_dataset,
    load_dataset_volumes,
    read_dataset,
    write_dataset,
)
from .evalreport import EvalError, high_error_hits, low_error_hits, multi_seed_report, write_hits_csv
from .predictions import Predictions, PredictionsError, read_predictions, write_predictions
from .regisnet.autodiff import NumericError
from .regisnet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .regisnet.model import ModelConfig
from .regisnet.train import DivergenceError, TrainingError, predict_batch, train
from .slicing import PoseExhaustedError
from .volume import PhantomSpec, VolumeError, downsample, generate_phantom, list_volumes, load_volume, normalize, save_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _triple(text: str, cast=int, name="value"):
    try:
        parts = [cast(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"--{name} expects three comma-separated numbers, got {text!r}") from None
    if len(parts) == 1 and cast is int:
        parts = parts * 3
    if len(parts) != 3:
        raise UsageError(f"--{name} expects three comma-separated numbers, got {text!r}")
    return tuple(parts)


def threads() -> int:
    raw = os.environ.get("ATOM_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ATOM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"ATOM_THREADS must be a positive integer, got {raw!r}")
    return n


def _announce(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, **resolved}, sort_keys=True, default=str), flush=True)


# subcommands -------------------------------------------------------------


def cmd_phantom(args) -> int:
    dims = _triple(args.dims, int, "dims")
    out = Path(args.out)
    resolved = {
        "kind": args.kind,
        "dims": list(dims),
        "seed": args.seed,
        "count": args.count,
        "component_count": args.component_count,
        "out": str(out),
    }
    _announce("phantom", resolved)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = PhantomSpec(args.kind, dims, args.seed + i, args.component_count)
        save_volume(generate_phantom(spec), out / f"{spec.kind.value}_{spec.seed:06d}")
    return EXIT_OK


def cmd_generate(args) -> int:
    ratios = _triple(args.ratios, float, "ratios")
    cfg = DatasetConfig(
        mode=args.mode,
        slices_per_volume=args.slices_per_volume,
        split=args.split,
        ratios=ratios,
        master_seed=args.seed,
        rule=args.rule,
    )
    workers = threads()
    stems = list_volumes(args.volumes)
    resolved = {
        "volumes": str(args.volumes),
        "volume_files": [s.name for s in stems],
        "mode": cfg.mode,
        "split": cfg.split,
        "ratios": list(cfg.ratios),
        "slices_per_volume": cfg.slices_per_volume,
        "seed": cfg.master_seed,
        "rule": cfg.rule,
        "workers": workers,
        "out": str(args.out),
    }
    _announce("generate", resolved)
    if not stems:
        raise DatasetError(f"no atomvol files in {args.volumes}")
    side = (DEFAULT_GRID.volume_side,) * 3
    volumes = []
    for stem in stems:
        vol = load_volume(stem)
        if vol.dims != side:
            vol = downsample(vol, side)
        if not vol.normalized:
            vol = normalize(vol)
        volumes.append(vol)
    ds = generate_dataset(volumes, cfg, workers=workers)
    ds.manifest["volume_files"] = [s.name for s in stems]
    write_dataset(ds, args.out, volumes=dict(enumerate(volumes)))
    print(json.dumps({"counts": ds.manifest["counts"]}))
    return EXIT_OK


def _load_model_config(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing model config file: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{p}: invalid JSON ({exc})") from None
    known = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise DatasetError(f"{p}: unknown model config keys {unknown}")
    try:
        return ModelConfig(**data)
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{p}: {exc}") from None


def cmd_train(args) -> int:
    cfg = _load_model_config(args.config)
    if args.epochs is not None:
        cfg = ModelConfig(**{**cfg.to_dict(), "epochs": args.epochs})
    resolved = {"data": str(args.data), "config": cfg.to_dict(), "seed": args.seed, "out": str(args.out)}
    _announce("train", resolved)
    ds = read_dataset(args.data)
    if not ds.train:
        raise TrainingError(f"train split of {args.data} is empty")
    volumes = load_dataset_volumes(args.data, ds.manifest)
    result = train(ds.train, volumes, cfg, seed=args.seed)
    save_checkpoint(args.out, cfg, result.coarse, result.fine, extra={"seed": args.seed, "data": str(args.data)})
    curve_path = Path(str(args.out) + ".loss.csv")
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "coarse_loss", "fine_loss"])
        for epoch, lc, lf in result.loss_curve:
            w.writerow([epoch, repr(lc), repr(lf)])
    print(json.dumps({"final_loss": list(result.loss_curve[-1][1:]) if result.loss_curve else None}))
    return EXIT_OK


def _split_samples(ds, split: str, data):
    samples = ds.split(split)
    if not samples:
        raise DatasetError(f"{split} split of {data} is empty")
    return samples


def cmd_predict(args) -> int:
    resolved = {"data": str(args.data), "ckpt": str(args.ckpt), "k": args.k, "split": args.split, "out": str(args.out)}
    _announce("predict", resolved)
    cfg, coarse, fine, _ = load_checkpoint(args.ckpt)
    ds = read_dataset(args.data)
    samples = _split_samples(ds, args.split, args.data)
    volumes = load_dataset_volumes(args.data, ds.manifest)
    c, f = predict_batch(samples, volumes, coarse, fine, cfg, k=args.k)
    write_predictions(Predictions(c, f, args.k, {"split": args.split, "source": "model"}), args.out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    ds = read_dataset(args.data)
    mode = ds.manifest.get("mode", "easy")
    resolved = {
        "data": str(args.data),
        "volumes": str(args.volumes) if args.volumes else None,
        "k": args.k,
        "split": args.split,
        "mode": mode,
        "center_step": args.center_step,
        "out": str(args.out),
    }
    _announce("baseline", resolved)
    samples = _split_samples(ds, args.split, args.data)
    volumes = load_dataset_volumes(args.data, ds.manifest, args.volumes)
    tables = {}
    items = []
    for s in samples:
        vol = volumes[s.volume_id]
        if mode == "easy":
            if s.volume_id not in tables:
                tables[s.volume_id] = EasyPoseTable(vol)
            pose = exhaustive_search_easy(vol, s.pixels, tables[s.volume_id])[0].pose
        else:
            pose = exhaustive_search_hard(vol, s.pixels, HardSearchGrid(center_step=args.center_step)).pose
        items.append(pose_to_prediction(pose, DEFAULT_GRID, args.k))
    write_predictions(Predictions.from_lists(items, args.k, {"split": args.split, "source": "baseline"}), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    paths = [p for p in args.preds.split(",") if p]
    if not paths:
        raise UsageError("--preds needs at least one file")
    runs = args.runs if args.runs is not None else len(paths)
    if runs != len(paths):
        raise UsageError(f"--runs {runs} does not match the {len(paths)} file(s) given to --preds")
    resolved = {
        "data": str(args.data),
        "preds": paths,
        "runs": runs,
        "k": args.k,
        "split": args.split,
        "match": args.match,
        "out": str(args.out),
    }
    _announce("eval", resolved)
    ds = read_dataset(args.data)
    samples = _split_samples(ds, args.split, args.data)
    results, hits = [], []
    for path in paths:
        preds = read_predictions(path)
        if preds.meta.get("split", args.split) != args.split:
            raise EvalError(f"{path} holds {preds.meta.get('split')} predictions, not {args.split}")
        if len(preds) != len(samples):
            raise EvalError(f"{path} has {len(preds)} rows, {args.split} split has {len(samples)} samples")
        hi = high_error_hits(preds, samples, args.k, args.match)
        lo = low_error_hits(preds, samples, args.k)
        hits.append((hi, lo))
        results.append((100.0 * hi.mean(), 100.0 * lo.mean()))
    report = multi_seed_report(
        results,
        k=args.k,
        counts={name: len(ds.split(name)) for name in SPLITS},
        mode=ds.manifest.get("mode"),
        split=args.split,
    )
    Path(args.out).write_text(report.to_json() + "\n")
    if args.csv:
        write_hits_csv(args.csv, hits)
    print(report.to_table())
    return EXIT_OK


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atombench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="write synthetic atomvol volumes")
    p.add_argument("--kind", required=True, choices=["blobs", "smooth-noise", "shells"])
    p.add_argument("--dims", default="20,20,20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--component-count", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("generate", help="synthesize a slice dataset from volumes")
    p.add_argument("--volumes", required=True)
    p.add_argument("--mode", choices=["easy", "hard"], default="easy")
    p.add_argument("--split", choices=["pos", "vol", "none"], default="none")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--slices-per-volume", type=int, default=152)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rule", choices=["corners", "all_points"], default="corners")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the two-stage model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rank blocks with a trained checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--split", choices=list(SPLITS), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="exhaustive SSD search predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--volumes", default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--split", choices=list(SPLITS), default="test")
    p.add_argument("--center-step", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="score predictions (k-5 accuracy, mean and std over runs)")
    p.add_argument("--data", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--split", choices=list(SPLITS), default="test")
    p.add_argument("--match", choices=["any", "all"], default="any")
    p.add_argument("--csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "k", 1) is not None and not 1 <= getattr(args, "k", 1) <= DEFAULT_GRID.n_coarse:
            raise UsageError(f"--k must be in [1, {DEFAULT_GRID.n_coarse}]")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        OSError,
        VolumeError,
        DatasetError,
        CheckpointError,
        PredictionsError,
        EvalError,
        TrainingError,
        PoseExhaustedError,
        ValueError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
