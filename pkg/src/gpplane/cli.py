"""``gpplane`` command line: phantom -> prep -> train -> detect -> eval -> rank.

Every run writes a JSON manifest next to its outputs with the resolved
options, input and output SHA-256 digests, seeds and library versions (no
timestamps, so reruns are byte-identical). ``--config FILE`` takes a JSON
object whose keys are option names of the subcommand (dashes or
underscores); its values override flags, unknown keys are an error.

Exit codes: 0 success, 1 bad input (arguments, files, formats), 2 internal
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import traceback
from pathlib import Path

import numpy as np

from gpplane import __version__, evalrank, kernels, methods
from gpplane.micronet.modelio import ModelFormatError, load_model, save_model
from gpplane.phantom import Jitter, PhantomSpec, generate_dataset, read_truth_csv, write_dataset, write_truth_csv
from gpplane.prep import clip_hu, crop_or_pad_xy
from gpplane.volgrid import VolumeFormatError, list_volumes, load_volume, read_sidecar, save_volume

DATA_DIR_ENV = "GPPLANE_DATA_DIR"
PRED_HEADER = ["volume_id", "gppi_pred", "method", "model_id"]


class InputError(Exception):
    """Bad user input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _default_data_dir() -> str | None:
    return os.environ.get(DATA_DIR_ENV) or None


def _require(value, name: str):
    if value is None:
        raise InputError(f"--{name.replace('_', '-')} is required (or set {DATA_DIR_ENV})")
    return value


def _volume_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"input directory {directory} does not exist")
    stems = list_volumes(directory)
    if not stems:
        raise InputError(f"no volumes (.json + .raw pairs) in {directory}")
    return stems


def _dir_inputs(directory) -> list[Path]:
    files = []
    for stem in _volume_files(directory):
        files += [stem.with_suffix(".json"), stem.with_suffix(".raw")]
    truth = Path(directory) / "truth.csv"
    if truth.exists():
        files.append(truth)
    return files


def _truths(input_dir, truth_csv=None) -> dict[str, tuple[int, str]]:
    """Truth from a CSV when given (or present as truth.csv), else from sidecars."""
    path = Path(truth_csv) if truth_csv else Path(input_dir) / "truth.csv"
    if path.exists():
        return read_truth_csv(path)
    if truth_csv:
        raise InputError(f"truth file {path} does not exist")
    out = {}
    for stem in _volume_files(input_dir):
        meta = read_sidecar(stem)
        if "gppi" in meta:
            out[meta["id"]] = (int(meta["gppi"]), "")
    return out


def write_manifest(path, command: str, config: dict, inputs, outputs, seeds: dict) -> Path:
    path = Path(path)
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in sorted(map(str, inputs))},
        "outputs": {str(p): sha256_file(p) for p in sorted(map(str, outputs))},
        "seeds": seeds,
        "versions": {
            "gpplane": __version__,
            "numpy": np.__version__,
            "python": f"{sys.version_info.major}.{sys.version_info.minor}",
            "kernels": kernels.BACKEND,
        },
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _config_dict(args) -> dict:
    skip = {"func", "config", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _apply_config(args, parser: argparse.ArgumentParser) -> None:
    if not getattr(args, "config", None):
        return
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"config file {args.config} does not exist") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError("config file must hold a JSON object")
    known = {a.dest for a in parser._actions} - {"help", "config"}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise InputError(f"unknown config key {key!r} for {args.command}")
        setattr(args, dest, value)


def _params(args) -> dict | None:
    if args.params is None:
        return None
    if isinstance(args.params, dict):
        return args.params
    try:
        value = json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise InputError(f"--params is not valid JSON: {exc}") from None
    if not isinstance(value, dict):
        raise InputError("--params must be a JSON object")
    return value


# subcommands


def cmd_phantom(args) -> int:
    out = Path(_require(args.out, "out"))
    out.mkdir(parents=True, exist_ok=True)
    base = PhantomSpec(noise_sigma=args.noise_sigma)
    items = generate_dataset(args.count, base, Jitter(gppi=args.gppi_jitter), args.seed)
    written = write_dataset(items, out)
    write_manifest(out / "manifest.json", "phantom", _config_dict(args), [], written, {"master_seed": args.seed})
    return 0


def cmd_prep(args) -> int:
    src = Path(_require(args.input, "input"))
    out = Path(_require(args.out, "out"))
    if out.resolve() == src.resolve():
        raise InputError("--out must differ from --input")
    out.mkdir(parents=True, exist_ok=True)
    inputs = _dir_inputs(src)
    written = []
    for stem in _volume_files(src):
        meta = read_sidecar(stem)
        vol = clip_hu(load_volume(stem), args.clip)
        if args.crop:
            vol = crop_or_pad_xy(vol, tuple(args.crop), fill=args.clip[0])
        written += save_volume(vol, out / stem.name, gppi=meta.get("gppi"))
    truth = src / "truth.csv"
    if truth.exists():
        shutil.copyfile(truth, out / "truth.csv")
        written.append(out / "truth.csv")
    write_manifest(out / "manifest.json", "prep", _config_dict(args), inputs, written, {})
    return 0


def _training_items(input_dir, truth_csv):
    truths = _truths(input_dir, truth_csv)
    items = []
    for stem in _volume_files(input_dir):
        vol = load_volume(stem)
        if vol.id not in truths:
            raise InputError(f"no truth for volume {vol.id}")
        gppi, study = truths[vol.id]
        items.append((vol, gppi, study))
    return items


def cmd_train(args) -> int:
    src = _require(args.input, "input")
    if args.method == "ensemble" and args.base is None:
        raise InputError("--method ensemble needs --base METHOD")
    base = args.base if args.method == "ensemble" else args.method
    items = _training_items(src, args.truth)
    params = _params(args)
    if args.method == "ensemble":
        folds = evalrank.kfold_split([(v.id, s) for v, _, s in items], args.folds, args.seed)
        by_id = {v.id: (v, g) for v, g, _ in items}
        bundles = [
            methods.train_method(base, [by_id[i] for i in folds.train_ids(f)], params, seed=args.seed * 1000 + f)
            for f in range(args.folds)
        ]
    else:
        bundles = [methods.train_method(base, [(v, g) for v, g, _ in items], params, seed=args.seed)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, methods.bundles_to_records(bundles))
    inputs = _dir_inputs(src) + ([Path(args.truth)] if args.truth else [])
    seeds = {"master_seed": args.seed, "folds": args.folds if args.method == "ensemble" else 1}
    write_manifest(Path(f"{out}.manifest.json"), "train", _config_dict(args), inputs, [out], seeds)
    return 0


def write_predictions(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRED_HEADER)
        for row in sorted(rows):
            w.writerow(row)


def read_predictions(path) -> list[tuple[str, int, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"volume_id", "gppi_pred"} <= set(reader.fieldnames):
            raise InputError(f"{path}: predictions need volume_id and gppi_pred columns")
        return [(r["volume_id"], int(r["gppi_pred"]), r.get("method") or Path(path).stem) for r in reader]


def cmd_detect(args) -> int:
    src = _require(args.input, "input")
    model = Path(args.model)
    bundles = methods.records_to_bundles(load_model(model))
    stored = bundles[0].method
    if args.method == "ensemble":
        label = f"ensemble:{stored}"
    else:
        if args.method != stored:
            raise InputError(f"model {model} was trained for {stored!r}, not {args.method!r}")
        if len(bundles) > 1:
            raise InputError(f"model {model} holds {len(bundles)} fold models; use --method ensemble")
        label = stored
    model_id = sha256_file(model)[:12]
    rows = []
    for stem in _volume_files(src):
        vol = load_volume(stem)
        det = methods.ensemble_detect(bundles, vol) if args.method == "ensemble" else methods.detect_volume(bundles[0], vol)
        rows.append((vol.id, det.gppi_pred, label, model_id))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(rows, out)
    write_manifest(Path(f"{out}.manifest.json"), "detect", _config_dict(args), _dir_inputs(src) + [model], [out], {})
    return 0


def cmd_eval(args) -> int:
    truths = {vid: g for vid, (g, _) in read_truth_csv(args.truth).items()}
    grouped: dict[str, list[tuple[str, int]]] = {}
    for path in args.pred:
        for vid, gppi, method in read_predictions(path):
            grouped.setdefault(method, []).append((vid, gppi))
    if not grouped:
        raise InputError("no prediction rows")
    reports = [
        evalrank.evaluate_predictions(evalrank.pairs_to_dict(rows, f"predictions of {m}"), truths, m)
        for m, rows in sorted(grouped.items())
    ]
    out = Path(args.out) if args.out else Path(args.pred[0]).parent
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "report.csv", out / "summary.csv", out / "leaderboard.txt"]
    evalrank.write_report_csv(reports, files[0])
    evalrank.write_summary_csv(reports, files[1])
    evalrank.write_leaderboard(evalrank.rank_teams(reports), files[2])
    write_manifest(out / "manifest.json", "eval", _config_dict(args), [*args.pred, args.truth], files, {})
    return 0


def cmd_rank(args) -> int:
    rows = []
    for path in args.summary:
        rows += evalrank.read_summary_csv(path)
    if not rows:
        raise InputError("no summary rows")
    seen = [r.method for r in rows]
    if len(set(seen)) != len(seen):
        raise InputError("a method appears in more than one summary row")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evalrank.write_leaderboard(evalrank.rank_summaries(rows), out)
    write_manifest(Path(f"{out}.manifest.json"), "rank", _config_dict(args), args.summary, [out], {})
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="gpplane", description="Growth plate plane detection toolkit.")
    parser.add_argument("--version", action="version", version=f"gpplane {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    data_dir = _default_data_dir()
    subs = {}

    p = sub.add_parser("phantom", help="generate synthetic phantom volumes and truth.csv")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=data_dir)
    p.add_argument("--gppi-jitter", type=int, default=15, help="half-width of the uniform GPPI jitter")
    p.add_argument("--noise-sigma", type=float, default=80.0, help="Gaussian noise in HU")
    p.set_defaults(func=cmd_phantom)
    subs["phantom"] = p

    p = sub.add_parser("prep", help="clip HU and crop/pad xy of every volume in a directory")
    p.add_argument("--input", default=data_dir)
    p.add_argument("--out")
    p.add_argument("--clip", type=float, nargs=2, default=[-1000.0, 3000.0], metavar=("LO", "HI"))
    p.add_argument("--crop", type=int, nargs=2, metavar=("TX", "TY"))
    p.set_defaults(func=cmd_prep)
    subs["prep"] = p

    all_methods = [*methods.METHODS, "ensemble"]
    p = sub.add_parser("train", help="train a detection method (or k fold models for ensemble)")
    p.add_argument("--method", required=True, choices=all_methods)
    p.add_argument("--base", choices=methods.METHODS, help="underlying method for ensemble")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--input", default=data_dir)
    p.add_argument("--truth", help="truth CSV (default: INPUT/truth.csv, then sidecar gppi)")
    p.add_argument("--out", required=True, help="model file (.gpm)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="JSON object of method parameter overrides")
    p.set_defaults(func=cmd_train)
    subs["train"] = p

    p = sub.add_parser("detect", help="predict the GPPI of every volume in a directory")
    p.add_argument("--method", required=True, choices=all_methods)
    p.add_argument("--model", required=True)
    p.add_argument("--input", default=data_dir)
    p.add_argument("--out", required=True, help="predictions CSV")
    p.set_defaults(func=cmd_detect)
    subs["detect"] = p

    p = sub.add_parser("eval", help="score predictions against truth")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="output directory (default: next to the first predictions file)")
    p.set_defaults(func=cmd_eval)
    subs["eval"] = p

    p = sub.add_parser("rank", help="rank methods from one or more summary CSVs")
    p.add_argument("--summary", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)
    subs["rank"] = p

    for p in subs.values():
        p.add_argument("--config", help="JSON file of option values (overrides flags)")
    return parser, subs


def run_command(argv) -> int:
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args, subs[args.command])
        return args.func(args)
    except (InputError, FileNotFoundError, VolumeFormatError, ModelFormatError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception:
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
