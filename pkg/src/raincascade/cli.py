"""Command-line front end: synth | train | derain | eval | gradcheck (+ scenes).

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as config_mod
from .derainnet import derain_image, init_model
from .gradcheck import DEFAULT_SEEDS, TOLERANCE, run_gradcheck
from .imageio import (
    CheckpointError,
    ImageFormatError,
    MetricRow,
    decode_pnm,
    load_checkpoint,
    read_image,
    save_checkpoint,
    write_image,
    write_loss_history,
    write_metric_table,
)
from .metrics import SsimParams, psnr, ssim
from .rainmodel import make_scene, synthesize
from .tensorcore import ContractViolation, Tensor
from .trainer import train

log = logging.getLogger("raincascade")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

MANIFEST = "manifest.json"
RESOLVED = "config.resolved.json"
CHECKPOINT = "model.drnc"
LOSS_CSV = "loss.csv"
IMAGE_SUFFIXES = (".ppm", ".pgm")
ROLES = ("rain", "clean", "derained", "r", "noise", "r_hat", "n_hat")
LAYER_ENCODING = {
    "r": "rain layer shown as clamp(2 * v) in [0, 1]",
    "noise": "noise layer shown as clamp(2 * v + 0.5) in [0, 1]",
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_CONFIG)


# ---------------------------------------------------------------------------
# file helpers

def split_name(path: Path) -> tuple[str, Optional[str]]:
    """``scene.rain.ppm`` -> ("scene", "rain"); ``scene.ppm`` -> ("scene", None)."""
    stem = path.name[: -len(path.suffix)]
    head, _, tail = stem.rpartition(".")
    return (head, tail) if head and tail in ROLES else (stem, None)


def list_images(directory, role: Optional[str] = None) -> dict[str, Path]:
    """Map image name -> path for the files of one role in ``directory``.

    Files tagged with ``role`` are used when any exist, otherwise untagged
    files; images tagged with other roles are ignored.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError(f"not a directory: {directory}", EXIT_DATA)
    by_tag: dict[Optional[str], dict[str, Path]] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES and path.is_file():
            name, tag = split_name(path)
            bucket = by_tag.setdefault(tag, {})
            if name in bucket:
                raise CliError(f"{directory}: two images map to name {name!r}", EXIT_DATA)
            bucket[name] = path
    if role is None:
        merged: dict[str, Path] = {}
        for bucket in by_tag.values():
            for name, path in bucket.items():
                if name in merged:
                    raise CliError(f"{directory}: two images map to name {name!r}", EXIT_DATA)
                merged[name] = path
        return dict(sorted(merged.items()))
    return by_tag.get(role) or by_tag.get(None, {})


def _read_rgb(path: Path) -> tuple[Tensor, int]:
    try:
        img = read_image(path)
    except (ImageFormatError, OSError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_DATA) from None
    channels = img.shape[1]
    if channels == 1:
        img = Tensor(np.repeat(img.data, 3, axis=1))
    return img, channels


def _write_as(data: np.ndarray, channels: int, path: Path) -> None:
    """Write a (3, H, W) array, collapsing to gray when the source was gray."""
    if channels == 1:
        data = data.mean(axis=0, keepdims=True)
    write_image(data[None], path)


def _echo_config(cfg: dict, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / RESOLVED).write_text(config_mod.dumps(cfg), encoding="utf-8")


def _require(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise CliError(f"missing required setting --{key.replace('_', '-')}", EXIT_CONFIG)
    return cfg[key]


# ---------------------------------------------------------------------------
# commands

def cmd_synth(cfg: dict) -> int:
    clean_dir = _require(cfg, "clean_dir")
    out = Path(_require(cfg, "out"))
    images = list_images(clean_dir, role="clean")
    if not images:
        raise CliError(f"no .ppm/.pgm images in {clean_dir}", EXIT_DATA)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    entries, failures = [], []
    for index, (name, path) in enumerate(images.items()):
        seed = int(cfg["synth_seed"]) + index
        try:
            x, channels = _read_rgb(path)
        except CliError as exc:
            failures.append(str(exc))
            continue
        pair = synthesize(x, config_mod.rain_config(cfg, seed=seed))
        entry = {"name": name, "seed": seed, "rain": f"{name}.rain.ppm", "clean": f"{name}.clean.ppm"}
        # gray sources keep one plane so the noise level is not averaged down
        keep = slice(0, channels)
        write_image(pair.y.data[:, keep], out / entry["rain"])
        write_image(pair.x.data[:, keep], out / entry["clean"])
        if cfg["emit_layers"]:
            entry["r"], entry["noise"] = f"{name}.r.ppm", f"{name}.noise.ppm"
            write_image(pair.r.data[:, keep] * 2.0, out / entry["r"])
            write_image(pair.noise.data[:, keep] * 2.0 + 0.5, out / entry["noise"])
        entries.append(entry)
    manifest = {"version": 1, "pairs": entries}
    if cfg["emit_layers"]:
        manifest["layer_encoding"] = LAYER_ENCODING
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for msg in failures:
        print(msg, file=sys.stderr)
    print(f"synthesized {len(entries)} pair(s) into {out}")
    return EXIT_DATA if failures else EXIT_OK


def _load_pairs(pairs_dir: Path) -> list[tuple[np.ndarray, np.ndarray]]:
    manifest_path = pairs_dir / MANIFEST
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        entries = manifest["pairs"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot read pairs manifest {manifest_path}: {exc}", EXIT_DATA) from None
    if not entries:
        raise CliError(f"{manifest_path} lists no pairs", EXIT_DATA)
    pairs = []
    for entry in entries:
        y, _ = _read_rgb(pairs_dir / entry["rain"])
        x, _ = _read_rgb(pairs_dir / entry["clean"])
        if y.shape != x.shape:
            raise CliError(f"pair {entry['name']}: rain {y.shape} and clean {x.shape} differ", EXIT_DATA)
        pairs.append((y.data[0], x.data[0]))
    return pairs


def cmd_train(cfg: dict) -> int:
    pairs_dir = Path(_require(cfg, "pairs_dir"))
    out = Path(_require(cfg, "out"))
    rain_cfg, noise_cfg = config_mod.branch_configs(cfg)
    train_cfg = config_mod.train_config(cfg)
    pairs = _load_pairs(pairs_dir)
    smallest = min(min(y.shape[-2:]) for y, _ in pairs)
    if smallest < train_cfg.patch_size:
        raise CliError(f"patch_size {train_cfg.patch_size} exceeds smallest training image extent {smallest}",
                       EXIT_DATA)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    model = init_model(rain_cfg, noise_cfg, seed=int(cfg["model_seed"]))
    model.train_seed = train_cfg.seed
    interval = int(cfg["checkpoint_interval"])

    def on_epoch(epoch, loss, m):
        log.info("epoch %d/%d loss %.6f", epoch, train_cfg.epochs, loss)
        if interval > 0 and epoch % interval == 0:
            save_checkpoint(m, out / f"model.epoch{epoch:04d}.drnc")

    model, history = train(pairs, model, train_cfg, on_epoch=on_epoch)
    save_checkpoint(model, out / CHECKPOINT)
    write_loss_history(history.epoch_losses, out / LOSS_CSV)
    final = f"{history.epoch_losses[-1]:.6f}" if history.epoch_losses else "n/a"
    print(f"trained {len(history)} epoch(s); final loss {final}; checkpoint {out / CHECKPOINT}")
    return EXIT_OK


def cmd_derain(cfg: dict) -> int:
    checkpoint = _require(cfg, "checkpoint")
    in_dir = _require(cfg, "in_dir")
    out = Path(_require(cfg, "out"))
    try:
        model = load_checkpoint(checkpoint)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {checkpoint}: {exc.strerror}", EXIT_DATA) from None
    except CheckpointError as exc:
        raise CliError(f"{checkpoint}: {exc}", EXIT_DATA) from None
    images = list_images(in_dir, role="rain")
    if not images:
        raise CliError(f"no .ppm/.pgm images in {in_dir}", EXIT_DATA)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out)
    failures = []
    for name, path in images.items():
        try:
            y, channels = _read_rgb(path)
        except CliError as exc:
            failures.append(str(exc))
            continue
        r_hat, n_hat, x_hat = derain_image(model, y.data[0])
        _write_as(x_hat, channels, out / f"{name}.derained.ppm")
        if cfg["emit_layers"]:
            _write_as(r_hat * 2.0, channels, out / f"{name}.r_hat.ppm")
            _write_as(n_hat * 2.0 + 0.5, channels, out / f"{name}.n_hat.ppm")
    for msg in failures:
        print(msg, file=sys.stderr)
    print(f"derained {len(images) - len(failures)} image(s) into {out}")
    return EXIT_DATA if failures else EXIT_OK


def _pixels(path: Path) -> np.ndarray:
    try:
        return decode_pnm(path.read_bytes()).astype(np.float64)
    except (ImageFormatError, OSError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_DATA) from None


def cmd_eval(cfg: dict) -> int:
    dirs = {key: list_images(_require(cfg, key), role=key[: -len("_dir")])
            for key in ("rain_dir", "derained_dir", "clean_dir")}
    out_csv = cfg.get("out_csv") or (os.path.join(cfg["out"], "metrics.csv") if cfg.get("out") else None)
    if not out_csv:
        raise CliError("missing required setting --out-csv (or --out)", EXIT_CONFIG)
    names = set(dirs["clean_dir"])
    problems = []
    for key in ("rain_dir", "derained_dir"):
        extra, missing = sorted(set(dirs[key]) - names), sorted(names - set(dirs[key]))
        if extra or missing:
            problems.append(f"{key}: extra {extra}, missing {missing} relative to clean_dir")
    if problems:
        raise CliError("image sets differ: " + "; ".join(problems), EXIT_DATA)
    if not names:
        raise CliError("no images to evaluate", EXIT_DATA)
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, Path(out_csv).parent)
    params = SsimParams(dynamic_range=255.0)
    rows = []
    for i, name in enumerate(sorted(names), start=1):
        clean = _pixels(dirs["clean_dir"][name])
        rain = _pixels(dirs["rain_dir"][name])
        derained = _pixels(dirs["derained_dir"][name])
        if not clean.shape == rain.shape == derained.shape:
            raise CliError(f"{name}: image shapes differ across directories", EXIT_DATA)
        rows.append(MetricRow(f"image{i}", psnr(rain, clean, 255.0), psnr(derained, clean, 255.0),
                              ssim(rain, clean, params), ssim(derained, clean, params)))
        print(f"image{i} = {name}")
    write_metric_table(rows, out_csv)
    print(Path(out_csv).read_text(encoding="ascii"), end="")
    return EXIT_OK


def cmd_gradcheck(cfg: dict, seeds: Sequence[int] = DEFAULT_SEEDS) -> int:
    results = run_gradcheck(seeds)
    failed = [r.op for r in results if not r.passed]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:<16} max_rel_error={r.max_rel_error:.3e} coords={r.checked:<6} {status}")
    if cfg.get("out"):
        _echo_config(cfg, Path(cfg["out"]))
    if failed:
        print(f"gradient check failed (tolerance {TOLERANCE:g}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    print(f"all {len(results)} checks below {TOLERANCE:g}")
    return EXIT_OK


def cmd_scenes(cfg: dict, count: int, size: int) -> int:
    """Write procedural clean images scene000.ppm ... for desk-scale runs."""
    out = Path(_require(cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    base = int(cfg["seed"])
    for i in range(count):
        img = make_scene(size, size, np.random.default_rng(base + i))
        write_image(img, out / f"scene{i:03d}.ppm")
    print(f"wrote {count} scene(s) into {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=default, help="global seed")
    parser.add_argument("--emit-layers", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="also write rain/noise layer visualizations")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raincascade", description="Single-image deraining with a two-branch cascade.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render rainy/clean pairs from clean images")
    p.add_argument("--clean-dir", dest="clean_dir")
    p = sub.add_parser("train", help="train a model on synthesized pairs")
    p.add_argument("--pairs-dir", dest="pairs_dir")
    p.add_argument("--epochs", type=int)
    p = sub.add_parser("derain", help="derain every image in a directory")
    p.add_argument("--checkpoint")
    p.add_argument("--in-dir", dest="in_dir")
    p = sub.add_parser("eval", help="PSNR/SSIM table for rain vs derained vs clean")
    p.add_argument("--rain-dir", dest="rain_dir")
    p.add_argument("--derained-dir", dest="derained_dir")
    p.add_argument("--clean-dir", dest="clean_dir")
    p.add_argument("--out-csv", dest="out_csv")
    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seeds", type=int, default=len(DEFAULT_SEEDS), help="number of random seeds")
    p = sub.add_parser("scenes", help="write procedural clean images")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    for p in sub.choices.values():
        _global_flags(p, suppress=True)
    return parser


_NON_CONFIG = {"command", "config", "verbose", "seeds", "count", "size"}


def _resolve(args: argparse.Namespace) -> dict:
    file_values = config_mod.load_config_file(args.config) if args.config else {}
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    if not overrides.get("emit_layers"):
        overrides.pop("emit_layers", None)
    return config_mod.resolve(file_values, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _resolve(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "derain":
            return cmd_derain(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, seeds=tuple(range(args.seeds)))
        return cmd_scenes(cfg, args.count, args.size)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
