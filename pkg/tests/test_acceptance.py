"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed inline and again in the
terminal summary, so the outcome is visible even when output is captured.
"""

import csv
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from raincascade import cli
from raincascade import tensorcore as tc
from raincascade.derainnet import BranchConfig, init_model, model_forward
from raincascade.gradcheck import TOLERANCE, run_gradcheck
from raincascade.imageio import (
    decode_checkpoint,
    decode_pnm,
    encode_checkpoint,
    encode_pnm,
    read_image,
    write_image,
)
from raincascade.metrics import SsimParams, psnr, ssim
from raincascade.rainmodel import RainConfig, make_scene, synthesize
from raincascade.tensorcore import Tensor

from conftest import ACCEPTANCE_LINES, TINY_NOISE, TINY_RAIN

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.json"
TRAIN_SCENES, TEST_SCENES, SCENE_SIZE = 16, 4, 64
TEST_SCENE_SEED = 1000


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_gradient_suite():
    start = time.perf_counter()
    results = run_gradcheck(range(10))
    seconds = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_rel_error)
    ops = {r.op for r in results}
    ok = all(r.passed for r in results) and seconds < 60 and "derain_model" in ops
    report("gradient suite", ok,
           f"{len(results)} checks over 10 seeds, worst {worst.op} {worst.max_rel_error:.2e} "
           f"(< {TOLERANCE:g}), {seconds:.1f} s (< 60 s)")


def test_reconstruction_identity():
    rng = np.random.default_rng(0)
    mismatched = total = 0
    failing_pairs = 0
    for i in range(100):
        model = init_model(TINY_RAIN, TINY_NOISE, seed=i)
        y = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
        r_hat, n_hat, x_hat = model_forward(model.frozen(), y)
        recon = x_hat.data + r_hat.data + n_hat.data
        bad = int(np.count_nonzero(recon != y.data))
        mismatched += bad
        total += y.data.size
        failing_pairs += bad > 0
    report("reconstruction identity", failing_pairs == 0,
           f"x_hat + r_hat + n_hat != y on {failing_pairs}/100 pairs "
           f"({mismatched}/{total} elements differ by float32 rounding)")


def test_shuffle_inverse():
    rng = np.random.default_rng(1)
    failures = 0
    for r in (1, 2, 3):
        for _ in range(50):
            n, c, h, w = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
            x = Tensor(rng.standard_normal((n, c, h * r, w * r)).astype(np.float32))
            back = tc.pixel_shuffle(tc.pixel_unshuffle(x, r), r)
            failures += back.data.tobytes() != x.data.tobytes()
    report("shuffle inverse", failures == 0, f"{150 - failures}/150 tensors restored bit-exactly for r in 1,2,3")


def test_metric_oracles():
    zeros = np.zeros((3, 16, 16))
    p1 = psnr(zeros, zeros + 1, 255.0)
    p0 = psnr(zeros, zeros + 255, 255.0)
    x = np.random.default_rng(2).random((3, 24, 24))
    s1 = ssim(x, x)
    sc = ssim(zeros + 100, zeros + 150, SsimParams(dynamic_range=255.0))
    ok = abs(p1 - 48.1308) <= 1e-4 and p0 == 0.0 and abs(s1 - 1) <= 1e-9 and abs(sc - 0.9231) <= 1e-3
    report("metric oracles", ok,
           f"PSNR(MSE=1)={p1:.6f}, PSNR(0,255)={p0:g}, SSIM(x,x)={s1:.12f}, SSIM(100,150)={sc:.6f}")


def test_synthesis_additivity_and_photometry():
    worst_residual, worst_min = 0.0, np.inf
    for seed in range(50):
        x = make_scene(48, 48, np.random.default_rng(seed))
        p = synthesize(x, RainConfig(seed=seed))
        worst_residual = max(worst_residual, float(np.abs(p.y.data - p.x.data - p.r.data - p.noise.data).max()))
        worst_min = min(worst_min, float(p.r.data.min()))
    report("synthesis additivity and photometry", worst_residual <= 1e-6 and worst_min >= 0,
           f"max |Y-X-R-N| = {worst_residual:.2e} (<= 1e-6), min R = {worst_min:g} over 50 seeds")


def test_format_round_trips(tmp_path):
    rng = np.random.default_rng(3)
    pnm_ok = ckpt_ok = 0
    for i in range(20):
        channels = (1, 3)[i % 2]
        pixels = rng.integers(0, 256, (channels, rng.integers(1, 40), rng.integers(1, 40)), dtype=np.uint8)
        raw = encode_pnm(pixels)
        path = tmp_path / f"img{i}.ppm"
        path.write_bytes(raw)
        write_image(read_image(path), tmp_path / "again.ppm")
        pnm_ok += (tmp_path / "again.ppm").read_bytes() == raw and np.array_equal(decode_pnm(raw), pixels)

        rain = BranchConfig(int(rng.integers(1, 6)), int(rng.integers(1, 3)), int(rng.integers(1, 4)), 3)
        noise = BranchConfig(int(rng.integers(1, 6)), int(rng.integers(1, 3)), int(rng.integers(1, 4)), 6)
        model = init_model(rain, noise, seed=int(rng.integers(0, 2**31)))
        blob = encode_checkpoint(model)
        ckpt_ok += encode_checkpoint(decode_checkpoint(blob)) == blob

    clean = tmp_path / "clean7"
    assert cli.main(["scenes", "--out", str(clean), "--count", "7", "--size", "16"]) == 0
    pairs = tmp_path / "pairs7"
    assert cli.main(["synth", "--clean-dir", str(clean), "--out", str(pairs)]) == 0
    derained = tmp_path / "derained7"
    derained.mkdir()
    for f in pairs.glob("*.rain.ppm"):
        (derained / f.name.replace(".rain.", ".derained.")).write_bytes(f.read_bytes())
    out_csv = tmp_path / "table.csv"
    code = cli.main(["eval", "--rain-dir", str(pairs), "--derained-dir", str(derained),
                     "--clean-dir", str(clean), "--out-csv", str(out_csv)])
    names = [row[0] for row in csv.reader(out_csv.open())][1:] if code == 0 else []
    table_ok = names == [f"image{i}" for i in range(1, 8)] + ["Avg."]
    report("format round trips", pnm_ok == 20 and ckpt_ok == 20 and table_ok,
           f"PNM {pnm_ok}/20, checkpoint {ckpt_ok}/20 byte-identical, 7-image CSV rows {names}")


# ---------------------------------------------------------------------------
# desk-scale pipeline, shared by the gain and determinism criteria

def run_pipeline(root: Path) -> dict:
    """scenes -> synth -> train -> derain -> eval with the committed config."""
    cfg = ["--config", str(DESK_CONFIG)]
    steps = [
        ["scenes", "--out", str(root / "train_clean"), "--count", str(TRAIN_SCENES), "--size", str(SCENE_SIZE)],
        ["scenes", "--out", str(root / "test_clean"), "--count", str(TEST_SCENES), "--size", str(SCENE_SIZE),
         "--seed", str(TEST_SCENE_SEED)],
        ["synth", "--clean-dir", str(root / "train_clean"), "--out", str(root / "train_pairs")],
        ["synth", "--clean-dir", str(root / "test_clean"), "--out", str(root / "test_pairs"),
         "--seed", str(TEST_SCENE_SEED)],
        ["train", "--pairs-dir", str(root / "train_pairs"), "--out", str(root / "run")],
        ["derain", "--checkpoint", str(root / "run" / "model.drnc"), "--in-dir", str(root / "test_pairs"),
         "--out", str(root / "derained")],
        ["eval", "--rain-dir", str(root / "test_pairs"), "--derained-dir", str(root / "derained"),
         "--clean-dir", str(root / "test_pairs"), "--out-csv", str(root / "metrics.csv")],
    ]
    start = time.perf_counter()
    codes = [cli.main(cfg + step) for step in steps]
    seconds = time.perf_counter() - start
    return {"codes": codes, "seconds": seconds, "root": root}


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    return [run_pipeline(tmp_path_factory.mktemp(f"desk{i}")) for i in range(2)]


def held_out_metrics(root: Path):
    names = sorted(p.name[: -len(".rain.ppm")] for p in (root / "test_pairs").glob("*.rain.ppm"))
    load = lambda path: decode_pnm(path.read_bytes()).astype(np.float64)  # noqa: E731
    params = SsimParams(dynamic_range=255.0)
    rows = []
    for name in names:
        x = load(root / "test_pairs" / f"{name}.clean.ppm")
        y = load(root / "test_pairs" / f"{name}.rain.ppm")
        x_hat = load(root / "derained" / f"{name}.derained.ppm")
        rows.append((psnr(y, x, 255.0), psnr(x_hat, x, 255.0), ssim(y, x, params), ssim(x_hat, x, params)))
    return np.array(rows).mean(axis=0), len(names)


@pytest.mark.slow
def test_desk_scale_gain(desk_runs):
    run = desk_runs[0]
    assert run["codes"] == [0] * 7, run["codes"]
    (rain_psnr, derained_psnr, rain_ssim, derained_ssim), count = held_out_metrics(run["root"])
    ok = (count == TEST_SCENES and derained_psnr >= rain_psnr + 2.0 and derained_ssim > rain_ssim
          and run["seconds"] < 600)
    report("desk-scale deraining gain", ok,
           f"PSNR {rain_psnr:.2f} -> {derained_psnr:.2f} dB (+{derained_psnr - rain_psnr:.2f}, need +2.00), "
           f"SSIM {rain_ssim:.4f} -> {derained_ssim:.4f} on {count} held-out pairs, "
           f"pipeline {run['seconds']:.0f} s (< 600 s)")


@pytest.mark.slow
def test_end_to_end_determinism(desk_runs):
    a, b = (run["root"] for run in desk_runs)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    differing = [str(f) for f in files
                 if f.name != "config.resolved.json" and not filecmp.cmp(a / f, b / f, shallow=False)]
    checked = [f for f in files if f.suffix in (".drnc", ".ppm", ".csv")]
    ok = files == other and not differing and all(r["codes"] == [0] * 7 for r in desk_runs)
    report("end-to-end determinism", ok,
           f"{len(checked)} checkpoints/images/CSVs compared across two full runs, "
           f"{len(differing)} differ {differing[:3]}")
