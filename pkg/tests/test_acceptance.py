"""End-to-end acceptance checks, one test per shipped guarantee.

Each test records a one-line verdict that pytest prints in its terminal
summary, then asserts. Tolerances are pinned here and nowhere else.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from conv2attn import (
    ConvKernel,
    Image,
    MhsaWeights,
    PatchGeometry,
    RelativeBiasTable,
    build_hard_bias,
    conv2d,
    conv_to_mhsa,
    evaluate_converted,
    head_count,
    random_kernel,
    verify_lower_bound,
)
from conv2attn.cli import main
from conv2attn.model_io import load, save
from conv2attn.training import ConvClassifier, backward, forward_loss, transfer
from oracles import finite_difference_grads

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tools"))
from make_golden_archive import golden_model  # noqa: E402

TOL_F64 = 1e-8
TOL_F32 = 1e-4


def _equivalence_cells():
    for patch in (2, 4, 8, 16):
        for k in (1, 3, 5, 7):
            if k >= 2 * patch:
                continue
            for d_in in (1, 3):
                for d_out in (1, 3):
                    yield k, patch, d_in, d_out


def _max_equivalence_diff(k, patch, d_in, d_out, size, dtype, seed):
    rng = np.random.default_rng(seed)
    kernel = random_kernel(k, d_in, d_out, rng, dtype=dtype)
    model = conv_to_mhsa(kernel, patch)
    worst = 0.0
    for _ in range(10):
        img = Image(data=rng.normal(size=(size, size, d_in)).astype(dtype))
        want = conv2d(img, kernel).data
        got = evaluate_converted(model, img).data
        worst = max(worst, float(np.abs(want - got).max()))
    return worst


def test_criterion_1_equivalence_grid():
    start = time.time()
    worst = {np.float64: 0.0, np.float32: 0.0}
    for seed, (k, patch, d_in, d_out) in enumerate(_equivalence_cells()):
        for dtype in (np.float64, np.float32):
            diff = _max_equivalence_diff(k, patch, d_in, d_out, 32, dtype, seed)
            worst[dtype] = max(worst[dtype], diff)
    elapsed = time.time() - start
    ok = worst[np.float64] <= TOL_F64 and worst[np.float32] <= TOL_F32 and elapsed <= 120
    record_criterion(
        1,
        "converted attention equals convolution over the full grid",
        ok,
        f"max diff f64 {worst[np.float64]:.2e}, f32 {worst[np.float32]:.2e}, "
        f"{elapsed:.0f}s",
    )
    assert worst[np.float64] <= TOL_F64
    assert worst[np.float32] <= TOL_F32
    assert elapsed <= 120


def test_criterion_2_pixel_input_special_case():
    worst64 = worst32 = 0.0
    heads_ok = True
    for seed, k in enumerate((3, 5)):
        heads_ok &= head_count(k, 1) == k * k
        for d_in, d_out in ((1, 1), (3, 3)):
            worst64 = max(
                worst64,
                _max_equivalence_diff(k, 1, d_in, d_out, 12, np.float64, 100 + seed),
            )
            worst32 = max(
                worst32,
                _max_equivalence_diff(k, 1, d_in, d_out, 12, np.float32, 200 + seed),
            )
    ok = heads_ok and worst64 <= TOL_F64 and worst32 <= TOL_F32
    record_criterion(
        2,
        "single-pixel patches reduce to the K^2-head construction",
        ok,
        f"max diff f64 {worst64:.2e}, f32 {worst32:.2e}",
    )
    assert heads_ok
    assert worst64 <= TOL_F64
    assert worst32 <= TOL_F32


def test_criterion_3_head_count_table():
    table = {(k, 16): head_count(k, 16) for k in (3, 5, 7)}
    table[(5, 1)] = head_count(5, 1)
    ok = all(v == 9 for (k, p), v in table.items() if p == 16) and table[(5, 1)] == 25
    record_criterion(3, "head-count table (9 at patch 16; 25 at patch 1)", ok, str(table))
    for k in (3, 5, 7):
        assert head_count(k, 16) == 9
    assert head_count(5, 1) == 25


def test_criterion_4_hard_attention_mass():
    worst = 1.0
    for rows, cols, delta in ((64, 64, (1, -1)), (64, 64, (0, 0)), (14, 14, (1, 1)),
                              (4, 9, (-1, 2))):
        geom = PatchGeometry(patch=1, grid_rows=rows, grid_cols=cols)
        table = build_hard_bias(delta, geom, 40.0)
        n = rows * cols
        idx = np.arange(n)
        r, c = np.divmod(idx, cols)
        key_r, key_c = r - delta[0], c - delta[1]
        exists = (0 <= key_r) & (key_r < rows) & (0 <= key_c) & (key_c < cols)
        key_idx = np.where(exists, key_r * cols + key_c, 0)
        for chunk in range(0, n, 512):
            rows_chunk = slice(chunk, min(chunk + 512, n))
            dr = r[rows_chunk, None] - r[None, :] + rows - 1
            dc = c[rows_chunk, None] - c[None, :] + cols - 1
            scores = table.values[dr, dc]
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            attn = e / e.sum(axis=1, keepdims=True)
            sel = exists[rows_chunk]
            if sel.any():
                mass = attn[np.arange(sel.size)[sel], key_idx[rows_chunk][sel]]
                worst = min(worst, float(mass.min()))
    ok = worst >= 1.0 - 1e-6
    record_criterion(
        4, "hard positional attention is one-hot up to 1e-6", ok,
        f"min target mass {worst:.12f} over grids up to 4096 keys",
    )
    assert worst >= 1.0 - 1e-6


def test_criterion_5_pixel_lower_bound():
    start = time.time()
    gaps, ranks, tails = [], [], []
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        kernel = random_kernel(3, 16, 1, rng)
        report8 = verify_lower_bound("pixel", kernel, 8)
        report9 = verify_lower_bound("pixel", kernel, 9)
        gaps.append(report8.certified_gap)
        ranks.append(report8.rank)
        tails.append(report9.residual <= 1e-10 * report9.sigma1)
    elapsed = time.time() - start
    ok = all(gaps) and all(r == 9 for r in ranks) and all(tails) and elapsed <= 10
    record_criterion(
        5, "eight heads certifiably cannot express a generic pixel-input kernel", ok,
        f"gap fraction {np.mean(gaps):.2f}, ranks all 9: {all(r == 9 for r in ranks)}, "
        f"{elapsed:.1f}s",
    )
    assert all(gaps)
    assert all(r == 9 for r in ranks)
    assert all(tails)
    assert elapsed <= 10


def test_criterion_6_patch_lower_bound():
    start = time.time()
    results = []
    for seed in range(50):
        rng = np.random.default_rng(2000 + seed)
        w = rng.uniform(0.5, 1.5, size=(3, 3, 1, 1)) * rng.choice(
            [-1.0, 1.0], size=(3, 3, 1, 1)
        )
        kernel = ConvKernel(weights=w)
        for patch in (3, 4, 8):
            report = verify_lower_bound("patch", kernel, 8, patch=patch)
            results.append(report.rank == 9 and report.certified_gap)
    elapsed = time.time() - start
    ok = all(results) and elapsed <= 30
    record_criterion(
        6, "eight heads certifiably cannot express patch-input convolution", ok,
        f"{sum(results)}/{len(results)} cases certified, {elapsed:.1f}s",
    )
    assert all(results)
    assert elapsed <= 30


def _grad_worst_rel_error(model, images, labels):
    _, _, grads = backward(model, images, labels)

    def loss_fn(params):
        return forward_loss(model.replace_params(params), images, labels)[0]

    numeric = finite_difference_grads(loss_fn, model.params(), step=1e-5)
    worst = 0.0
    for name, grad in grads.items():
        denom = max(np.abs(numeric[name]).max(), 1e-8)
        worst = max(worst, float(np.abs(grad - numeric[name]).max() / denom))
    return worst


def test_criterion_7_gradient_correctness():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        conv = ConvClassifier(
            kernel=ConvKernel(weights=rng.normal(size=(3, 3, 1, 2))),
            cls_w=rng.normal(size=(2, 2)),
            cls_b=rng.normal(size=2),
        )
        attn = transfer(conv, patch=2, height=4, width=4)
        attn = attn.replace_params(
            {k: 0.3 * rng.normal(size=v.shape) for k, v in attn.params().items()}
        )
        images = rng.normal(size=(2, 4, 4, 1))
        labels = rng.integers(0, 2, size=2)
        worst = max(worst, _grad_worst_rel_error(conv, images, labels))
        worst = max(worst, _grad_worst_rel_error(attn, images, labels))
    ok = worst <= 1e-4
    record_criterion(
        7, "hand-derived gradients match central finite differences", ok,
        f"worst relative error {worst:.2e} over 20 models x 2 variants",
    )
    assert worst <= 1e-4


def test_criterion_8_two_phase_default_config(tmp_path):
    start = time.time()
    cfg = json.loads((REPO / "configs" / "train_default.json").read_text())
    out_dir = tmp_path / "run"
    cfg["outDir"] = str(out_dir)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["train", "--config", str(cfg_path), "--quiet"])
    elapsed = time.time() - start

    phase1 = [json.loads(l) for l in (out_dir / "phase1_metrics.jsonl").read_text().splitlines()]
    phase2 = [json.loads(l) for l in (out_dir / "phase2_metrics.jsonl").read_text().splitlines()]
    loss_diff = abs(phase2[0]["valLoss"] - phase1[-1]["valLoss"])
    acc_drop = phase1[-1]["valAcc"] - phase2[-1]["valAcc"]
    ok = code == 0 and loss_diff <= 1e-4 and acc_drop <= 0.01 and elapsed <= 300
    record_criterion(
        8, "two-phase pipeline transfers exactly and does not degrade", ok,
        f"loss diff {loss_diff:.2e}, acc {phase1[-1]['valAcc']:.3f} -> "
        f"{phase2[-1]['valAcc']:.3f}, {elapsed:.0f}s",
    )
    assert code == 0
    assert loss_diff <= 1e-4
    assert acc_drop <= 0.01
    assert elapsed <= 300


def test_criterion_9_serialization(tmp_path):
    rng = np.random.default_rng(17)
    conv_cls = ConvClassifier(
        kernel=random_kernel(3, 1, 2, rng),
        cls_w=rng.normal(size=(2, 3)),
        cls_b=rng.normal(size=3),
    )
    tables = tuple(
        RelativeBiasTable(grid_rows=2, grid_cols=2, values=rng.normal(size=(3, 3)))
        for _ in range(2)
    )
    models = {
        "kernel": random_kernel(5, 2, 3, rng, dtype=np.float32),
        "weights": MhsaWeights(
            w_q=rng.normal(size=(2, 4, 4)),
            w_k=rng.normal(size=(2, 4, 4)),
            w_v=rng.normal(size=(2, 4, 4)),
            w_o=rng.normal(size=(8, 4)),
            bias=tables,
        ),
        "converted": conv_to_mhsa(random_kernel(3, 1, 1, rng), 2),
        "conv_cls": conv_cls,
        "attn_cls": transfer(conv_cls, patch=2, height=4, width=4),
    }
    round_trips_ok = True
    for name, model in models.items():
        first = tmp_path / f"{name}_1.c2a"
        second = tmp_path / f"{name}_2.c2a"
        save(model, first)
        save(load(first), second)
        round_trips_ok &= first.read_bytes() == second.read_bytes()

    loaded = load(REPO / "tests" / "data" / "golden.c2a")
    expected = golden_model()
    golden_ok = all(
        np.array_equal(getattr(loaded.weights, n), getattr(expected.weights, n))
        for n in ("w_q", "w_k", "w_v", "w_o")
    ) and all(
        np.array_equal(t1.values, t2.values)
        for t1, t2 in zip(loaded.weights.bias, expected.weights.bias)
    )
    ok = round_trips_ok and golden_ok
    record_criterion(
        9, "archives round-trip bit-exactly and the golden file matches", ok,
        f"{len(models)} model kinds, golden ok: {golden_ok}",
    )
    assert round_trips_ok
    assert golden_ok


def test_criterion_10_cli_contract(tmp_path):
    kernel_path = tmp_path / "k.c2a"
    save(random_kernel(3, 1, 1, np.random.default_rng(5)), kernel_path)
    model_path = tmp_path / "m.c2a"

    def run(*argv):
        proc = subprocess.run(
            [sys.executable, "-m", "conv2attn.cli", *argv],
            capture_output=True, text=True,
        )
        lines = proc.stdout.strip().splitlines()
        return proc.returncode, lines[-1] if lines else ""

    checks = []
    code, line = run("head-count", "--kernel", "3", "--patch", "16")
    checks.append(code == 0 and json.loads(line)["ok"] is True)
    code, _ = run("convert", "--in", str(kernel_path), "--patch", "2",
                  "--out", str(model_path), "--quiet")
    checks.append(code == 0)
    verify_args = ("verify", "--conv", str(kernel_path), "--mhsa", str(model_path),
                   "--height", "8", "--width", "8", "--trials", "2", "--seed", "9",
                   "--quiet")
    code, first_line = run(*verify_args, "--tol", "1e-8")
    checks.append(code == 0)
    code, second_line = run(*verify_args, "--tol", "1e-8")
    checks.append(first_line == second_line)  # deterministic per seed
    code, line = run(*verify_args, "--tol", "0")
    checks.append(code == 1 and json.loads(line)["ok"] is False)
    code, line = run("head-count", "--kernel", "4", "--patch", "16")
    checks.append(code == 2 and json.loads(line)["ok"] is False)
    code, line = run("convert", "--in", str(tmp_path / "nope.c2a"), "--patch", "2",
                     "--out", str(model_path))
    checks.append(code == 2)

    ok = all(checks)
    record_criterion(
        10, "CLI exit codes (0/1/2) and per-seed determinism", ok,
        f"{sum(checks)}/{len(checks)} checks",
    )
    assert all(checks)
