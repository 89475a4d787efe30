"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the report lines.
"""

import itertools
import math
import time

import numpy as np
import pytest

from snacflow import diffcore as dc
from snacflow.checks import nll_objective
from snacflow.cli import main
from snacflow.condnet import FlowArch, init_params, layer_proj
from snacflow.evalkit import comparison_csv, compare_modes
from snacflow.flowcore import FlowStack, build_layers, coupling_forward
from snacflow.synthdata import DatasetSpec, make_dataset, oracle_nll, sample_condition
from snacflow.trainer import Checkpoint, TrainConfig, nll_per_dim, train

from conftest import make_stack


def report(n, name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {name}: {detail}")
    return ok


@pytest.fixture(scope="module")
def default_data():
    return make_dataset(DatasetSpec())


def test_1_invertibility():
    rng = np.random.default_rng(101)
    combos = list(itertools.product(("baseline", "snac"), (2, 4, 8), (1, 3), (1, 4)))
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(1000):
        mode, D, T, K = combos[i % len(combos)]
        stack = make_stack(mode, D, K, 10_000 + i, embed_dim=4, hidden=16, scale=0.5)
        x = rng.normal(size=(T, D)) * 2.0
        g = rng.normal(size=4)
        z, _ = stack.forward(x, g)
        worst = max(worst, float(np.max(np.abs(stack.inverse(z, g) - x))))
    secs = time.perf_counter() - t0
    ok = worst < 1e-8 and secs < 10
    assert report(1, "invertibility", ok, f"max err {worst:.2e} (< 1e-8), {secs:.2f} s (< 10 s)")


def fd_logdet_batched(stack, x, g, step=1e-6):
    """log|det| of the central-difference Jacobian, perturbations evaluated as one batch."""
    n = x.size
    eye = np.eye(n).reshape(n, *x.shape) * step
    both = np.concatenate([x + eye, x - eye])
    z, _ = stack.forward(both, np.broadcast_to(g, (2 * n, len(g))))
    J = (z[:n] - z[n:]).reshape(n, n).T / (2 * step)
    return np.linalg.slogdet(J)[1]


def test_2_logdet_oracle():
    rng = np.random.default_rng(202)
    shapes = [(T, D) for T in range(1, 7) for D in range(2, 9) if T * D <= 12]
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(200):
        T, D = shapes[i % len(shapes)]
        stack = make_stack(("baseline", "snac")[i % 2], D, int(rng.integers(1, 5)), 20_000 + i,
                           embed_dim=3, hidden=8, scale=0.4)
        x = rng.normal(size=(T, D))
        g = rng.normal(size=3)
        analytic = stack.forward(x, g)[1]
        worst = max(worst, abs(analytic - fd_logdet_batched(stack, x, g)))
    secs = time.perf_counter() - t0
    ok = worst < 1e-5 and secs < 30
    assert report(2, "log-determinant vs numerical Jacobian", ok,
                  f"max |diff| {worst:.2e} (< 1e-5), {secs:.2f} s (< 30 s)")


def test_3_gradients():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    errs = {}
    for mode in ("baseline", "snac"):
        stack = make_stack(mode, 4, 2, 303, embed_dim=5, hidden=16, scale=0.3)
        x = rng.normal(size=(6, 2, 4))
        g = rng.normal(size=(6, 5))
        errs[mode] = dc.finite_diff_check(nll_objective(stack, x, g), stack.params, 1e-5)
    secs = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and secs < 30
    detail = ", ".join(f"{m} {e:.2e}" for m, e in errs.items())
    assert report(3, "gradient finite-difference check", ok,
                  f"{detail} (< 1e-4), {secs:.2f} s (< 30 s)")


def test_4_identity_at_init(default_data):
    x, g = default_data.arrays()
    arch = FlowArch(channels=2, n_layers=4, embed_dim=16)
    stack = FlowStack(arch, init_params(0, arch))
    nll = nll_per_dim(stack, x, g)
    expect = float(np.mean(0.5 * x ** 2 + 0.5 * math.log(2 * math.pi)))
    _, logdet = stack.forward(x, g)
    ok = abs(nll - expect) < 1e-10 and np.all(logdet == 0.0)
    assert report(4, "identity at init", ok,
                  f"|nll - N(0,I) nll| {abs(nll - expect):.1e} (< 1e-10), "
                  f"max |logdet| {np.max(np.abs(logdet)):.1e} (== 0)")


def test_5_oracle_floor_training(default_data):
    t0 = time.perf_counter()
    ckpt = train(TrainConfig(), default_data)
    secs = time.perf_counter() - t0
    seen, unseen = ckpt.metrics["seen_nll"], ckpt.metrics["unseen_nll"]
    o_seen, o_unseen = oracle_nll(default_data, "seen"), oracle_nll(default_data, "unseen")
    tracked = [r["unseen_nll"] for r in ckpt.history if r["unseen_nll"] is not None]
    floor_ok = seen >= o_seen - 0.05 and min(tracked + [unseen]) >= o_unseen - 0.05
    gap = seen - o_seen
    ok = abs(gap) < 0.15 and floor_ok and secs < 300
    report(5, "oracle-floor training", ok,
           f"seen {seen:.4f} vs oracle {o_seen:.4f} (gap {gap:+.4f}, |gap| < 0.15); "
           f"unseen {unseen:.4f} vs oracle {o_unseen:.4f}; floor respected {floor_ok}; "
           f"{secs:.1f} s (< 300 s)")
    losses = [r["train_nll"] for r in ckpt.history]
    early, late = np.median(losses[:101]), np.median(losses[-101:])
    trend = bool(early > late)
    report("5b", "training trend", trend, f"median early {early:.4f} > median late {late:.4f}")
    assert ok and trend


def test_6_mechanism():
    spec = DatasetSpec(channels=4)
    data = make_dataset(DatasetSpec(channels=4, n_seen=3, n_unseen=0, samples_per_condition=1))
    worst_mean = worst_std = 0.0
    for c in data.conditions:
        arch = FlowArch(channels=4, n_layers=1, mode="snac", embed_dim=1, hidden=8)
        proj = layer_proj(arch, 0)
        params = init_params(0, arch).replace(**{proj.names[1]: c.mu, proj.names[3]: c.log_sigma})
        x = sample_condition(spec, c, 100_000, np.random.default_rng(600 + c.id))[:, 0, :]
        y, _ = coupling_forward(build_layers(arch)[0], params, x, np.zeros(1))
        part = y[:, arch.d:]
        worst_mean = max(worst_mean, float(np.max(np.abs(part.mean(axis=0)))))
        worst_std = max(worst_std, float(np.max(np.abs(part.std(axis=0) - 1))))
    ok = worst_mean < 0.02 and worst_std < 0.02
    assert report(6, "normalization mechanism", ok,
                  f"max |mean| {worst_mean:.4f} (< 0.02), max |std-1| {worst_std:.4f} (< 0.02)")


def test_7_zero_shot_comparison(default_data):
    t0 = time.perf_counter()
    rows, _ = compare_modes(TrainConfig(), default_data)
    first = comparison_csv(rows)
    again = comparison_csv(compare_modes(TrainConfig(), default_data)[0])
    secs = time.perf_counter() - t0
    print("\n" + first, end="")
    modes = [r["mode"] for r in rows]
    ok = first == again and modes == ["baseline", "snac", "oracle"]
    assert report(7, "zero-shot comparison table", ok,
                  f"rows {modes}, rerun byte-equal {first == again}, {secs:.1f} s")


def test_8_checkpoint_roundtrip(default_data, tmp_path):
    config = TrainConfig(steps=400, eval_every=50)
    full = train(config, default_data)
    half = train(config, default_data, steps=200)
    half.save(tmp_path / "half.json")
    resumed = train(config, default_data, resume=Checkpoint.load(tmp_path / "half.json"))
    same_hist = full.history == resumed.history
    same_params = full.params.equal(resumed.params)
    ok = same_hist and same_params
    assert report(8, "checkpoint resume", ok,
                  f"history bit-identical {same_hist}, params bit-identical {same_params}")


def test_9_check_command(capsys):
    t0 = time.perf_counter()
    code = main(["check"])
    secs = time.perf_counter() - t0
    capsys.readouterr()
    ok = code == 0 and secs < 60
    with capsys.disabled():
        report(9, "check command", ok, f"exit {code} (== 0), {secs:.1f} s (< 60 s)")
    assert ok
