"""Self-verification suite run by ``snacflow check``.

Each check compares an analytic quantity with an independent numerical
route (central differences, a finite-difference Jacobian determinant, or an
algebraic inverse) and reports the worst discrepancy against a tolerance.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .condnet import FlowArch, init_params, randomize_params
from .flowcore import FlowStack, sdn, sn, to_rows
from .trainer import nll_graph

FAULTS = ("logdet_sign",)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tolerance)


def random_stack(rng: np.random.Generator, *, channels: int, n_layers: int, mode: str,
                 embed_dim: int = 3, hidden: int = 8, scale: float = 0.3) -> FlowStack:
    arch = FlowArch(channels=channels, n_layers=n_layers, mode=mode, embed_dim=embed_dim,
                    hidden=hidden)
    seed = int(rng.integers(2**31))
    return FlowStack(arch, randomize_params(init_params(seed, arch), seed + 1, scale))


def numerical_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                       step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``vec(fn(x))`` w.r.t. ``vec(x)``."""
    flat = np.asarray(x, dtype=np.float64).ravel()
    cols = []
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        hi = np.asarray(fn((flat + e).reshape(x.shape))).ravel()
        lo = np.asarray(fn((flat - e).reshape(x.shape))).ravel()
        cols.append((hi - lo) / (2.0 * step))
    return np.stack(cols, axis=1)


def numerical_logdet(stack: FlowStack, x: np.ndarray, g: np.ndarray | None,
                     step: float = 1e-6) -> float:
    """``log|det J|`` of the whole ``(T, D)`` observation map, via LU."""
    J = numerical_jacobian(lambda v: stack.forward(v, g)[0], x, step)
    sign, logabs = np.linalg.slogdet(J)
    return float(logabs) if sign != 0 else float("-inf")


def check_sn_sdn(seed: int = 0, trials: int = 50) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(1, 6))
        x = rng.normal(size=(int(rng.integers(1, 5)), k))
        m, v = rng.normal(size=k), rng.uniform(-1.5, 1.5, size=k)
        worst = max(worst, np.max(np.abs(sdn(sn(x, m, v), m, v) - x)),
                    np.max(np.abs(sn(sdn(x, m, v), m, v) - x)))
    return float(worst)


def check_roundtrip(seed: int = 1, trials: int = 200) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(trials):
        stack = random_stack(rng, channels=int(rng.choice([2, 4, 8])),
                             n_layers=int(rng.choice([1, 4])),
                             mode=("snac", "baseline")[i % 2])
        T = int(rng.choice([1, 3]))
        x = rng.normal(size=(T, stack.arch.channels))
        g = rng.normal(size=stack.arch.embed_dim)
        z, _ = stack.forward(x, g)
        worst = max(worst, float(np.max(np.abs(stack.inverse(z, g) - x))))
    return worst


def check_logdet(seed: int = 2, trials: int = 40, *, logdet_sign: float = 1.0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    shapes = [(1, 2), (3, 2), (6, 2), (1, 3), (4, 3), (1, 4), (3, 4), (2, 5), (2, 6)]
    for i in range(trials):
        T, D = shapes[i % len(shapes)]
        stack = random_stack(rng, channels=D, n_layers=int(rng.integers(1, 5)),
                             mode=("snac", "baseline")[i % 2])
        x = rng.normal(size=(T, D))
        g = rng.normal(size=stack.arch.embed_dim)
        analytic = stack.forward(x, g, logdet_sign=logdet_sign)[1]
        worst = max(worst, abs(analytic - numerical_logdet(stack, x, g)))
    return worst


def nll_objective(stack: FlowStack, x: np.ndarray, g: np.ndarray):
    """Loss closure over parameter tensors for a fixed ``(B, T, D)`` batch."""
    rows, g_rows, _, _ = to_rows(x, g, stack.arch.channels, stack.arch.embed_dim)
    return lambda p: nll_graph(stack.arch, stack.layers, p, rows, g_rows, len(x))


def check_gradients(seed: int = 3) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mode in ("snac", "baseline"):
        stack = random_stack(rng, channels=4, n_layers=2, mode=mode)
        x = rng.normal(size=(3, 2, 4))
        g = rng.normal(size=(3, stack.arch.embed_dim))
        worst = max(worst, dc.finite_diff_check(nll_objective(stack, x, g), stack.params, 1e-5))
    return worst


def check_identity_init(seed: int = 4) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mode in ("snac", "baseline"):
        arch = FlowArch(channels=4, n_layers=3, mode=mode, embed_dim=5)
        stack = FlowStack(arch, init_params(seed, arch))
        x = rng.normal(size=(7, 2, 4))
        g = rng.normal(size=(7, 5))
        z, ld = stack.forward(x, g)
        worst = max(worst, float(np.max(np.abs(z - x[..., ::-1]))), float(np.max(np.abs(ld))))
    return worst


def run_checks(inject: Iterable[str] = ()) -> list[CheckResult]:
    """Run every check. ``inject`` names deliberate faults (for mutation tests)."""
    inject = set(inject)
    unknown = inject - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown fault(s): {sorted(unknown)}")
    sign = -1.0 if "logdet_sign" in inject else 1.0
    plan = [
        ("sn_sdn_inverse_pair", lambda: check_sn_sdn(), 1e-12),
        ("roundtrip_invertibility", lambda: check_roundtrip(), 1e-8),
        ("logdet_vs_numerical_jacobian", lambda: check_logdet(logdet_sign=sign), 1e-5),
        ("nll_gradient_finite_diff", lambda: check_gradients(), 1e-4),
        ("identity_at_init", lambda: check_identity_init(), 1e-15),
    ]
    results = []
    for name, fn, tol in plan:
        t0 = time.perf_counter()
        value = fn()
        results.append(CheckResult(name, value, tol, time.perf_counter() - t0))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<32} {'value':>12} {'tol':>9} {'sec':>7}  result"]
    for r in results:
        lines.append(f"{r.name:<32} {r.value:>12.3e} {r.tolerance:>9.0e} {r.seconds:>7.2f}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    lines.append(f"total {sum(r.seconds for r in results):.2f} s")
    return "\n".join(lines)
