"""Evaluation metrics: latent statistics, zero-shot NLL, generation fidelity.

These stand in for listening tests at desk scale. A condition-independent
latent shows up as per-condition latent moments near ``(0, 1)``; zero-shot
transfer shows up as unseen-split NLL close to the analytic oracle and as
generated samples whose moments match the unseen condition.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .flowcore import FlowStack
from .synthdata import ConditionSpec, Dataset, oracle_nll, sample_base
from .trainer import Checkpoint, TrainConfig, nll_per_dim, train


def latent_stats(stack: FlowStack, dataset: Dataset,
                 cond_ids: list[int] | None = None) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-condition channel mean and std of ``z = f(x; g)`` over all frames."""
    out = {}
    for cid in (cond_ids if cond_ids is not None else [c.id for c in dataset.conditions]):
        x, g, _ = dataset.subset(cond_id=cid)
        z, _ = stack.forward(x, g)
        flat = z.reshape(-1, z.shape[-1])
        out[cid] = (flat.mean(axis=0), flat.std(axis=0))
    return out


def zero_shot_nll(stack: FlowStack, dataset: Dataset, split: str = "unseen") -> float:
    """Mean NLL in nats/dim over a split, using each condition's embedding."""
    x, g, _ = dataset.subset(split)
    return nll_per_dim(stack, x, g)


def moment_distance(samples: np.ndarray, c: ConditionSpec) -> float:
    """``|mean - mu| / sqrt(D) + |std - sigma| / sqrt(D)`` over frames."""
    flat = np.asarray(samples).reshape(-1, len(c.mu))
    root_d = math.sqrt(len(c.mu))
    return float(np.linalg.norm(flat.mean(axis=0) - c.mu) / root_d
                 + np.linalg.norm(flat.std(axis=0) - c.sigma) / root_d)


def generate(stack: FlowStack, g: np.ndarray, n: int, frames: int = 1,
             seed: int = 0) -> np.ndarray:
    """``n`` observations ``(n, T, D)`` from the prior pushed through the inverse."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, frames, stack.arch.channels))
    return stack.inverse(z, np.broadcast_to(g, (n, len(g))))


def generation_fidelity(stack: FlowStack, c: ConditionSpec, g: np.ndarray,
                        n: int = 10_000, seed: int = 0) -> float:
    return moment_distance(generate(stack, g, n, seed=seed), c)


def roundtrip_error(stack: FlowStack, x: np.ndarray, g: np.ndarray) -> float:
    """Max abs error of ``f^-1(f(x))`` against ``x``."""
    if len(x) == 0:
        return 0.0
    z, _ = stack.forward(x, g)
    return float(np.max(np.abs(stack.inverse(z, g) - x)))


def mmd_rbf(a: np.ndarray, b: np.ndarray) -> float:
    """Biased squared MMD with an RBF kernel, median-heuristic bandwidth."""
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    both = np.concatenate([a, b])
    sq = np.sum((both[:, None, :] - both[None, :, :]) ** 2, axis=-1)
    bandwidth = np.median(sq[np.triu_indices(len(both), 1)])
    k = np.exp(-sq / max(bandwidth, 1e-12))
    n = len(a)
    return float(k[:n, :n].mean() + k[n:, n:].mean() - 2 * k[:n, n:].mean())


@dataclass
class EvalReport:
    mode: str
    seen_nll: float | None
    unseen_nll: float | None
    oracle_seen_nll: float | None
    oracle_unseen_nll: float | None
    latent_mean: dict[int, list[float]]
    latent_std: dict[int, list[float]]
    moment_distance: dict[int, float]
    roundtrip_error: float
    config: dict = field(default_factory=dict)

    @property
    def mean_moment_distance(self) -> float:
        vals = list(self.moment_distance.values())
        return float(np.mean(vals)) if vals else float("nan")

    def to_json(self) -> str:
        doc = asdict(self)
        doc["latent_mean"] = {str(k): v for k, v in self.latent_mean.items()}
        doc["latent_std"] = {str(k): v for k, v in self.latent_std.items()}
        doc["moment_distance"] = {str(k): v for k, v in self.moment_distance.items()}
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _finite(v: float) -> float | None:
    return v if math.isfinite(v) else None


def evaluate(ckpt: Checkpoint, dataset: Dataset, *, n_generate: int = 10_000,
             seed: int = 0) -> EvalReport:
    stack = ckpt.stack()
    stats = latent_stats(stack, dataset)
    unseen = dataset.split_ids("unseen")
    fidelity = {cid: generation_fidelity(stack, dataset.condition(cid), dataset.embeddings[cid],
                                         n_generate, seed=seed + cid)
                for cid in unseen}
    x_all, g_all = dataset.arrays()
    return EvalReport(
        mode=ckpt.arch.mode,
        seen_nll=_finite(zero_shot_nll(stack, dataset, "seen")),
        unseen_nll=_finite(zero_shot_nll(stack, dataset, "unseen")),
        oracle_seen_nll=_finite(oracle_nll(dataset, "seen")),
        oracle_unseen_nll=_finite(oracle_nll(dataset, "unseen")),
        latent_mean={k: m.tolist() for k, (m, _) in stats.items()},
        latent_std={k: s.tolist() for k, (_, s) in stats.items()},
        moment_distance=fidelity,
        roundtrip_error=roundtrip_error(stack, x_all, g_all),
        config={"train": asdict(ckpt.config), "data": asdict(ckpt.data)},
    )


# ---------------------------------------------------------------- comparison

COMPARISON_COLUMNS = ("mode", "seen_nll", "unseen_nll", "oracle_nll",
                      "moment_distance", "roundtrip_error")


def oracle_row(dataset: Dataset, n_generate: int = 10_000, seed: int = 0) -> dict:
    """Reference row: the true generative model scored by the same metrics."""
    spec = dataset.spec
    dists = []
    for cid in dataset.split_ids("unseen"):
        c = dataset.condition(cid)
        rng = np.random.default_rng(seed + cid)
        u = sample_base(spec.base_shape, n_generate * spec.frames, spec.channels, rng)
        dists.append(moment_distance(u * c.sigma + c.mu, c))
    unseen = oracle_nll(dataset, "unseen")
    return {"mode": "oracle", "seen_nll": oracle_nll(dataset, "seen"), "unseen_nll": unseen,
            "oracle_nll": unseen,
            "moment_distance": float(np.mean(dists)) if dists else float("nan"),
            "roundtrip_error": 0.0}


def report_row(report: EvalReport) -> dict:
    return {"mode": report.mode, "seen_nll": report.seen_nll,
            "unseen_nll": report.unseen_nll, "oracle_nll": report.oracle_unseen_nll,
            "moment_distance": report.mean_moment_distance,
            "roundtrip_error": report.roundtrip_error}


def compare_modes(config: TrainConfig, dataset: Dataset, modes=("baseline", "snac"),
                  n_generate: int = 10_000) -> tuple[list[dict], dict[str, EvalReport]]:
    """Train each mode with identical seeds and data; return table rows and reports.

    ``oracle_nll`` in each row is the unseen-split oracle, the floor for the
    zero-shot column.
    """
    rows, reports = [], {}
    for mode in modes:
        cfg = TrainConfig(**{**asdict(config), "mode": mode})
        ckpt = train(cfg, dataset)
        reports[mode] = evaluate(ckpt, dataset, n_generate=n_generate)
        rows.append(report_row(reports[mode]))
    rows.append(oracle_row(dataset, n_generate))
    return rows, reports


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in COMPARISON_COLUMNS])
    return buf.getvalue()


# ---------------------------------------------------------------- plots

def scatter_svg(true_pts: np.ndarray, gen_pts: np.ndarray, title: str,
                channels: tuple[int, int] = (0, 1), size: int = 640) -> str:
    """Two-colour scatter of true vs generated frames on a fixed 640x640 canvas."""
    a = np.asarray(true_pts).reshape(-1, np.shape(true_pts)[-1])[:, list(channels)]
    b = np.asarray(gen_pts).reshape(-1, np.shape(gen_pts)[-1])[:, list(channels)]
    both = np.concatenate([a, b]) if len(a) + len(b) else np.zeros((1, 2))
    lo, hi = both.min(axis=0), both.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    margin = 60
    inner = size - 2 * margin

    def px(p):
        u = (p - lo) / span
        return margin + u[0] * inner, size - margin - u[1] * inner

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>',
           f'<text x="{size / 2}" y="30" text-anchor="middle" font-size="16">{title}</text>',
           f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" y2="{size - margin}" '
           'stroke="black"/>',
           f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{size - margin}" stroke="black"/>',
           f'<text x="{size / 2}" y="{size - 20}" text-anchor="middle" font-size="13">'
           f'ch{channels[0]} [{lo[0]:.2f}, {hi[0]:.2f}]</text>',
           f'<text x="20" y="{size / 2}" text-anchor="middle" font-size="13" '
           f'transform="rotate(-90 20 {size / 2})">ch{channels[1]} [{lo[1]:.2f}, {hi[1]:.2f}]</text>',
           f'<text x="{size - margin}" y="50" text-anchor="end" font-size="12" fill="#1f77b4">'
           'true</text>',
           f'<text x="{size - margin}" y="66" text-anchor="end" font-size="12" fill="#d62728">'
           'generated</text>']
    for pts, colour in ((a, "#1f77b4"), (b, "#d62728")):
        for p in pts:
            x, y = px(p)
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="1.5" fill="{colour}" '
                       'fill-opacity="0.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
