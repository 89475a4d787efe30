"""Synthetic multi-condition densities with exact log-likelihoods.

Each condition ("speaker") pushes a shared zero-mean, unit-variance base
density through a per-channel affine map ``x = u * exp(log_sigma) + mu``.
Conditions are summarized by embeddings from a fixed noisy linear map of
their parameters, which extends to conditions never seen in training.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ShapeError

BASE_SHAPES = ("gaussian", "two_rings", "two_moons_2d")
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DatasetSpec:
    channels: int = 2
    frames: int = 1
    base_shape: str = "gaussian"
    n_seen: int = 8
    n_unseen: int = 4
    samples_per_condition: int = 500
    seed: int = 0
    embed_dim: int = 16
    map_seed: int = 1234
    embed_noise: float = 0.01
    # embedding noise used for unseen conditions; None means embed_noise
    unseen_embed_noise: float | None = None
    hard_embed: bool = False

    def __post_init__(self):
        if self.base_shape not in BASE_SHAPES:
            raise ConfigError(f"base_shape must be one of {BASE_SHAPES}, got {self.base_shape!r}")
        if self.channels < 2:
            raise ConfigError(f"channels must be >= 2, got {self.channels}")
        if self.base_shape == "two_moons_2d" and self.channels != 2:
            raise ConfigError("two_moons_2d requires channels == 2")
        for name in ("frames", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("n_seen", "n_unseen", "samples_per_condition"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.embed_noise < 0 or (self.unseen_embed_noise or 0) < 0:
            raise ConfigError("embedding noise must be >= 0")


@dataclass(frozen=True)
class ConditionSpec:
    id: int
    mu: np.ndarray
    log_sigma: np.ndarray
    split: str  # "seen" | "unseen"

    def __post_init__(self):
        if np.any(np.abs(self.log_sigma) > 1.5):
            raise ConfigError(f"condition {self.id}: log_sigma outside [-1.5, 1.5]")
        if self.split not in ("seen", "unseen"):
            raise ConfigError(f"condition {self.id}: bad split {self.split!r}")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def to_dict(self) -> dict:
        return {"id": self.id, "split": self.split,
                "mu": self.mu.tolist(), "log_sigma": self.log_sigma.tolist()}


@dataclass(frozen=True)
class Sample:
    x: np.ndarray  # (T, D)
    cond_id: int


@dataclass
class Dataset:
    """Frames for every condition, plus the conditions and their embeddings.

    ``x`` has shape ``(N, T, D)``; ``cond_ids[i]`` names the condition of
    observation ``i``; ``embeddings[c]`` is the embedding of condition ``c``.
    """

    spec: DatasetSpec
    conditions: list[ConditionSpec]
    x: np.ndarray
    cond_ids: np.ndarray
    embeddings: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def samples(self) -> list[Sample]:
        return [Sample(x, int(c)) for x, c in zip(self.x, self.cond_ids)]

    def condition(self, cond_id: int) -> ConditionSpec:
        for c in self.conditions:
            if c.id == cond_id:
                return c
        raise KeyError(cond_id)

    def split_ids(self, split: str) -> list[int]:
        return [c.id for c in self.conditions if c.split == split]

    def _g(self, ids: np.ndarray) -> np.ndarray:
        if not len(ids):
            return np.zeros((0, self.spec.embed_dim))
        return np.stack([self.embeddings[int(c)] for c in ids])

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All observations with their per-observation embeddings."""
        return self.x, self._g(self.cond_ids)

    def subset(self, split: str | None = None, cond_id: int | None = None):
        """``(x, g, cond_ids)`` arrays for a split or a single condition."""
        if cond_id is not None:
            mask = self.cond_ids == cond_id
        else:
            mask = np.isin(self.cond_ids, self.split_ids(split))
        ids = self.cond_ids[mask]
        return self.x[mask], self._g(ids), ids


# ---------------------------------------------------------------- base densities

@dataclass(frozen=True)
class Mixture:
    """Equal-weight diagonal Gaussian mixture over the first two channels."""

    means: np.ndarray  # (K, 2)
    stds: np.ndarray  # (2,)


def _standardize(means: np.ndarray, comp_std: float) -> Mixture:
    centre = means.mean(axis=0)
    var = ((means - centre) ** 2).mean(axis=0) + comp_std ** 2
    scale = np.sqrt(var)
    return Mixture((means - centre) / scale, comp_std / scale)


@lru_cache(maxsize=None)
def base_mixture(shape: str) -> Mixture | None:
    """The 8-component mixture for non-Gaussian shapes, standardized per channel."""
    if shape == "gaussian":
        return None
    if shape == "two_rings":
        inner = [(np.cos(a), np.sin(a)) for a in np.pi / 4 + np.arange(4) * np.pi / 2]
        outer = [(2 * np.cos(a), 2 * np.sin(a)) for a in np.arange(4) * np.pi / 2]
        return _standardize(np.array(inner + outer), 0.25)
    if shape == "two_moons_2d":
        theta = np.linspace(0.0, np.pi, 4)
        upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
        return _standardize(np.concatenate([upper, lower]), 0.2)
    raise ConfigError(f"unsupported base shape {shape!r}")


def sample_base(shape: str, n: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of the base density; extra channels beyond two are N(0, 1)."""
    u = rng.standard_normal((n, channels))
    mix = base_mixture(shape)
    if mix is not None:
        comp = rng.integers(0, len(mix.means), size=n)
        u[:, :2] = mix.means[comp] + u[:, :2] * mix.stds
    return u


def base_logpdf(shape: str, u: np.ndarray) -> np.ndarray:
    """Log-density of the base at each row of ``u`` (shape ``(..., D)``)."""
    u = np.asarray(u, dtype=np.float64)
    mix = base_mixture(shape)
    if mix is None:
        return -0.5 * np.sum(u ** 2, axis=-1) - 0.5 * u.shape[-1] * LOG_2PI
    rest = u[..., 2:]
    lp_rest = -0.5 * np.sum(rest ** 2, axis=-1) - 0.5 * rest.shape[-1] * LOG_2PI
    diff = (u[..., None, :2] - mix.means) / mix.stds  # (..., K, 2)
    comp = (-0.5 * np.sum(diff ** 2, axis=-1) - np.sum(np.log(mix.stds)) - LOG_2PI)
    return logsumexp(comp, axis=-1) - np.log(len(mix.means)) + lp_rest


# ---------------------------------------------------------------- generation

def _condition_rng(seed: int, cond_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, cond_id]))


def _draw_condition(spec: DatasetSpec, cid: int) -> tuple[ConditionSpec, np.random.Generator]:
    """Condition ``cid`` and its stream, positioned for drawing samples."""
    rng = _condition_rng(spec.seed, cid)
    mu = rng.uniform(-2.0, 2.0, size=spec.channels)
    log_sigma = rng.uniform(-1.0, 1.0, size=spec.channels)
    split = "seen" if cid < spec.n_seen else "unseen"
    return ConditionSpec(cid, mu, log_sigma, split), rng


def make_conditions(spec: DatasetSpec) -> list[ConditionSpec]:
    return [_draw_condition(spec, cid)[0] for cid in range(spec.n_seen + spec.n_unseen)]


def sample_condition(spec: DatasetSpec, c: ConditionSpec, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``n`` observations of shape ``(T, D)`` from condition ``c``."""
    u = sample_base(spec.base_shape, n * spec.frames, spec.channels, rng)
    return (u * c.sigma + c.mu).reshape(n, spec.frames, spec.channels)


def embedding_matrix(E: int, channels: int, map_seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([map_seed]))
    A = rng.standard_normal((E, 2 * channels))
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def embed_condition(c: ConditionSpec, E: int, map_seed: int, *,
                    noise_std: float = 0.01, hard: bool = False) -> np.ndarray:
    """Embedding ``A @ [mu; log_sigma] + noise`` for condition ``c``.

    ``A`` is fixed by ``map_seed`` and has unit-norm rows; the noise comes
    from a stream keyed by ``(map_seed, c.id)``. With ``hard`` the linear
    part is squashed by ``tanh`` so it can no longer be inverted linearly.
    """
    A = embedding_matrix(E, len(c.mu), map_seed)
    g = A @ np.concatenate([c.mu, c.log_sigma])
    if hard:
        g = np.tanh(g)
    noise_rng = np.random.default_rng(np.random.SeedSequence([map_seed, c.id, 1]))
    return g + noise_std * noise_rng.standard_normal(E)


def condition_embedding(spec: DatasetSpec, c: ConditionSpec) -> np.ndarray:
    """Embedding of ``c`` under the dataset's map, noise level and squashing."""
    noise = spec.embed_noise
    if c.split == "unseen" and spec.unseen_embed_noise is not None:
        noise = spec.unseen_embed_noise
    return embed_condition(c, spec.embed_dim, spec.map_seed, noise_std=noise,
                           hard=spec.hard_embed)


def make_dataset(spec: DatasetSpec) -> Dataset:
    conditions, xs, ids, emb = [], [], [], {}
    for cid in range(spec.n_seen + spec.n_unseen):
        c, rng = _draw_condition(spec, cid)
        conditions.append(c)
        xs.append(sample_condition(spec, c, spec.samples_per_condition, rng))
        ids.append(np.full(spec.samples_per_condition, c.id))
        emb[c.id] = condition_embedding(spec, c)
    x = (np.concatenate(xs) if xs else np.zeros((0, spec.frames, spec.channels)))
    cond_ids = np.concatenate(ids) if ids else np.zeros(0, dtype=int)
    return Dataset(spec, conditions, x, cond_ids.astype(int), emb)


def true_loglik(x: np.ndarray, c: ConditionSpec, base_shape: str) -> np.ndarray | float:
    """Exact ``log p(x | c)`` summed over frames.

    ``x`` is one ``(T, D)`` observation (returns a float) or a batch
    ``(B, T, D)`` (returns ``(B,)``).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-1] != len(c.mu):
        raise ShapeError(f"true_loglik: bad data shape {x.shape} for D={len(c.mu)}")
    u = (x - c.mu) / c.sigma
    per_frame = base_logpdf(base_shape, u) - np.sum(c.log_sigma)
    out = per_frame.sum(axis=-1)
    return float(out) if x.ndim == 2 else out


def oracle_nll(dataset: Dataset, split: str) -> float:
    """Mean ``-true_loglik / (T*D)`` over a split, in nats per dimension."""
    total, count = 0.0, 0
    for cid in dataset.split_ids(split):
        x, _, _ = dataset.subset(cond_id=cid)
        total -= np.sum(true_loglik(x, dataset.condition(cid), dataset.spec.base_shape))
        count += x.shape[0]
    dims = dataset.spec.frames * dataset.spec.channels
    return total / (count * dims) if count else float("nan")


# ---------------------------------------------------------------- export

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dataset_csv(dataset: Dataset) -> str:
    D = dataset.spec.channels
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cond_id", "split", "frame"] + [f"ch{j}" for j in range(D)])
    splits = {c.id: c.split for c in dataset.conditions}
    for obs, cid in zip(dataset.x, dataset.cond_ids):
        for t, frame in enumerate(obs):
            w.writerow([int(cid), splits[int(cid)], t] + [_fmt(v) for v in frame])
    return buf.getvalue()


def conditions_json(dataset: Dataset) -> str:
    doc = {
        "spec": asdict(dataset.spec),
        "conditions": [dict(c.to_dict(), embedding=dataset.embeddings[c.id].tolist())
                       for c in dataset.conditions],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_dataset(csv_path: str | Path, json_path: str | Path) -> Dataset:
    """Rebuild a :class:`Dataset` from its CSV export and JSON sidecar."""
    doc = json.loads(Path(json_path).read_text())
    spec = DatasetSpec(**doc["spec"])
    conditions, emb = [], {}
    for c in doc["conditions"]:
        conditions.append(ConditionSpec(c["id"], np.array(c["mu"]),
                                        np.array(c["log_sigma"]), c["split"]))
        emb[c["id"]] = np.array(c["embedding"])
    obs, ids, frame_buf = [], [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["cond_id", "split", "frame"]:
            raise ConfigError(f"{csv_path}: unexpected header {header[:3]}")
        for row in reader:
            frame_buf.append([float(v) for v in row[3:]])
            if int(row[2]) == spec.frames - 1:
                obs.append(frame_buf)
                ids.append(int(row[0]))
                frame_buf = []
    x = np.array(obs, dtype=np.float64).reshape(len(obs), spec.frames, spec.channels)
    return Dataset(spec, conditions, x, np.array(ids, dtype=int), emb)
