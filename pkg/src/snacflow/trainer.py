"""Maximum-likelihood training with a standard-normal prior and Adam."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .condnet import FlowArch, init_params
from .diffcore import ParamSet, Tensor
from .errors import ConfigError, DivergenceError, NonFiniteError
from .flowcore import FlowStack, forward_rows, to_rows
from .synthdata import Dataset, DatasetSpec

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "snac"
    n_layers: int = 4
    split: int | None = None
    hidden: int = 64
    depth: int = 2
    clamp: float = 4.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    steps: int = 2000
    seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0 or self.eval_every < 0:
            raise ConfigError("steps and eval_every must be >= 0")

    def arch(self, channels: int, embed_dim: int) -> FlowArch:
        return FlowArch(channels=channels, n_layers=self.n_layers, mode=self.mode,
                        embed_dim=embed_dim, hidden=self.hidden, depth=self.depth,
                        clamp=self.clamp, split=self.split)


# ---------------------------------------------------------------- objective

def loglik_rows(z: Tensor, logdet: Tensor) -> Tensor:
    """Per-row standard-normal log-density of ``z`` plus the log-determinant."""
    D = z.shape[-1]
    return dc.reduce_sum(dc.square(z), axis=-1) * -0.5 - D * HALF_LOG_2PI + logdet


def nll_graph(arch: FlowArch, layers, params: Mapping, x_rows, g_rows, n_obs: int) -> Tensor:
    """Negative log-likelihood averaged over ``n_obs`` observations, as a graph."""
    z, logdet = forward_rows(layers, params, x_rows, g_rows)
    return dc.reduce_sum(loglik_rows(z, logdet)) * (-1.0 / n_obs)


def log_likelihood(stack: FlowStack, x, g) -> float | np.ndarray:
    """``log p(z) + log|det df/dx|`` for one ``(T, D)`` observation or a batch."""
    rows, g_rows, batch_shape, T = to_rows(x, g, stack.arch.channels, stack.arch.embed_dim)
    z, logdet = forward_rows(stack.layers, stack.params, rows, g_rows)
    ll = loglik_rows(z, logdet).data.reshape(batch_shape + (T,)).sum(axis=-1)
    if not np.all(np.isfinite(ll)):
        raise NonFiniteError("log_likelihood: non-finite value")
    return float(ll) if batch_shape == () else ll


def nll_loss(stack: FlowStack, batch) -> float:
    """Mean negative log-likelihood over ``(x, g)`` pairs."""
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    gs = np.stack([np.asarray(g, dtype=np.float64) for _, g in batch])
    return float(-np.mean(log_likelihood(stack, xs, gs)))


def nll_per_dim(stack: FlowStack, x: np.ndarray, g: np.ndarray, chunk: int = 8192) -> float:
    """Mean NLL in nats per dimension over a batch ``(B, T, D)``."""
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(x), chunk):
        total -= float(np.sum(log_likelihood(stack, x[i:i + chunk], g[i:i + chunk])))
    return total / (x.shape[0] * x.shape[1] * x.shape[2])


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    t = state.t + 1
    new_params, m_out, v_out = {}, {}, {}
    for name in params:
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_out[name], v_out[name] = m, v
    return ParamSet(new_params), AdamState(m_out, v_out, t)


# ---------------------------------------------------------------- checkpoints

def _params_to_json(params: Mapping[str, np.ndarray]) -> dict:
    return {k: np.asarray(v).tolist() for k, v in params.items()}


def _params_from_json(doc: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v, dtype=np.float64) for k, v in doc.items()}


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model or resume its training bit-for-bit.

    ``history`` holds one row per optimizer step: the minibatch NLL before the
    update (nats/dim) and, on evaluation steps, the unseen-split NLL.
    """

    config: TrainConfig
    data: DatasetSpec
    arch: FlowArch
    params: ParamSet
    opt_state: AdamState
    rng_state: dict
    history: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def step(self) -> int:
        return self.opt_state.t

    def stack(self) -> FlowStack:
        return FlowStack(self.arch, self.params)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": {"train": asdict(self.config), "data": asdict(self.data)},
            "arch": self.arch.to_dict(),
            "params": _params_to_json(self.params),
            "opt_state": {"t": self.opt_state.t,
                          "m": _params_to_json(self.opt_state.m),
                          "v": _params_to_json(self.opt_state.v)},
            "rng_state": self.rng_state,
            "history": self.history,
            "metrics": self.metrics,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> Checkpoint:
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format_version {version!r}")
        opt = doc["opt_state"]
        return cls(
            config=TrainConfig(**doc["config"]["train"]),
            data=DatasetSpec(**doc["config"]["data"]),
            arch=FlowArch(**doc["arch"]),
            params=ParamSet(_params_from_json(doc["params"])),
            opt_state=AdamState(_params_from_json(opt["m"]), _params_from_json(opt["v"]),
                                int(opt["t"])),
            rng_state=doc["rng_state"],
            history=doc["history"],
            metrics=doc.get("metrics", {}),
        )

    def save(self, path: str | Path) -> None:
        write_atomic(path, self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        return cls.from_dict(json.loads(Path(path).read_text()))


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- training

def fresh_checkpoint(config: TrainConfig, data: DatasetSpec) -> Checkpoint:
    arch = config.arch(data.channels, data.embed_dim)
    params = init_params(config.seed, arch)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    return Checkpoint(config, data, arch, params, AdamState.zeros_like(params),
                      rng.bit_generator.state)


def fit_arrays(
    ckpt: Checkpoint,
    x: np.ndarray,
    g: np.ndarray,
    *,
    eval_fn: Callable[[FlowStack], float] | None = None,
    steps: int | None = None,
) -> Checkpoint:
    """Advance ``ckpt`` to ``steps`` total optimizer steps on ``(x, g)``.

    ``x`` is ``(N, T, D)``, ``g`` is ``(N, E)``. Minibatches are drawn with
    replacement from the checkpoint's generator, so resuming a saved
    checkpoint continues the exact same sequence.
    """
    cfg = ckpt.config
    steps = cfg.steps if steps is None else steps
    if len(x) == 0 and steps > ckpt.step:
        raise ConfigError("no training observations")
    arch = ckpt.arch
    stack = ckpt.stack()
    layers = stack.layers
    dims = x.shape[1] * x.shape[2] if x.ndim == 3 else 1
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    params, state = ckpt.params, ckpt.opt_state
    history = list(ckpt.history)
    last_finite = history[-1]["train_nll"] if history else None

    for step in range(ckpt.step, steps):
        idx = rng.integers(0, len(x), size=cfg.batch_size)
        rows, g_rows, _, _ = to_rows(x[idx], g[idx], arch.channels, arch.embed_dim)
        try:
            loss, grads = dc.value_and_gradient(
                lambda p: nll_graph(arch, layers, p, rows, g_rows, cfg.batch_size), params)
        except NonFiniteError as exc:
            raise DivergenceError(step, last_finite, str(exc)) from exc
        row = {"step": step, "train_nll": loss / dims, "unseen_nll": None}
        if eval_fn is not None and cfg.eval_every and step % cfg.eval_every == 0:
            row["unseen_nll"] = eval_fn(FlowStack(arch, params))
            log.info("step %d  train %.4f  unseen %.4f", step, row["train_nll"], row["unseen_nll"])
        history.append(row)
        last_finite = row["train_nll"]
        params, state = adam_step(params, grads, state, cfg.learning_rate)

    return Checkpoint(cfg, ckpt.data, arch, params, state, rng.bit_generator.state,
                      history, dict(ckpt.metrics))


def train(
    config: TrainConfig,
    dataset: Dataset,
    *,
    resume: Checkpoint | None = None,
    steps: int | None = None,
) -> Checkpoint:
    """Train on the seen split, tracking unseen-split NLL every ``eval_every`` steps.

    Args:
        config: Training hyperparameters.
        dataset: Data; only seen conditions are used for updates.
        resume: Continue from this checkpoint instead of a fresh init.
        steps: Stop after this many total steps (defaults to ``config.steps``).

    Raises:
        DivergenceError: the loss or a gradient became non-finite.
    """
    if resume is not None and resume.config != config:
        raise ConfigError("resume checkpoint was produced by a different training config")
    ckpt = resume if resume is not None else fresh_checkpoint(config, dataset.spec)
    x_seen, g_seen, _ = dataset.subset("seen")
    x_unseen, g_unseen, _ = dataset.subset("unseen")
    eval_fn = (lambda s: nll_per_dim(s, x_unseen, g_unseen)) if len(x_unseen) else None
    ckpt = fit_arrays(ckpt, x_seen, g_seen, eval_fn=eval_fn, steps=steps)
    stack = ckpt.stack()
    ckpt.metrics = {
        "step": ckpt.step,
        "seen_nll": _or_none(nll_per_dim(stack, x_seen, g_seen)),
        "unseen_nll": _or_none(nll_per_dim(stack, x_unseen, g_unseen)),
    }
    return ckpt


def _or_none(v: float) -> float | None:
    return v if math.isfinite(v) else None


def config_from_dict(cls, doc: Mapping, where: str):
    """Build a config dataclass, rejecting unknown keys by name."""
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
