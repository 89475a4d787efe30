"""Conditioning networks: per-frame scale/bias MLPs and mean/log-std projections.

Parameters live in a flat :class:`~snacflow.diffcore.ParamSet` under names
such as ``layer03.net.w1`` and ``layer03.proj.wm``. The functions here take
any mapping from those names to tensors (or arrays), which is how the same
code serves both inference and differentiation.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamSet, Tensor
from .errors import ConfigError

MODES = ("baseline", "snac")


@dataclass(frozen=True)
class FlowArch:
    """Dimensions of a coupling-flow stack.

    Attributes:
        channels: D, feature channels per frame.
        n_layers: K, number of coupling layers (each followed by a reversal).
        mode: ``"snac"`` or ``"baseline"``.
        embed_dim: E, length of the condition embedding.
        hidden: H, width of the conditioner's hidden layers.
        depth: L, number of hidden tanh layers.
        clamp: c, bound on the log-scale output.
        split: d, width of the pass-through partition; ``None`` means D // 2.
    """

    channels: int
    n_layers: int = 4
    mode: str = "snac"
    embed_dim: int = 16
    hidden: int = 64
    depth: int = 2
    clamp: float = 4.0
    split: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.channels < 2:
            raise ConfigError(f"channels must be >= 2, got {self.channels}")
        if not 1 <= self.d < self.channels:
            raise ConfigError(f"split must satisfy 1 <= d < D, got d={self.d}, D={self.channels}")
        for name in ("embed_dim", "hidden", "depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_layers < 0:
            raise ConfigError(f"n_layers must be >= 0, got {self.n_layers}")
        if not self.clamp > 0:
            raise ConfigError(f"clamp must be > 0, got {self.clamp}")

    @property
    def d(self) -> int:
        return self.channels // 2 if self.split is None else self.split

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScaleBiasNet:
    """Addresses one conditioner MLP inside a parameter mapping."""

    prefix: str
    d_in: int
    d_out: int  # D - d; the net emits 2 * d_out channels
    hidden: int
    depth: int
    clamp: float

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        widths = [self.d_in] + [self.hidden] * self.depth + [2 * self.d_out]
        shapes = {}
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"{self.prefix}.w{i}"] = (fan_in, fan_out)
            shapes[f"{self.prefix}.b{i}"] = (fan_out,)
        return shapes


@dataclass(frozen=True)
class CondProjection:
    """Addresses the m/v linear projections of one SNAC layer."""

    prefix: str
    embed_dim: int
    channels: int

    @property
    def names(self) -> tuple[str, str, str, str]:
        p = self.prefix
        return f"{p}.wm", f"{p}.cm", f"{p}.wv", f"{p}.cv"

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        wm, cm, wv, cv = self.names
        E, D = self.embed_dim, self.channels
        return {wm: (E, D), cm: (D,), wv: (E, D), cv: (D,)}


def layer_net(arch: FlowArch, k: int) -> ScaleBiasNet:
    d_in = arch.d + (arch.embed_dim if arch.mode == "baseline" else 0)
    return ScaleBiasNet(f"layer{k:02d}.net", d_in, arch.channels - arch.d,
                        arch.hidden, arch.depth, arch.clamp)


def layer_proj(arch: FlowArch, k: int) -> CondProjection | None:
    if arch.mode != "snac":
        return None
    return CondProjection(f"layer{k:02d}.proj", arch.embed_dim, arch.channels)


def _t(params: Mapping, name: str) -> Tensor:
    return dc.as_tensor(params[name])


def scale_bias(
    params: Mapping,
    net: ScaleBiasNet,
    x_id: Tensor | np.ndarray,
    g: Tensor | np.ndarray | None = None,
    mode: str = "snac",
) -> tuple[Tensor, Tensor]:
    """Run the conditioner on rows of ``x_id`` and split its output.

    In baseline mode the per-row embedding ``g`` (shape ``(N, E)``) is
    concatenated to the input. In snac mode the caller has already
    normalized ``x_id`` and ``g`` must not be passed.

    Returns:
        ``(s, b)``, each ``(N, D - d)``; ``s`` is soft-clamped to ``[-c, c]``.
    """
    if mode == "baseline":
        if g is None:
            raise ConfigError("baseline conditioner requires a condition embedding")
        h = dc.concat_channels(x_id, g)
    elif mode == "snac":
        if g is not None:
            raise ConfigError("snac conditioner must not receive the embedding; "
                              "normalize its input instead")
        h = dc.as_tensor(x_id)
    else:
        raise ConfigError(f"unknown mode {mode!r}")

    for i in range(net.depth + 1):
        h = dc.matmul(h, _t(params, f"{net.prefix}.w{i}")) + _t(params, f"{net.prefix}.b{i}")
        if i < net.depth:
            h = dc.tanh(h)
    s_raw = dc.slice_channels(h, 0, net.d_out)
    b = dc.slice_channels(h, net.d_out, 2 * net.d_out)
    s = dc.mul(dc.tanh(dc.mul(s_raw, 1.0 / net.clamp)), net.clamp)
    return s, b


def project_mv(params: Mapping, proj: CondProjection,
               g: Tensor | np.ndarray) -> tuple[Tensor, Tensor]:
    """Mean and log-std vectors predicted from the embedding.

    ``g`` is either one embedding ``(E,)`` or one per row ``(N, E)``; the
    result has matching leading shape and ``D`` channels.
    """
    g = dc.as_tensor(g)
    if g.shape[-1:] != (proj.embed_dim,):
        raise ConfigError(f"embedding length {g.shape[-1:]} does not match "
                          f"E={proj.embed_dim}")
    wm, cm, wv, cv = proj.names
    m = dc.matmul(g, _t(params, wm)) + _t(params, cm)
    v = dc.matmul(g, _t(params, wv)) + _t(params, cv)
    return m, v


def init_params(seed: int, arch: FlowArch) -> ParamSet:
    """Glorot-uniform hidden weights, zero biases, zero output layers.

    Zeroing the last conditioner layer and both projections makes every
    coupling layer the identity at initialization.
    """
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for k in range(arch.n_layers):
        net = layer_net(arch, k)
        last = f"{net.prefix}.w{net.depth}"
        for name, shape in net.weight_shapes().items():
            if ".w" in name and name != last:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                out[name] = rng.uniform(-limit, limit, size=shape)
            else:
                out[name] = np.zeros(shape)
        proj = layer_proj(arch, k)
        if proj is not None:
            for name, shape in proj.weight_shapes().items():
                out[name] = np.zeros(shape)
    return ParamSet(out)


def randomize_params(params: ParamSet, seed: int, scale: float = 0.3) -> ParamSet:
    """Replace every tensor with seeded N(0, scale^2) draws.

    Used to move away from the degenerate identity start when testing
    invertibility, log-determinants and gradients.
    """
    rng = np.random.default_rng(seed)
    return params.map(lambda _name, v: rng.normal(0.0, scale, size=v.shape))
