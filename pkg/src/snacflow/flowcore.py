"""Invertible layers: condition normalization, affine coupling, channel reversal.

Data for a single observation is a ``(T, D)`` array of frames; batches are
``(B, T, D)`` with one embedding per observation, ``(B, E)``. Internally every
frame is a row, so a batch is flattened to ``(B*T, D)`` and the embedding is
repeated once per frame. That keeps the condition statistics constant along
the frame axis by construction.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .condnet import (CondProjection, FlowArch, ScaleBiasNet, layer_net, layer_proj,
                      project_mv, scale_bias)
from .diffcore import ParamSet, Tensor
from .errors import ConfigError, NonFiniteError, ShapeError


def _wrap(result: Tensor, *inputs) -> Tensor | np.ndarray:
    return result if any(isinstance(i, Tensor) for i in inputs) else result.data


def _check_channels(op: str, x, m, v) -> None:
    if not (np.shape(x)[-1:] == np.shape(m)[-1:] == np.shape(v)[-1:]):
        raise ShapeError(f"{op}: channel mismatch x{np.shape(x)}, m{np.shape(m)}, v{np.shape(v)}")


def sn(x, m, v):
    """Normalize each frame: ``(x - m) / exp(v)`` channel-wise."""
    _check_channels("sn", x, m, v)
    return _wrap(dc.div(dc.sub(x, m), dc.exp(v)), x, m, v)


def sdn(x, m, v):
    """Inverse of :func:`sn`: ``x * exp(v) + m`` channel-wise."""
    _check_channels("sdn", x, m, v)
    return _wrap(dc.add(dc.mul(x, dc.exp(v)), m), x, m, v)


def flip(x):
    """Reverse the channel order of every frame. Its own inverse."""
    return _wrap(dc.reverse_channels(x), x)


@dataclass(frozen=True)
class CouplingLayer:
    index: int
    d: int
    channels: int
    mode: str
    net: ScaleBiasNet
    proj: CondProjection | None

    def __post_init__(self):
        if not 1 <= self.d < self.channels:
            raise ConfigError(f"layer {self.index}: need 1 <= d < D, got d={self.d}")
        if (self.mode == "snac") != (self.proj is not None):
            raise ConfigError(f"layer {self.index}: snac mode requires a projection, "
                              "baseline mode forbids one")


def build_layers(arch: FlowArch) -> list[CouplingLayer]:
    return [CouplingLayer(k, arch.d, arch.channels, arch.mode,
                          layer_net(arch, k), layer_proj(arch, k))
            for k in range(arch.n_layers)]


def _require_g(layer: CouplingLayer, g) -> None:
    if g is None:
        raise ConfigError(f"layer {layer.index} ({layer.mode}) requires a condition embedding")


def coupling_forward_rows(layer: CouplingLayer, params: Mapping, x, g) -> tuple[Tensor, Tensor]:
    """One coupling layer on frame rows. Returns ``(y, logdet per row)``."""
    _require_g(layer, g)
    d, D = layer.d, layer.channels
    x_id = dc.slice_channels(x, 0, d)
    x_tr = dc.slice_channels(x, d, D)
    if layer.mode == "baseline":
        s, b = scale_bias(params, layer.net, x_id, g, "baseline")
        y_tr = dc.mul(x_tr, dc.exp(s)) + b
        logdet = dc.reduce_sum(s, axis=-1)
    else:
        m, v = project_mv(params, layer.proj, g)
        m_id, m_tr = dc.slice_channels(m, 0, d), dc.slice_channels(m, d, D)
        v_id, v_tr = dc.slice_channels(v, 0, d), dc.slice_channels(v, d, D)
        s, b = scale_bias(params, layer.net, sn(x_id, m_id, v_id), None, "snac")
        y_tr = dc.mul(sn(x_tr, m_tr, v_tr), dc.exp(s)) + b
        # diagonal of the triangular Jacobian is exp(s - v)
        logdet = dc.reduce_sum(s, axis=-1) - dc.reduce_sum(v_tr, axis=-1)
    return dc.concat_channels(x_id, y_tr), logdet


def coupling_inverse_rows(layer: CouplingLayer, params: Mapping, y, g) -> Tensor:
    _require_g(layer, g)
    d, D = layer.d, layer.channels
    y_id = dc.slice_channels(y, 0, d)
    y_tr = dc.slice_channels(y, d, D)
    if layer.mode == "baseline":
        s, b = scale_bias(params, layer.net, y_id, g, "baseline")
        x_tr = dc.div(y_tr - b, dc.exp(s))
    else:
        m, v = project_mv(params, layer.proj, g)
        m_id, m_tr = dc.slice_channels(m, 0, d), dc.slice_channels(m, d, D)
        v_id, v_tr = dc.slice_channels(v, 0, d), dc.slice_channels(v, d, D)
        s, b = scale_bias(params, layer.net, sn(y_id, m_id, v_id), None, "snac")
        x_tr = sdn(dc.div(y_tr - b, dc.exp(s)), m_tr, v_tr)
    return dc.concat_channels(y_id, x_tr)


def forward_rows(layers: list[CouplingLayer], params: Mapping, x, g,
                 *, logdet_sign: float = 1.0) -> tuple[Tensor, Tensor]:
    """Compose (coupling, reversal) over all layers on frame rows.

    ``logdet_sign`` exists only so the self-check can inject a sign fault.
    """
    x = dc.as_tensor(x)
    total = dc.as_tensor(np.zeros(x.shape[:-1]))
    for layer in layers:
        try:
            x, ld = coupling_forward_rows(layer, params, x, g)
        except NonFiniteError as exc:
            raise NonFiniteError(f"layer {layer.index}: {exc}") from exc
        total = total + ld
        x = dc.reverse_channels(x)
    if logdet_sign != 1.0:
        total = dc.mul(total, logdet_sign)
    return x, total


def inverse_rows(layers: list[CouplingLayer], params: Mapping, z, g) -> Tensor:
    z = dc.as_tensor(z)
    for layer in reversed(layers):
        z = dc.reverse_channels(z)
        try:
            z = coupling_inverse_rows(layer, params, z, g)
        except NonFiniteError as exc:
            raise NonFiniteError(f"layer {layer.index}: {exc}") from exc
    return z


def to_rows(x, g, channels: int, embed_dim: int):
    """Flatten ``(T, D)`` / ``(B, T, D)`` data and matching embeddings to frame rows.

    Returns ``(x_rows, g_rows, batch_shape, T)`` where ``batch_shape`` is ``()``
    for a single observation and ``(B,)`` for a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        batch_shape, T = (), x.shape[0]
    elif x.ndim == 3:
        batch_shape, T = (x.shape[0],), x.shape[1]
    else:
        raise ShapeError(f"expected (T, D) or (B, T, D) data, got shape {x.shape}")
    if x.shape[-1] != channels:
        raise ShapeError(f"expected {channels} channels, got shape {x.shape}")
    rows = x.reshape(-1, channels)
    if g is None:
        return rows, None, batch_shape, T
    g = np.asarray(g, dtype=np.float64)
    if g.shape != batch_shape + (embed_dim,):
        raise ShapeError(f"embedding shape {g.shape} does not match data batch "
                         f"{batch_shape} with E={embed_dim}")
    g_rows = np.repeat(g.reshape(-1, embed_dim), T, axis=0)
    return rows, g_rows, batch_shape, T


class FlowStack:
    """K coupling layers, each followed by a full channel reversal.

    Args:
        arch: Architecture description.
        params: Parameters produced by :func:`snacflow.condnet.init_params`
            (or trained from them).
    """

    def __init__(self, arch: FlowArch, params: ParamSet):
        self.arch = arch
        self.params = params
        self.layers = build_layers(arch)
        missing = {n for layer in self.layers for n in layer.net.weight_shapes()}
        for layer in self.layers:
            if layer.proj is not None:
                missing |= set(layer.proj.weight_shapes())
        missing -= set(params)
        if missing:
            raise ConfigError(f"parameter set is missing {sorted(missing)[:4]}...")

    def __repr__(self) -> str:
        return f"FlowStack({self.arch.mode}, K={self.arch.n_layers}, D={self.arch.channels})"

    def _rows(self, x, g):
        return to_rows(x, g, self.arch.channels, self.arch.embed_dim)

    def forward(self, x, g=None, *, logdet_sign: float = 1.0):
        """Map data to latent. Returns ``(z, logdet)`` with logdet per observation."""
        rows, g_rows, batch_shape, T = self._rows(x, g)
        z, ld = forward_rows(self.layers, self.params, rows, g_rows, logdet_sign=logdet_sign)
        z = z.data.reshape(np.shape(x))
        ld = ld.data.reshape(batch_shape + (T,)).sum(axis=-1)
        return z, (float(ld) if batch_shape == () else ld)

    def inverse(self, z, g=None):
        rows, g_rows, _, _ = self._rows(z, g)
        return inverse_rows(self.layers, self.params, rows, g_rows).data.reshape(np.shape(z))


def coupling_forward(layer: CouplingLayer, params: Mapping, x, g=None):
    """Single-layer forward on one ``(T, D)`` observation: ``(y, logdet)``."""
    E = layer.proj.embed_dim if layer.proj is not None else layer.net.d_in - layer.d
    rows, g_rows, _, _ = to_rows(x, g, layer.channels, E)
    y, ld = coupling_forward_rows(layer, params, rows, g_rows)
    return y.data.reshape(np.shape(x)), float(ld.data.sum())


def coupling_inverse(layer: CouplingLayer, params: Mapping, y, g=None):
    E = layer.proj.embed_dim if layer.proj is not None else layer.net.d_in - layer.d
    rows, g_rows, _, _ = to_rows(y, g, layer.channels, E)
    return coupling_inverse_rows(layer, params, rows, g_rows).data.reshape(np.shape(y))


def flow_forward(stack: FlowStack, x, g=None):
    return stack.forward(x, g)


def flow_inverse(stack: FlowStack, z, g=None):
    return stack.inverse(z, g)
