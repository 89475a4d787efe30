import json
from pathlib import Path

import numpy as np
import pytest

from snacflow.condnet import FlowArch, init_params, randomize_params
from snacflow.flowcore import FlowStack

GOLDEN = json.loads((Path(__file__).parent / "golden" / "values.json").read_text())


@pytest.fixture(scope="session")
def golden():
    return GOLDEN


def fd_logdet(fn, x, step=1e-6):
    """log|det| of the central-difference Jacobian of vec(fn(x))."""
    flat = x.ravel()
    J = np.empty((flat.size, flat.size))
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        J[:, i] = (fn((flat + e).reshape(x.shape)).ravel()
                   - fn((flat - e).reshape(x.shape)).ravel()) / (2 * step)
    return np.linalg.slogdet(J)[1]


def make_stack(mode, channels, n_layers, seed, *, embed_dim=3, hidden=8, scale=0.3):
    arch = FlowArch(channels=channels, n_layers=n_layers, mode=mode, embed_dim=embed_dim,
                    hidden=hidden)
    return FlowStack(arch, randomize_params(init_params(seed, arch), seed + 1000, scale))
