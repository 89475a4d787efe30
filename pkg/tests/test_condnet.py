import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snacflow.condnet import (FlowArch, init_params, layer_net, layer_proj, project_mv,
                              randomize_params, scale_bias)
from snacflow.errors import ConfigError


def snac_arch(**kw):
    return FlowArch(**{"channels": 4, "n_layers": 1, "mode": "snac", "embed_dim": 16,
                       "hidden": 8, **kw})


class TestScaleBias:
    def test_zero_network(self):
        arch = snac_arch()
        params = init_params(0, arch).map(lambda _k, v: np.zeros_like(v))
        s, b = scale_bias(params, layer_net(arch, 0), np.random.default_rng(0).normal(size=(5, 2)))
        assert np.all(s.data == 0) and np.all(b.data == 0)

    def test_snac_mode_rejects_embedding(self):
        arch = snac_arch()
        with pytest.raises(ConfigError):
            scale_bias(init_params(0, arch), layer_net(arch, 0), np.zeros((1, 2)),
                       np.zeros((1, 16)), "snac")

    def test_baseline_mode_requires_embedding(self):
        arch = snac_arch(mode="baseline")
        with pytest.raises(ConfigError):
            scale_bias(init_params(0, arch), layer_net(arch, 0), np.zeros((1, 2)), None,
                       "baseline")

    def test_baseline_input_width(self):
        arch = snac_arch(mode="baseline")
        assert layer_net(arch, 0).d_in == 2 + 16
        s, b = scale_bias(init_params(0, arch), layer_net(arch, 0), np.zeros((3, 2)),
                          np.ones((3, 16)), "baseline")
        assert s.shape == b.shape == (3, 2)

    def test_golden_seed_42(self, golden):
        arch = snac_arch()
        params = randomize_params(init_params(42, arch), 42)
        ref = golden["scale_bias"]
        s, b = scale_bias(params, layer_net(arch, 0), np.array(ref["x"]))
        np.testing.assert_allclose(s.data, ref["s"], rtol=1e-12)
        np.testing.assert_allclose(b.data, ref["b"], rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 30.0), st.floats(0.5, 6.0))
    def test_clamp_invariant(self, seed, scale, clamp):
        arch = snac_arch(clamp=clamp)
        params = randomize_params(init_params(seed, arch), seed, scale)
        x = np.random.default_rng(seed).normal(0, 10, size=(20, 2))
        s, _ = scale_bias(params, layer_net(arch, 0), x)
        assert np.all(np.abs(s.data) <= clamp)


class TestProjection:
    def test_zero_projection(self):
        arch = snac_arch()
        m, v = project_mv(init_params(0, arch), layer_proj(arch, 0), np.ones(16))
        assert np.all(m.data == 0) and np.all(v.data == 0)

    def test_identity_projection(self):
        arch = FlowArch(channels=2, n_layers=1, embed_dim=2, hidden=4)
        proj = layer_proj(arch, 0)
        params = init_params(0, arch).replace(**{proj.names[0]: np.eye(2)})
        m, v = project_mv(params, proj, np.array([1.0, -1.0]))
        np.testing.assert_array_equal(m.data, [1.0, -1.0])
        np.testing.assert_array_equal(v.data, [0.0, 0.0])

    def test_length_mismatch(self):
        arch = snac_arch()
        with pytest.raises(ConfigError):
            project_mv(init_params(0, arch), layer_proj(arch, 0), np.ones(15))

    def test_golden(self, golden):
        arch = snac_arch()
        params = randomize_params(init_params(42, arch), 42)
        ref = golden["project_mv"]
        m, v = project_mv(params, layer_proj(arch, 0), np.array(ref["g"]))
        np.testing.assert_allclose(m.data, ref["m"], rtol=1e-12)
        np.testing.assert_allclose(v.data, ref["v"], rtol=1e-12)

    def test_rows_are_constant_for_a_repeated_embedding(self):
        arch = snac_arch()
        params = randomize_params(init_params(1, arch), 2)
        g = np.random.default_rng(3).normal(size=16)
        m, v = project_mv(params, layer_proj(arch, 0), np.tile(g, (5, 1)))
        assert np.all(m.data == m.data[0]) and np.all(v.data == v.data[0])


class TestInitParams:
    def test_same_seed_bit_identical(self):
        arch = snac_arch(n_layers=3)
        assert init_params(7, arch).equal(init_params(7, arch))

    def test_different_seeds_differ_in_hidden_weights(self):
        arch = snac_arch(n_layers=2)
        a, b = init_params(1, arch), init_params(2, arch)
        assert not np.array_equal(a["layer00.net.w0"], b["layer00.net.w0"])
        assert not np.array_equal(a["layer01.net.w1"], b["layer01.net.w1"])

    def test_final_layers_and_projections_are_zero(self):
        arch = snac_arch(n_layers=2, depth=2)
        ps = init_params(3, arch)
        for k in range(2):
            assert np.all(ps[f"layer{k:02d}.net.w2"] == 0)
            for name in layer_proj(arch, k).names:
                assert np.all(ps[name] == 0)

    def test_glorot_bounds(self):
        arch = snac_arch(hidden=32)
        w = init_params(0, arch)["layer00.net.w1"]
        limit = np.sqrt(6.0 / 64)
        assert np.all(np.abs(w) <= limit) and np.abs(w).max() > 0.8 * limit

    def test_baseline_has_no_projection(self):
        ps = init_params(0, snac_arch(mode="baseline"))
        assert not any(".proj." in k for k in ps)

    @pytest.mark.parametrize("kw", [{"channels": 1}, {"split": 0}, {"split": 4},
                                    {"embed_dim": 0}, {"hidden": 0}, {"depth": 0},
                                    {"mode": "film"}])
    def test_invalid_dims(self, kw):
        with pytest.raises(ConfigError):
            snac_arch(**kw)
