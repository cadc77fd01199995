"""Network engine tests: closed forms, finite-difference oracles, Adam, and
checkpoint round-trips."""

import numpy as np
import pytest

from distreward import nn


def fd_param_grads(net, params, x, upstream, h=1e-5):
    """Central finite differences of sum(forward(x) * upstream) w.r.t. every
    parameter coordinate. Independent oracle for backward()."""
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        flat = value.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(np.sum(nn.forward(net, params, x) * upstream))
            flat[i] = orig - h
            down = float(np.sum(nn.forward(net, params, x) * upstream))
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


class TestForward:
    def test_identity_layer(self):
        net = nn.Network("id", (3, 3), ("linear",))
        params = {"id/W0": np.eye(3), "id/b0": np.zeros(3)}
        x = np.array([1.5, -2.0, 0.25])
        np.testing.assert_array_equal(nn.forward(net, params, x), x)

    def test_zero_weights_give_bias(self):
        net = nn.Network("c", (4, 2), ("linear",))
        b = np.array([0.7, -1.2])
        params = {"c/W0": np.zeros((4, 2)), "c/b0": b}
        for x in (np.zeros(4), np.ones(4), np.arange(4.0)):
            np.testing.assert_array_equal(nn.forward(net, params, x), b)

    def test_two_layer_matches_straight_line_oracle(self):
        rng = np.random.default_rng(7)
        net = nn.mlp("m", (5, 8, 3))
        params = nn.init_params(net, rng)
        x = rng.normal(size=(6, 5))
        # independent straight-line reimplementation
        h = np.maximum(x @ params["m/W0"] + params["m/b0"], 0.0)
        want = h @ params["m/W1"] + params["m/b1"]
        np.testing.assert_allclose(nn.forward(net, params, x), want,
                                   rtol=0, atol=1e-12)

    def test_shape_mismatch_raises(self):
        net = nn.mlp("m", (5, 3))
        params = nn.init_params(net, np.random.default_rng(0))
        with pytest.raises(nn.ShapeError):
            nn.forward(net, params, np.zeros(4))

    def test_softplus_positive(self):
        net = nn.mlp("sp", (3, 4, 1), final="softplus")
        params = nn.init_params(net, np.random.default_rng(3))
        out = nn.forward(net, params, np.random.default_rng(4).normal(size=(20, 3)))
        assert np.all(out > 0.0)


class TestBackward:
    def test_zero_upstream_zero_grads(self):
        net = nn.mlp("m", (4, 6, 2))
        params = nn.init_params(net, np.random.default_rng(1))
        _, cache = nn.forward_cached(net, params, np.ones((3, 4)))
        grads, dx = nn.backward(net, params, cache, np.zeros((3, 2)))
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)
        np.testing.assert_array_equal(dx, 0.0)

    def test_single_layer_outer_product(self):
        net = nn.Network("s", (3, 2), ("linear",))
        params = {"s/W0": np.zeros((3, 2)), "s/b0": np.zeros(2)}
        x = np.array([[1.0, -2.0, 0.5]])
        u = np.array([[0.3, -0.7]])
        grads, _ = nn.backward(net, params,
                               nn.forward_cached(net, params, x)[1], u)
        np.testing.assert_allclose(grads["s/W0"], np.outer(x[0], u[0]),
                                   atol=1e-15)
        np.testing.assert_allclose(grads["s/b0"], u[0], atol=1e-15)

    def test_input_gradient_finite_difference(self):
        rng = np.random.default_rng(11)
        net = nn.mlp("m", (6, 10, 4), final="softplus")
        params = nn.init_params(net, rng)
        x = rng.normal(size=(1, 6))
        u = rng.normal(size=(1, 4))
        _, cache = nn.forward_cached(net, params, x)
        _, dx = nn.backward(net, params, cache, u)
        h = 1e-5
        for i in range(6):
            xp, xm = x.copy(), x.copy()
            xp[0, i] += h
            xm[0, i] -= h
            want = (np.sum(nn.forward(net, params, xp) * u)
                    - np.sum(nn.forward(net, params, xm) * u)) / (2 * h)
            assert rel_err(dx[0, i], want) < 1e-6


def test_gradient_check_100_random_nets():
    """Acceptance: backward vs central differences, rel err < 1e-6, 100 nets."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        depth = int(rng.integers(1, 4))  # up to 3 layers
        widths = [int(rng.integers(2, 7)) for _ in range(depth + 1)]
        final = ("linear", "softplus")[int(rng.integers(2))]
        net = nn.mlp(f"t{trial}", widths, final=final)
        params = nn.init_params(net, rng)
        # resample until every ReLU pre-activation is far from its kink, so
        # the central-difference probe (h=1e-5) stays on one linear piece
        while True:
            x = rng.normal(size=(2, widths[0]))
            _, (hs, zs) = nn.forward_cached(net, params, x)
            if all(np.min(np.abs(z)) > 1e-3 for z in zs):
                break
        u = rng.normal(size=(2, widths[-1]))
        _, cache = nn.forward_cached(net, params, x)
        grads, _ = nn.backward(net, params, cache, u)
        fd = fd_param_grads(net, params, x, u)
        for name in grads:
            err = np.max(rel_err(grads[name], fd[name]))
            worst = max(worst, float(err))
    assert worst < 1e-6, f"worst relative error {worst}"


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        params = {"w": np.array([1.0, -2.0])}
        state = nn.OptimState(lr=0.1)
        nn.opt_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.step == 1

    def test_first_step_is_minus_lr(self):
        # bias-corrected m/sqrt(v) == 1 on the first step for any constant g
        params = {"w": np.array([0.0])}
        state = nn.OptimState(lr=0.1)
        nn.opt_step(params, {"w": np.array([1.0])}, state)
        np.testing.assert_allclose(params["w"], [-0.1], rtol=1e-7)

    def test_converges_on_quadratic(self):
        params = {"w": np.array([0.0])}
        state = nn.OptimState(lr=0.3)
        for _ in range(100):
            grad = 2.0 * (params["w"] - 3.0)
            nn.opt_step(params, {"w": grad}, state)
        assert abs(params["w"][0] - 3.0) < 1e-2

    def test_non_finite_gradient_raises(self):
        params = {"w": np.array([0.0])}
        with pytest.raises(nn.NonFiniteError):
            nn.opt_step(params, {"w": np.array([np.nan])}, nn.OptimState())

    def test_deterministic_trajectory(self):
        def run():
            rng = np.random.default_rng(5)
            net = nn.mlp("d", (4, 8, 2))
            params = nn.init_params(net, rng)
            state = nn.OptimState(lr=1e-3)
            for _ in range(20):
                x = rng.normal(size=(8, 4))
                out, cache = nn.forward_cached(net, params, x)
                grads, _ = nn.backward(net, params, cache, out)
                nn.opt_step(params, grads, state)
            return params

        a, b = run(), run()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])


class TestCheckpoint:
    def test_round_trip_bitexact(self, tmp_path):
        rng = np.random.default_rng(9)
        net = nn.mlp("ck", (7, 5, 3))
        params = nn.init_params(net, rng)
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(path, params, meta={"kind": "test", "in_width": 7})
        loaded, meta = nn.load_checkpoint(path)
        assert meta == {"kind": "test", "in_width": 7}
        assert sorted(loaded) == sorted(params)
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k])

    def test_truncated_payload_raises(self, tmp_path):
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(path, {"w": np.ones((4, 4))})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            nn.load_checkpoint(path)

    def test_garbage_header_raises(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"\x00\x01\x02 not json\n" + b"\x00" * 64)
        with pytest.raises(ValueError, match="malformed|version"):
            nn.load_checkpoint(path)

    def test_save_deterministic(self, tmp_path):
        params = {"b": np.arange(3.0), "a": np.eye(2)}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        nn.save_checkpoint(p1, params)
        nn.save_checkpoint(p2, dict(reversed(params.items())))
        assert p1.read_bytes() == p2.read_bytes()
