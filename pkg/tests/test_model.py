import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lilan import model as M
from lilan import nets
from lilan.exceptions import ShapeError, TransformDomainError
from lilan.problems import robertson_problem
from lilan.transforms import identity_transforms


def direct_net_oracle(w1, w, b, c1, t, x0, p):
    """Independent evaluation of the one-hidden-layer network on (t, x0, p)."""
    z = np.concatenate([[t], x0, p])
    return w1 @ np.tanh(w @ z + b) + c1


def block_diag_mlp(blocks, shared_input=False):
    """Concatenate equally deep MLPs into one block-structured MLP.

    With shared_input the first-layer weights stack vertically (all
    blocks see the same input); otherwise every layer is block diagonal.
    """
    depth = len(blocks[0].weights)
    sizes = list(blocks[0].layer_sizes)
    weights, biases = [], []
    for k in range(depth):
        ws = [blk.weights[k] for blk in blocks]
        bs = [blk.biases[k] for blk in blocks]
        if k == 0 and shared_input:
            weights.append(np.vstack(ws))
        else:
            rows = sum(w.shape[0] for w in ws)
            cols = sum(w.shape[1] for w in ws)
            big = np.zeros((rows, cols))
            r = c = 0
            for w in ws:
                big[r : r + w.shape[0], c : c + w.shape[1]] = w
                r += w.shape[0]
                c += w.shape[1]
            weights.append(big)
        biases.append(np.concatenate(bs))
    layer_sizes = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    return nets.Mlp(layer_sizes, weights, biases)


class TestLatentSolution:
    def test_zero_warp_returns_anchor(self):
        e = np.array([1.0, -2.0])
        assert np.array_equal(M.latent_solution(e, np.array([5.0, 6.0]), np.zeros(2)), e)

    def test_zero_slope_returns_anchor(self):
        e = np.array([1.0, -2.0])
        for tau in (np.zeros(2), np.ones(2), np.array([3.0, -9.0])):
            assert np.array_equal(M.latent_solution(e, np.zeros(2), tau), e)

    def test_direct_substitution(self):
        out = M.latent_solution([1.0, 2.0], [3.0, 4.0], [0.5, 0.25])
        assert np.allclose(out, [2.5, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            M.latent_solution([1.0], [1.0, 2.0], [1.0, 2.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=10**6))
    def test_affine_in_each_warp_channel(self, m, seed):
        # second differences along any warp channel vanish identically
        rng = np.random.default_rng(seed)
        e, c = rng.normal(size=m), rng.normal(size=m)
        tau = rng.normal(size=m)
        step = rng.normal(size=m)
        y0 = M.latent_solution(e, c, tau)
        y1 = M.latent_solution(e, c, tau + step)
        y2 = M.latent_solution(e, c, tau + 2 * step)
        assert np.max(np.abs(y2 - 2 * y1 + y0)) < 1e-12


class TestDirectEquivalence:
    def test_matches_direct_net(self):
        rng = np.random.default_rng(42)
        n_x, n_p, m = 3, 3, 7
        w1 = rng.normal(size=(n_x, m))
        w = rng.normal(size=(m, 1 + n_x + n_p))
        b = rng.normal(size=m)
        c1 = rng.normal(size=n_x)
        model = M.build_direct_equivalent(w1, w, b, c1)
        worst = 0.0
        for _ in range(1000):
            t = rng.normal()
            x0 = rng.normal(size=n_x)
            p = rng.normal(size=n_p)
            got = M.predict(model, x0, p, t)
            want = direct_net_oracle(w1, w, b, c1, t, x0, p)
            worst = max(worst, float(np.max(np.abs(got - want))))
        assert worst <= 1e-12

    def test_zero_time_weight_is_time_independent(self):
        rng = np.random.default_rng(1)
        w1 = rng.normal(size=(2, 4))
        w = rng.normal(size=(4, 1 + 2 + 1))
        w[:, 0] = 0.0
        model = M.build_direct_equivalent(w1, w, rng.normal(size=4), rng.normal(size=2))
        x0, p = rng.normal(size=2), rng.normal(size=1)
        a = M.predict(model, x0, p, 0.0)
        b2 = M.predict(model, x0, p, 123.4)
        assert np.array_equal(a, b2)

    def test_zero_output_weight_is_constant(self):
        rng = np.random.default_rng(2)
        c1 = rng.normal(size=2)
        model = M.build_direct_equivalent(
            np.zeros((2, 4)), rng.normal(size=(4, 4)), rng.normal(size=4), c1
        )
        out = M.predict(model, rng.normal(size=2), rng.normal(size=1), 3.3)
        assert np.allclose(out, c1, atol=1e-15)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            M.build_direct_equivalent(np.zeros((2, 4)), np.zeros((3, 4)), np.zeros(3), np.zeros(2))


def tiny_model(variant, n_x=3, n_p=2, m_b=4, seed=0, use_tau=True, layout="x0_p"):
    class Stub:
        pass

    prob = Stub()
    prob.n_x, prob.n_p = n_x, n_p
    prob.encoder_layout = layout
    prob.conservation_mode = "none"
    prob.arch = {
        "variant": variant,
        "latent_per_block": m_b,
        "latent_dim": m_b,
        "encoder_hidden": [6],
        "slope_hidden": [6],
        "tau_hidden": [6],
        "decoder_hidden": [6],
    }
    return M.build_model(prob, seed=seed, variant=variant, use_tau=use_tau)


class TestVariants:
    @pytest.mark.parametrize("variant", M.VARIANTS)
    def test_shapes(self, variant):
        model = tiny_model(variant)
        rng = np.random.default_rng(0)
        out = M.predict(model, rng.normal(size=3), rng.normal(size=2), 0.5)
        assert out.shape == (3,)
        out = M.predict_batch(model, rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), [0.1, 0.7])
        assert out.shape == (5, 2, 3)

    def test_independent_equals_block_full(self):
        # replicate the per-component nets into one block-structured full model
        indep = tiny_model("independent", n_x=3, n_p=2, m_b=4, seed=7)
        full_e = block_diag_mlp(indep.state_encoders, shared_input=True)
        full_c = block_diag_mlp(indep.slope_encoders, shared_input=True)
        full_tau = block_diag_mlp(indep.time_warps, shared_input=True)
        full_dec = block_diag_mlp(indep.decoders, shared_input=False)
        full = M.LiLaNModel(
            variant="full",
            n_x=3,
            n_p=2,
            latent_dim=12,
            encoder_layout="x0_p",
            conservation_mode="none",
            transforms=identity_transforms(),
            use_tau=True,
            state_encoders=[full_e],
            slope_encoders=[full_c],
            time_warps=[full_tau],
            decoders=[full_dec],
            warp_gains=[np.concatenate(indep.warp_gains)],
        )
        M.validate_model(full)
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(6, 3))
        p = rng.normal(size=(6, 2))
        times = rng.uniform(0, 1, size=5)
        a = M.predict_batch(indep, x0, p, times)
        b = M.predict_batch(full, x0, p, times)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_no_tau_matches_frozen_warp(self):
        # a warp net emitting exactly the rescaled time reproduces predict_no_tau
        model = tiny_model("full", n_x=2, n_p=1, m_b=5, seed=9)
        d_in = model.encoder_width
        m = model.latent_dim
        w = np.zeros((m, 1 + d_in))
        w[:, 0] = 1.0
        model.time_warps[0] = nets.Mlp([1 + d_in, m], [w], [np.zeros(m)])
        model.warp_gains[0] = np.ones(m)
        rng = np.random.default_rng(4)
        x0, p = rng.normal(size=2), rng.normal(size=1)
        times = rng.uniform(0, 1, size=7)
        a = M.predict(model, x0, p, times)
        b = M.predict_no_tau(model, x0, p, times)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_no_tau_at_zero_decodes_anchor(self):
        model = tiny_model("full", n_x=2, n_p=1, m_b=5, seed=10)
        x0, p = np.array([0.3, -0.1]), np.array([0.5])
        enc_in = M.encoder_inputs(model, x0[None, :], p[None, :])
        anchor = nets.forward(model.state_encoders[0], enc_in)
        want = nets.forward(model.decoders[0], anchor)
        got = M.predict_no_tau(model, x0, p, 0.0)
        assert np.allclose(got, want[0], atol=1e-14)


class TestConservation:
    def test_softmax_sums_to_constant(self):
        model = tiny_model("independent", n_x=3, n_p=3, m_b=5, seed=1)
        model.conservation_mode = "softmax_scaled"
        rng = np.random.default_rng(8)
        x0 = np.tile([1.0, 0.0, 0.0], (64, 1))
        p = rng.normal(size=(64, 3))
        out = M.predict_batch(model, x0, p, rng.uniform(0, 1, size=11))
        sums = out.sum(axis=-1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12
        assert np.all(out > 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_softmax_sums_for_any_inputs(self, seed):
        model = tiny_model("full", n_x=3, n_p=2, m_b=4, seed=2)
        model.conservation_mode = "softmax_scaled"
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(0.1, 2.0, size=(4, 3))
        p = rng.normal(size=(4, 2))
        out = M.predict_batch(model, x0, p, rng.uniform(0, 1, size=3))
        want = x0.sum(axis=1)[:, None]
        assert np.max(np.abs(out.sum(axis=-1) - want)) <= 1e-12 * np.max(want)


class TestEmbedding:
    def test_zero_maps_to_log2(self):
        pair = M.make_embedding(np.random.default_rng(0).normal(size=(5, 3)))
        z = M.embed(pair, np.zeros(3))
        assert np.allclose(z, np.log(2.0))

    def test_round_trip_1000(self):
        rng = np.random.default_rng(11)
        pair = M.make_embedding(rng.normal(size=(5, 3)))
        worst = 0.0
        for _ in range(1000):
            y = rng.normal(size=3)
            back = M.embed_inverse(pair, M.embed(pair, y))
            worst = max(worst, float(np.max(np.abs(back - y))))
        assert worst <= 1e-10

    def test_orthonormal_columns_exact(self):
        q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(5, 3)))
        pair = M.make_embedding(q)
        assert np.allclose(pair.pinv, q.T, atol=1e-12)
        y = np.array([0.4, -1.1, 2.0])
        assert np.max(np.abs(M.embed_inverse(pair, M.embed(pair, y)) - y)) <= 1e-12

    def test_domain_error(self):
        pair = M.make_embedding(np.eye(3))
        with pytest.raises(TransformDomainError):
            M.embed_inverse(pair, np.array([0.5, -0.1, 0.2]))

    def test_rank_deficient_rejected(self):
        a = np.ones((5, 3))
        with pytest.raises(ShapeError):
            M.make_embedding(a)

    def test_batched(self):
        rng = np.random.default_rng(5)
        pair = M.make_embedding(rng.normal(size=(6, 2)))
        ys = rng.normal(size=(40, 2))
        back = M.embed_inverse(pair, M.embed(pair, ys))
        assert np.max(np.abs(back - ys)) <= 1e-10


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = tiny_model("independent", n_x=3, n_p=2, m_b=4, seed=13)
        model.warp_gains = [g + 0.25 for g in model.warp_gains]
        M.save_model(model, tmp_path / "m")
        loaded = M.load_model(tmp_path / "m")
        rng = np.random.default_rng(0)
        x0, p = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        times = rng.uniform(0, 1, size=6)
        assert np.array_equal(
            M.predict_batch(model, x0, p, times), M.predict_batch(loaded, x0, p, times)
        )

    def test_manifest_fields(self, tmp_path):
        import json

        model = tiny_model("full")
        M.save_model(model, tmp_path / "m")
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        for key in ("variant", "latent_dim", "n_x", "n_p", "transforms",
                    "conservation_mode", "nets"):
            assert key in manifest


def test_robertson_model_parameter_total():
    prob = robertson_problem()
    model = M.build_model(prob, seed=0)
    assert M.model_param_count(model) == 3423


def test_robertson_no_tau_parameter_total():
    prob = robertson_problem()
    model = M.build_model(prob, seed=0, use_tau=False)
    assert M.model_param_count(model) == 3414
