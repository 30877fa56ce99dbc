import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adacnp.core.autodiff import Tape, backward
from adacnp.core.mlp import MlpParams
from adacnp.errors import ContractError, DimensionError, NumericalError
from adacnp.models import (
    VAR_FLOOR, ContextSet, GaussianPrediction, GpConfig, ModelConfig, TargetBatch,
    adacnp_predict, cnp_predict, decode, embed, encode_context, fit_gp, gaussian_nll,
    gp_predict, init_bundle, load_bundle, pack_bundle, save_bundle, score,
    softmax_weights, uniform_aggregate, unpack_bundle, weighted_aggregate,
)
from adacnp.models.bundle import ModelBundle

SMALL = ModelConfig(d_e=4, d_r=5, encoder_hidden=(6,), decoder_hidden=(7,),
                    embedding_hidden=(5,), scorer_hidden=(6,))


def relu(v):
    return v if v > 0 else 0.0


def oracle_net(net, x):
    """Loop-based forward pass over python lists."""
    h = [float(v) for v in x]
    n = len(net.weights)
    for k in range(n):
        w, b = net.weights[k], net.biases[k]
        h = [sum(w[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
        if k < n - 1:
            h = [relu(v) if net.activation == "relu" else math.tanh(v) for v in h]
    return h


def oracle_predict(bundle, cx, cy, tx, adaptive):
    """Chained straight-line evaluation of the whole predictor."""
    reps = [oracle_net(bundle.encoder, list(x) + list(y)) for x, y in zip(cx, cy)]
    mus, vars_, weights = [], [], []
    for xt in tx:
        if adaptive:
            et = oracle_net(bundle.embedding, xt)
            s = [oracle_net(bundle.scorer, oracle_net(bundle.embedding, xc) + et)[0] for xc in cx]
            top = max(s)
            e = [math.exp((v - top) / bundle.tau) for v in s]
            w = [v / sum(e) for v in e]
        else:
            w = [1.0 / len(reps)] * len(reps)
        r = [sum(w[i] * reps[i][d] for i in range(len(reps))) for d in range(bundle.d_r)]
        raw = oracle_net(bundle.decoder, list(xt) + r)
        d_y = bundle.d_y
        mus.append(raw[:d_y])
        vars_.append([math.log1p(math.exp(v)) + VAR_FLOOR for v in raw[d_y:]])
        weights.append(w)
    return np.array(mus), np.array(vars_), np.array(weights)


@pytest.fixture
def episode():
    rng = np.random.default_rng(42)
    bundle = init_bundle(3, 2, SMALL, rng)
    ctx = ContextSet(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))
    tgt = TargetBatch(rng.normal(size=(3, 3)), rng.normal(size=(3, 2)))
    return bundle, ctx, tgt


def zeroed(net, last_bias=None):
    weights = [np.zeros_like(w) for w in net.weights]
    biases = [np.zeros_like(b) for b in net.biases]
    if last_bias is not None:
        biases[-1] = np.asarray(last_bias, dtype=float)
    return MlpParams(net.layer_sizes, weights, biases, net.activation)


class TestBundle:
    def test_dimension_chain_checked(self, episode):
        bundle, _, _ = episode
        with pytest.raises(DimensionError):
            ModelBundle(bundle.encoder, bundle.embedding, bundle.scorer, bundle.encoder)

    def test_tau_positive(self, episode):
        bundle, _, _ = episode
        with pytest.raises(ContractError):
            ModelBundle(bundle.encoder, bundle.embedding, bundle.scorer, bundle.decoder, tau=0.0)

    def test_checkpoint_round_trip(self, episode, tmp_path):
        bundle, ctx, tgt = episode
        save_bundle(bundle, tmp_path / "b.bin")
        back = load_bundle(tmp_path / "b.bin")
        assert pack_bundle(back) == pack_bundle(bundle)
        np.testing.assert_array_equal(adacnp_predict(back, ctx, tgt)[0].mean,
                                      adacnp_predict(bundle, ctx, tgt)[0].mean)

    def test_checkpoint_header(self, episode):
        import struct

        bundle, _, _ = episode
        blob = pack_bundle(bundle)
        assert blob[:4] == b"ACNB"
        version, kind, d_x, d_y, d_e, d_r, tau, act = struct.unpack("<IIIIIIdI", blob[4:40])
        assert (version, kind, d_x, d_y, d_e, d_r, tau, act) == (1, 0, 3, 2, 4, 5, 1.0, 0)
        with pytest.raises(Exception):
            unpack_bundle(blob[:-8])


class TestEncoder:
    def test_zero_weights_give_bias(self, episode):
        bundle, ctx, _ = episode
        b = np.arange(5.0)
        bundle = ModelBundle(zeroed(bundle.encoder, b), bundle.embedding, bundle.scorer,
                             bundle.decoder)
        np.testing.assert_array_equal(encode_context(bundle, ctx), np.tile(b, (4, 1)))

    def test_duplicate_rows(self, episode):
        bundle, ctx, _ = episode
        dup = ContextSet(np.vstack([ctx.inputs, ctx.inputs[:1]]),
                         np.vstack([ctx.outputs, ctx.outputs[:1]]))
        reps = encode_context(bundle, dup)
        assert reps[0].tobytes() == reps[-1].tobytes()

    def test_oracle(self, episode):
        bundle, ctx, _ = episode
        reps = encode_context(bundle, ctx)
        for i in range(4):
            want = oracle_net(bundle.encoder, list(ctx.inputs[i]) + list(ctx.outputs[i]))
            np.testing.assert_allclose(reps[i], want, rtol=1e-13, atol=1e-14)

    def test_dimension_mismatch(self, episode):
        bundle, _, _ = episode
        with pytest.raises(DimensionError):
            encode_context(bundle, ContextSet(np.ones((2, 4)), np.ones((2, 2))))


class TestAggregation:
    def test_constant_rows(self):
        v = np.array([1.0, -2.0, 3.5])
        np.testing.assert_array_equal(uniform_aggregate(np.tile(v, (4, 1))), v)

    def test_symmetric_rows(self):
        v = np.array([1.0, -2.0, 3.5])
        np.testing.assert_array_equal(uniform_aggregate(np.stack([v, -v])), np.zeros(3))

    def test_mean_oracle(self):
        rows = np.random.default_rng(1).normal(size=(3, 4))
        want = [(rows[0, d] + rows[1, d] + rows[2, d]) / 3 for d in range(4)]
        np.testing.assert_allclose(uniform_aggregate(rows), want, rtol=1e-15)

    def test_empty(self):
        with pytest.raises(ContractError):
            uniform_aggregate(np.zeros((0, 3)))

    def test_one_hot_selects(self):
        reps = np.random.default_rng(2).normal(size=(4, 3))
        np.testing.assert_array_equal(weighted_aggregate(np.array([0, 0, 1.0, 0]), reps), reps[2])

    def test_uniform_weights_reduce_to_mean(self):
        reps = np.random.default_rng(3).normal(size=(4, 3))
        got = weighted_aggregate(np.full(4, 0.25), reps)
        np.testing.assert_allclose(got, uniform_aggregate(reps), rtol=1e-15, atol=1e-16)

    def test_weighted_oracle(self):
        rng = np.random.default_rng(4)
        w, reps = rng.dirichlet(np.ones(5)), rng.normal(size=(5, 3))
        want = [sum(w[i] * reps[i, d] for i in range(5)) for d in range(3)]
        np.testing.assert_allclose(weighted_aggregate(w, reps), want, rtol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            weighted_aggregate(np.ones(3) / 3, np.ones((4, 2)))


class TestEmbedAndScore:
    def test_identity_embedding(self):
        net = MlpParams((3, 3), [np.eye(3)], [np.zeros(3)])
        x = np.array([[0.1, -2.0, 4.0]])
        rng = np.random.default_rng(0)
        b = init_bundle(3, 1, ModelConfig(d_e=3, d_r=2, encoder_hidden=(), decoder_hidden=(),
                                          embedding_hidden=(), scorer_hidden=()), rng)
        b = ModelBundle(b.encoder, net, b.scorer, b.decoder)
        np.testing.assert_array_equal(embed(b, x), x)

    def test_identical_inputs(self, episode):
        bundle, _, _ = episode
        e = embed(bundle, np.tile([0.3, 0.1, -0.5], (2, 1)))
        assert e[0].tobytes() == e[1].tobytes()

    def test_embed_oracle(self, episode):
        bundle, ctx, _ = episode
        e = embed(bundle, ctx.inputs)
        for i in range(len(ctx)):
            np.testing.assert_allclose(e[i], oracle_net(bundle.embedding, ctx.inputs[i]),
                                       rtol=1e-13, atol=1e-14)

    def test_constant_scorer(self, episode):
        bundle, _, _ = episode
        bundle = ModelBundle(bundle.encoder, bundle.embedding, zeroed(bundle.scorer, [0.7]),
                             bundle.decoder)
        rng = np.random.default_rng(5)
        for _ in range(5):
            assert score(bundle, rng.normal(size=4), rng.normal(size=4)) == 0.7

    def test_swap_identical(self, episode):
        bundle, _, _ = episode
        e = np.array([0.2, -0.1, 0.4, 1.0])
        assert score(bundle, e, e.copy()) == score(bundle, e.copy(), e)

    def test_score_oracle(self, episode):
        bundle, _, _ = episode
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=4), rng.normal(size=4)
        assert score(bundle, a, b) == pytest.approx(oracle_net(bundle.scorer, list(a) + list(b))[0],
                                                    rel=1e-13)

    def test_score_dims(self, episode):
        bundle, _, _ = episode
        with pytest.raises(DimensionError):
            score(bundle, np.ones(3), np.ones(4))


class TestSoftmax:
    def test_equal_scores_uniform(self):
        np.testing.assert_allclose(softmax_weights(np.full(5, 2.3), 0.7), np.full(5, 0.2), rtol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax_weights(np.array([math.log(2), 0.0]), 1.0),
                                   [2 / 3, 1 / 3], rtol=1e-15)

    def test_half_temperature(self):
        e2 = math.exp(2.0)
        want = [e2 / (e2 + 1), 1 / (e2 + 1)]
        got = softmax_weights(np.array([1.0, 0.0]), 0.5)
        np.testing.assert_allclose(got, want, rtol=1e-15)
        np.testing.assert_allclose(got, [0.88080, 0.11920], atol=5e-6)

    def test_tau_must_be_positive(self):
        with pytest.raises(ContractError):
            softmax_weights(np.zeros(3), 0.0)
        with pytest.raises(ContractError):
            softmax_weights(np.zeros(3), -1.0)

    def test_huge_scores_stable(self):
        w = softmax_weights(np.array([1000.0, 999.0]), 1.0)
        assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(1e-3, 1e3))
    def test_rows_are_distributions(self, scores, tau):
        w = softmax_weights(np.array(scores), tau)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w >= 0) and np.all(w <= 1)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=10, unique=True),
           st.floats(0.05, 5.0), st.floats(1.1, 4.0))
    def test_sharpening(self, scores, tau, factor):
        s = np.array(scores)
        if np.sort(s)[-1] - np.sort(s)[-2] < 1e-6:
            return
        before, after = softmax_weights(s, tau).max(), softmax_weights(s, tau / factor).max()
        assert after >= before
        if before < 1.0 - 1e-9:
            assert after > before

    def test_flattening(self):
        s = np.random.default_rng(0).normal(size=12) * 3
        assert np.max(np.abs(softmax_weights(s, 1e6) - 1 / 12)) < 1e-6


class TestDecode:
    def _bundle(self, episode, last_bias):
        bundle, _, _ = episode
        return ModelBundle(bundle.encoder, bundle.embedding, bundle.scorer,
                           zeroed(bundle.decoder, last_bias))

    def test_zero_raw_variance(self, episode):
        b = self._bundle(episode, [0.0, 0.0, 0.0, 0.0])
        _, var = decode(b, np.ones(3), np.ones(5))
        np.testing.assert_allclose(var, math.log(2) + VAR_FLOOR, rtol=1e-15)

    def test_large_negative_raw_variance(self, episode):
        b = self._bundle(episode, [0.0, 0.0, -800.0, -800.0])
        _, var = decode(b, np.ones(3), np.ones(5))
        np.testing.assert_array_equal(var, [VAR_FLOOR, VAR_FLOOR])

    def test_oracle(self, episode):
        bundle, _, tgt = episode
        r = np.random.default_rng(7).normal(size=5)
        mu, var = decode(bundle, tgt.inputs[0], r)
        raw = oracle_net(bundle.decoder, list(tgt.inputs[0]) + list(r))
        np.testing.assert_allclose(mu, raw[:2], rtol=1e-13)
        np.testing.assert_allclose(var, [math.log1p(math.exp(v)) + VAR_FLOOR for v in raw[2:]],
                                   rtol=1e-13)

    def test_dims(self, episode):
        bundle, _, _ = episode
        with pytest.raises(DimensionError):
            decode(bundle, np.ones(4), np.ones(5))
        with pytest.raises(DimensionError):
            decode(bundle, np.ones(3), np.ones(6))


class TestPredictors:
    def test_single_context_cnp_equals_adacnp(self, episode):
        bundle, ctx, tgt = episode
        one = ContextSet(ctx.inputs[:1], ctx.outputs[:1])
        pa, w = adacnp_predict(bundle, one, tgt)
        pc = cnp_predict(bundle, one, tgt)
        assert np.all(w == 1.0)
        np.testing.assert_array_equal(pa.mean, pc.mean)
        np.testing.assert_array_equal(pa.var, pc.var)
        mu, var = decode(bundle, tgt.inputs, encode_context(bundle, one)[0])
        np.testing.assert_array_equal(pa.mean, mu)

    def test_permutation(self, episode):
        bundle, ctx, tgt = episode
        perm = np.array([2, 0, 3, 1])
        pctx = ContextSet(ctx.inputs[perm], ctx.outputs[perm])
        for fn in (cnp_predict, lambda *a: adacnp_predict(*a)[0]):
            a, b = fn(bundle, ctx, tgt), fn(bundle, pctx, tgt)
            np.testing.assert_allclose(a.mean, b.mean, rtol=0, atol=1e-14)
            np.testing.assert_allclose(a.var, b.var, rtol=0, atol=1e-14)
        _, w = adacnp_predict(bundle, ctx, tgt)
        _, pw = adacnp_predict(bundle, pctx, tgt)
        np.testing.assert_allclose(pw, w[:, perm], atol=1e-15)

    def test_chained_oracle(self, episode):
        bundle, ctx, tgt = episode
        for adaptive in (False, True):
            mu, var, w = oracle_predict(bundle, ctx.inputs, ctx.outputs, tgt.inputs, adaptive)
            if adaptive:
                pred, weights = adacnp_predict(bundle, ctx, tgt)
                np.testing.assert_allclose(weights, w, rtol=1e-12)
            else:
                pred = cnp_predict(bundle, ctx, tgt)
            np.testing.assert_allclose(pred.mean, mu, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(pred.var, var, rtol=1e-12)

    def test_temperature_limit(self, episode):
        bundle, ctx, tgt = episode
        hot = ModelBundle(bundle.encoder, bundle.embedding, bundle.scorer, bundle.decoder, tau=1e6)
        pred, w = adacnp_predict(hot, ctx, tgt)
        assert np.max(np.abs(w - 0.25)) < 1e-6
        base = cnp_predict(hot, ctx, tgt)
        assert np.max(np.abs(pred.mean - base.mean)) < 1e-6
        assert np.max(np.abs(pred.var - base.var)) < 1e-6

    def test_weights_rows(self, episode):
        bundle, ctx, tgt = episode
        _, w = adacnp_predict(bundle, ctx, tgt)
        assert w.shape == (3, 4)
        assert np.all(np.abs(w.sum(1) - 1) <= 1e-12) and np.all(w >= 0)

    def test_variance_floor(self, episode):
        bundle, ctx, tgt = episode
        assert np.all(cnp_predict(bundle, ctx, tgt).var >= VAR_FLOOR)
        assert np.all(adacnp_predict(bundle, ctx, tgt)[0].var >= VAR_FLOOR)

    def test_end_to_end_gradients(self, episode):
        bundle, ctx, tgt = episode

        def loss(b):
            return gaussian_nll(adacnp_predict(b, ctx, tgt)[0], tgt.outputs)

        tape = Tape()
        grads = backward(tape, loss(bundle.lift(tape)))
        params = bundle.params()
        for name, value in params.items():
            for idx in np.ndindex(value.shape):
                p = {k: v.copy() for k, v in params.items()}
                p[name][idx] += 1e-5
                up = loss(bundle.with_params(p))
                p[name][idx] -= 2e-5
                down = loss(bundle.with_params(p))
                fd = (up - down) / 2e-5
                an = grads[name][idx]
                assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-6), (name, idx, fd, an)


class TestGaussianNll:
    def test_standard_normal_at_mean(self):
        pred = GaussianPrediction(np.zeros((1, 1)), np.ones((1, 1)))
        assert gaussian_nll(pred, np.zeros((1, 1))) == pytest.approx(0.918939, abs=1e-6)
        assert gaussian_nll(pred, np.zeros((1, 1))) == pytest.approx(0.5 * math.log(2 * math.pi),
                                                                     rel=1e-15)

    def test_unit_deviation(self):
        pred = GaussianPrediction(np.zeros((1, 1)), np.ones((1, 1)))
        assert gaussian_nll(pred, np.ones((1, 1))) == pytest.approx(1.418939, abs=1e-6)

    def test_density_oracle(self):
        rng = np.random.default_rng(8)
        mu, var, y = rng.normal(size=(5, 2)), rng.uniform(0.1, 3, size=(5, 2)), rng.normal(size=(5, 2))
        dens = [math.exp(-(y[i, d] - mu[i, d]) ** 2 / (2 * var[i, d])) / math.sqrt(2 * math.pi * var[i, d])
                for i in range(5) for d in range(2)]
        want = -sum(math.log(p) for p in dens) / 10
        assert gaussian_nll(GaussianPrediction(mu, var), y) == pytest.approx(want, rel=1e-13)

    def test_nonpositive_variance(self):
        with pytest.raises(ContractError):
            gaussian_nll(GaussianPrediction(np.zeros((1, 1)), np.zeros((1, 1))), np.zeros((1, 1)))


class TestGp:
    def test_interpolates_without_noise(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-2, 2, size=(6, 1))
        y = np.sin(2 * x)
        cfg = GpConfig(length_scale=0.7, signal_var=1.0, noise_var=0.0)
        pred = gp_predict(cfg, ContextSet(x, y), TargetBatch(x), var_floor=0.0)
        np.testing.assert_allclose(pred.mean, y, atol=1e-8)
        assert np.all(np.abs(pred.var) <= 1e-8)

    def test_reverts_to_prior_far_away(self):
        x = np.array([[0.0], [0.5], [1.0]])
        cfg = GpConfig(length_scale=0.3, signal_var=2.5, noise_var=0.0)
        pred = gp_predict(cfg, ContextSet(x, np.ones((3, 1))), TargetBatch(np.array([[50.0]])))
        assert abs(pred.var[0, 0] - 2.5) < 1e-6
        assert abs(pred.mean[0, 0]) < 1e-6

    def test_dense_inverse_oracle(self):
        x = np.array([-1.0, 0.2, 1.3])
        y = np.array([0.5, -0.3, 1.1])
        xs = np.array([0.0, 2.0])
        cfg = GpConfig(length_scale=0.8, signal_var=1.3, noise_var=0.05)
        k = lambda a, b: 1.3 * math.exp(-0.5 * (a - b) ** 2 / 0.64)
        K = np.array([[k(a, b) for b in x] for a in x]) + 0.05 * np.eye(3)
        Kinv = np.linalg.inv(K)
        pred = gp_predict(cfg, ContextSet(x[:, None], y[:, None]), TargetBatch(xs[:, None]))
        for j, t in enumerate(xs):
            ks = np.array([k(t, b) for b in x])
            assert pred.mean[j, 0] == pytest.approx(ks @ Kinv @ y, rel=1e-8)
            assert pred.var[j, 0] == pytest.approx(1.3 - ks @ Kinv @ ks + 0.05, rel=1e-8)

    def test_fit_prefers_true_scale(self):
        rng = np.random.default_rng(10)
        x = np.sort(rng.uniform(0, 10, size=25))[:, None]
        y = np.sin(x) + 0.05 * rng.normal(size=x.shape)
        cfg = fit_gp(ContextSet(x, y))
        assert 0.3 < cfg.length_scale < 3.0
        assert cfg.noise_var < 0.1

    def test_duplicate_inputs_need_jitter_or_fail(self):
        x = np.zeros((3, 1))
        pred = gp_predict(GpConfig(1.0, 1.0, 0.0), ContextSet(x, np.ones((3, 1))),
                          TargetBatch(np.zeros((1, 1))))
        assert np.isfinite(pred.mean).all()

    def test_bad_config(self):
        with pytest.raises(ContractError):
            GpConfig(length_scale=0.0)
        with pytest.raises(ContractError):
            GpConfig(noise_var=-1.0)

    def test_floor(self):
        x = np.array([[0.0], [1.0]])
        pred = gp_predict(GpConfig(1.0, 1.0, 0.0), ContextSet(x, np.ones((2, 1))), TargetBatch(x))
        assert np.all(pred.var >= VAR_FLOOR)


def test_not_positive_definite_reports_condition(monkeypatch):
    from adacnp.models import gp

    monkeypatch.setattr(gp, "MAX_JITTER", 1e-12)
    x = np.zeros((3, 1))
    with pytest.raises(NumericalError, match="condition number"):
        gp.gp_predict(gp.GpConfig(1.0, 1.0, 0.0), ContextSet(x, np.ones((3, 1))),
                      TargetBatch(x))
