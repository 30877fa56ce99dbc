import numpy as np
import pytest

from adacnp.errors import ContractError, NumericalError
from adacnp.metrics import evaluate_prediction
from adacnp.models import ContextSet, GaussianPrediction, ModelConfig, TargetBatch, pack_bundle
from adacnp.training import (
    GpBaseline, LossCurve, Pool, TrainConfig, check_no_leakage, evaluate, sample_context_idx,
    sample_episode, train,
)

TINY = ModelConfig(d_e=4, d_r=8, encoder_hidden=(8,), decoder_hidden=(8,),
                   embedding_hidden=(6,), scorer_hidden=(6,))


def make_pool(n=60, seed=0, extreme_every=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(n, 1))
    y = np.sin(2 * x) + 0.1 * rng.normal(size=(n, 1))
    ext = None
    if extreme_every:
        ext = np.arange(n) % extreme_every == 0
    return Pool(x, y, ext)


class TestEpisodes:
    def test_exhaustion(self):
        pool = make_pool(12)
        cfg = TrainConfig(nc_range=(5, 5), nt_range=(7, 7))
        ep = sample_episode(pool, cfg, np.random.default_rng(0))
        assert sorted(np.concatenate([ep.context_idx, ep.target_idx]).tolist()) == list(range(12))
        assert not set(ep.context_idx) & set(ep.target_idx)

    def test_pool_too_small(self):
        with pytest.raises(ContractError):
            sample_episode(make_pool(10), TrainConfig(nc_range=(5, 5), nt_range=(6, 6)),
                           np.random.default_rng(0))

    def test_deterministic(self):
        pool = make_pool()
        a = sample_episode(pool, TrainConfig(), np.random.default_rng(4))
        b = sample_episode(pool, TrainConfig(), np.random.default_rng(4))
        np.testing.assert_array_equal(a.context_idx, b.context_idx)
        np.testing.assert_array_equal(a.target_idx, b.target_idx)

    def test_uniform_membership(self):
        pool = make_pool(100)
        cfg = TrainConfig(nc_range=(5, 20), nt_range=(10, 20))
        rng = np.random.default_rng(5)
        counts = np.zeros(100)
        sizes = []
        draws = 10_000
        for _ in range(draws):
            ep = sample_episode(pool, cfg, rng)
            counts[ep.context_idx] += 1
            sizes.append(len(ep.context_idx))
        p = np.mean(sizes) / 100
        se = np.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(counts / draws - p) < 3 * se + 1e-3)
        assert set(sizes) == set(range(5, 21))

    def test_extreme_quota(self):
        pool = make_pool(100, extreme_every=10)
        rng = np.random.default_rng(6)
        for _ in range(50):
            idx = sample_context_idx(pool, 12, rng, extreme_context=3)
            assert pool.extreme[idx].sum() >= 3 and len(set(idx.tolist())) == 12
        cfg = TrainConfig(extreme_context=2, extreme_target=4)
        ep = sample_episode(pool, cfg, rng)
        assert pool.extreme[ep.target_idx].sum() >= 4
        assert not set(ep.context_idx) & set(ep.target_idx)


class TestConfig:
    def test_guards(self):
        with pytest.raises(ContractError):
            TrainConfig(iterations=0)
        with pytest.raises(ContractError):
            TrainConfig(nc_range=(0, 3))
        with pytest.raises(ContractError):
            TrainConfig(nt_range=(5, 2))
        with pytest.raises(ContractError):
            TrainConfig(tau=0.0)
        with pytest.raises(ContractError):
            TrainConfig(lr_final=-1e-5)

    def test_cosine_schedule(self):
        cfg = TrainConfig(iterations=101, lr=1e-3, lr_final=1e-5)
        rates = [cfg.lr_at(k) for k in range(1, 102)]
        assert rates[0] == pytest.approx(1e-3, rel=1e-15)
        assert rates[-1] == pytest.approx(1e-5, rel=1e-12)
        assert rates[50] == pytest.approx(0.5 * (1e-3 + 1e-5), rel=1e-12)
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert TrainConfig(iterations=50).lr_at(30) == 1e-3


class TestTrain:
    @pytest.mark.parametrize("kind", ["cnp", "adacnp"])
    def test_zero_learning_rate(self, kind):
        pool = make_pool()
        init, _ = train(kind, pool, TrainConfig(iterations=1, lr=0.0, seed=3), TINY)
        moved, _ = train(kind, pool, TrainConfig(iterations=5, lr=0.0, seed=3), TINY)
        assert pack_bundle(init) == pack_bundle(moved)

    @pytest.mark.parametrize("kind", ["cnp", "adacnp"])
    def test_single_step_moves(self, kind):
        pool = make_pool()
        before, _ = train(kind, pool, TrainConfig(iterations=1, lr=0.0, seed=3), TINY)
        after, _ = train(kind, pool, TrainConfig(iterations=1, seed=3), TINY)
        changed = [k for k, v in before.params().items()
                   if not np.array_equal(v, after.params()[k])]
        assert changed
        assert any(k.startswith("decoder") for k in changed)
        if kind == "adacnp":
            assert any(k.startswith("scorer") for k in changed)

    def test_deterministic(self, tmp_path):
        pool = make_pool()
        cfg = TrainConfig(iterations=30, seed=9)
        a, ca = train("adacnp", pool, cfg, TINY)
        b, cb = train("adacnp", pool, cfg, TINY)
        assert pack_bundle(a) == pack_bundle(b)
        assert ca.raw == cb.raw

    def test_schedule_applied(self):
        pool = make_pool()
        flat, _ = train("adacnp", pool, TrainConfig(iterations=20, seed=2), TINY)
        same, _ = train("adacnp", pool, TrainConfig(iterations=20, seed=2, lr_final=1e-3), TINY)
        decayed, _ = train("adacnp", pool, TrainConfig(iterations=20, seed=2, lr_final=0.0), TINY)
        assert pack_bundle(flat) == pack_bundle(same)
        assert pack_bundle(flat) != pack_bundle(decayed)

    def test_checkpoint_written(self, tmp_path):
        path = tmp_path / "m.bin"
        b, _ = train("cnp", make_pool(), TrainConfig(iterations=3, checkpoint_path=str(path)), TINY)
        assert path.read_bytes() == pack_bundle(b)

    def test_non_finite_loss_aborts(self):
        pool = make_pool()
        y = pool.y.copy()
        y[:] = np.nan
        with pytest.raises(NumericalError, match="iteration 1"):
            train("cnp", Pool(pool.x, y), TrainConfig(iterations=3), TINY)

    def test_task_callable(self):
        def draw(rng):
            return make_pool(40, seed=int(rng.integers(1 << 30)))

        b, curve = train("adacnp", draw, TrainConfig(iterations=5, seed=1), TINY)
        assert b.kind == "adacnp" and len(curve.raw) == 5

    def test_loss_decreases(self):
        _, curve = train("adacnp", make_pool(200), TrainConfig(iterations=400, seed=0, window=50), TINY)
        assert curve.moving[-1] < curve.moving[49]


def test_moving_average_recomputed():
    rng = np.random.default_rng(0)
    curve = LossCurve(window=7)
    raw = rng.normal(size=40)
    for k, v in enumerate(raw, 1):
        curve.append(k, v)
    for k in range(40):
        lo = max(0, k - 6)
        assert curve.moving[k] == np.mean(raw[lo:k + 1])
    text = curve.to_text("# header\n")
    rows = [line.split() for line in text.splitlines() if not line.startswith("#")]
    assert len(rows) == 40 and float(rows[-1][1]) == curve.moving[-1]


class ConstantPredictor:
    def __init__(self, value, var=1.0):
        self.value, self.var = value, var

    def __call__(self, ctx, targets):
        n = len(targets.inputs)
        return GaussianPrediction(np.full((n, 1), self.value), np.full((n, 1), self.var))


class TestEvaluate:
    def test_constant_predictor_mse_is_variance(self):
        pool = make_pool(80)
        hist, ev = pool.subset(np.arange(40)), pool.subset(np.arange(40, 80))
        mean = float(ev.y.mean())
        r = evaluate(ConstantPredictor(mean), hist, ev, n_c=5, resamples=2).report
        assert r.mse_percent == pytest.approx(100 * ev.y.var(), rel=1e-12)

    def test_leakage_rejected(self):
        pool = make_pool(30)
        with pytest.raises(ContractError, match="context pool"):
            evaluate(ConstantPredictor(0.0), pool, pool, n_c=5)
        with pytest.raises(ContractError):
            check_no_leakage(pool, pool.subset([3]))

    def test_empty(self):
        pool = make_pool(30)
        with pytest.raises(ContractError):
            evaluate(ConstantPredictor(0.0), pool, pool.subset([]), n_c=5)

    def test_recomputation_and_audit(self):
        pool = make_pool(50)
        hist, ev = pool.subset(np.arange(35)), pool.subset(np.arange(35, 50))
        bundle, _ = train("adacnp", hist, TrainConfig(iterations=20, nc_range=(3, 6),
                                                      nt_range=(3, 6)), TINY)
        res = evaluate(bundle, hist, ev, n_c=6, resamples=3, seed=2)
        from adacnp.models import predict

        runs = []
        for r in range(3):
            m = np.empty((15, 1))
            v = np.empty((15, 1))
            for j in range(15):
                idx = res.context_idx[r][j]
                assert np.all(idx < 35)  # audit: contexts only from the historical pool
                p = predict(bundle, ContextSet(hist.x[idx], hist.y[idx]), TargetBatch(ev.x[j:j + 1]))
                m[j], v[j] = p.mean[0], p.var[0]
            np.testing.assert_array_equal(m, res.means[r])
            runs.append(evaluate_prediction(GaussianPrediction(m, v), ev.y))
        arr = np.array(runs)
        assert res.report.mse_percent == pytest.approx(arr[:, 0].mean(), rel=1e-12)
        assert res.report.nll_spread == pytest.approx(arr[:, 1].std(), rel=1e-9, abs=1e-15)

    def test_workers_do_not_change_results(self):
        pool = make_pool(50)
        hist, ev = pool.subset(np.arange(35)), pool.subset(np.arange(35, 50))
        bundle, _ = train("cnp", hist, TrainConfig(iterations=5, nc_range=(3, 6),
                                                   nt_range=(3, 6)), TINY)
        a = evaluate(bundle, hist, ev, n_c=6, resamples=2, seed=4)
        b = evaluate(bundle, hist, ev, n_c=6, resamples=2, seed=4, workers=2)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.vars, b.vars)

    def test_gp_baseline(self):
        pool = make_pool(60)
        hist, ev = pool.subset(np.arange(45)), pool.subset(np.arange(45, 60))
        r = evaluate(GpBaseline(), hist, ev, n_c=20, resamples=2).report
        assert r.mse_percent < 100 * ev.y.var()
