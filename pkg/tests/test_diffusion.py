import math
from fractions import Fraction

import numpy as np
import pytest

from planoforge import numerics as nx
from planoforge.diffusion import (
    CheckpointError,
    DenoiserConfig,
    DenoiserModel,
    TrainConfig,
    Trainer,
    TrainingData,
    build_schedule,
    checkpoint_bytes,
    dequantize,
    forward_sample,
    model_from_bytes,
    predict_x0,
    quantize,
    sample,
    sample_tensors,
    constraint_weights,
)
from planoforge.domain import check_planogram, encode

TINY = DenoiserConfig(widths=(4, 8, 8), time_dim=8)


def test_schedule_endpoints():
    s = build_schedule()
    assert s.alpha_bar[0] == 0.9999
    assert s.beta[0] == 1e-4 and s.beta[-1] == 0.02
    assert abs(s.beta[499] - (1e-4 + 0.02) / 2) <= (0.02 - 1e-4) / 999


def test_schedule_product_oracle():
    import mpmath

    mpmath.mp.dps = 50
    s = build_schedule()
    prod = mpmath.mpf(1)
    for i in range(1000):
        b = mpmath.mpf(1e-4) + (mpmath.mpf(0.02) - mpmath.mpf(1e-4)) * i / 999
        prod *= 1 - b
    assert abs(float(prod) - s.alpha_bar[-1]) / float(prod) < 1e-12


def test_schedule_recurrence_exact():
    s = build_schedule(200, 5e-4, 0.1)
    assert np.all(np.diff(s.alpha_bar) < 0)
    for t in range(1, 200):
        assert s.alpha_bar[t] == s.alpha_bar[t - 1] * (1 - s.beta[t])


@pytest.mark.parametrize("args", [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.02, 0.01), (10, 0.1, 1.0)])
def test_schedule_rejects(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


def test_forward_sample_degenerate_cases(rng):
    s = build_schedule()
    x0 = rng.normal(size=(5, 3, 4))
    eps = rng.normal(size=x0.shape)
    np.testing.assert_allclose(forward_sample(x0, 10, np.zeros_like(x0), s), math.sqrt(s.alpha_bar[10]) * x0)
    np.testing.assert_allclose(forward_sample(np.zeros_like(x0), 10, eps, s), math.sqrt(1 - s.alpha_bar[10]) * eps)
    with pytest.raises(ValueError):
        forward_sample(x0, 1000, eps, s)
    with pytest.raises(ValueError):
        forward_sample(x0, 5, eps[:2], s)


def test_predict_x0_inverts_forward(rng):
    s = build_schedule()
    for t in (0, 17, 500, 999):
        x0 = rng.normal(size=(2, 5, 3, 4))
        eps = rng.normal(size=x0.shape)
        xt = forward_sample(x0, t, eps, s)
        np.testing.assert_allclose(predict_x0(xt, eps, t, s), x0, atol=1e-9)
        np.testing.assert_allclose(predict_x0(xt, np.zeros_like(xt), t, s), xt / math.sqrt(s.alpha_bar[t]))


def test_predict_x0_symbolic(rng):
    import sympy

    a, x, e = sympy.symbols("a x e", positive=True)
    xt = sympy.sqrt(a) * x + sympy.sqrt(1 - a) * e
    assert sympy.simplify((xt - sympy.sqrt(1 - a) * e) / sympy.sqrt(a) - x) == 0


def test_denoiser_shapes(corpus):
    m = DenoiserModel.create(TINY, zero_output=False)
    pg = corpus.planograms[0]
    from planoforge.diffusion import fixture_features

    x = encode(pg, corpus.catalog).grid[None]
    out = m.predict(x, 3, fixture_features(pg.fixture)[None])
    assert out.shape == x.shape and np.all(np.isfinite(out))


def _trainer(corpus, **kw):
    cfg = TrainConfig(**{"steps": 200, "T": 50, **kw})
    return Trainer(DenoiserModel.create(TINY, seed=1), corpus.catalog, corpus.constraints, cfg)


def _batch(corpus, n=4):
    data = TrainingData.from_planograms(corpus.planograms[:40], corpus.catalog)
    return data.batch(np.random.default_rng(0), n)


def test_pure_ddpm_when_lambdas_zero(corpus):
    tr = _trainer(corpus, lambda1=0.0, lambda2=0.0)
    parts = tr.train_step(*_batch(corpus))
    assert parts.constraint == 0.0 and parts.revenue == 0.0
    assert parts.total == parts.diffusion


def test_perfect_noise_prediction_gives_zero_constraint_term(corpus):
    tr = _trainer(corpus)
    x0, fixtures = _batch(corpus)
    t = np.array([5, 20, 40, 49])
    eps = np.random.default_rng(3).normal(size=x0.shape)
    ab = tr.schedule.alpha_bar[t].reshape(-1, 1, 1, 1)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    from planoforge.constraints import GridContext, tensor_hinge

    x0_hat = nx.constant(predict_x0(x_t, eps, t, tr.schedule))
    hinge = tensor_hinge(corpus.constraints, x0_hat, GridContext.build(corpus.catalog, fixtures))
    assert np.all(np.abs(hinge.data) < 1e-9)


def test_overfit_single_batch(corpus):
    tr = _trainer(corpus)
    x0, fixtures = _batch(corpus)
    t = np.array([3, 12, 25, 40])
    eps = np.random.default_rng(4).normal(size=x0.shape)
    losses = [tr.train_step(x0, fixtures, t, eps).total for _ in range(200)]
    assert losses[-1] < losses[0]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_non_finite_loss_aborts(corpus):
    from planoforge.diffusion import TrainingError

    tr = _trainer(corpus)
    x0, fixtures = _batch(corpus)
    x0 = x0.copy()
    x0[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        tr.train_step(x0, fixtures)


def test_constraint_weights():
    s = build_schedule(200, 5e-4, 0.1)
    t = np.array([0, 199])
    np.testing.assert_array_equal(constraint_weights(s, t, "uniform"), [1.0, 1.0])
    w = constraint_weights(s, t, "snr")
    assert w[0] == 1.0 and 0 < w[1] < 0.01


def test_sampling_is_deterministic_and_valid(corpus):
    m = DenoiserModel.create(TINY, seed=2, zero_output=False)
    s = build_schedule(20, 5e-3, 0.2)
    fx = corpus.planograms[0].fixture
    a = sample(m, s, fx, corpus.catalog, seed=11, count=3)
    b = sample(m, s, fx, corpus.catalog, seed=11, count=3)
    assert a == b
    for pg in a:
        check_planogram(pg, corpus.catalog)


def test_zero_model_matches_prior_chain(corpus):
    m = DenoiserModel.create(TINY)
    for k in m.params:
        m.params[k][...] = 0.0
    s = build_schedule(30, 1e-3, 0.2)
    fx = corpus.planograms[0].fixture
    x = sample_tensors(m, s, fx, seed=0, count=400)
    # with eps_hat = 0 each step is x <- x / sqrt(alpha) + sqrt(beta) z
    var = 1.0
    for t in range(s.T - 1, -1, -1):
        var = var / s.alpha[t] + (s.beta[t] if t > 0 else 0.0)
    se = math.sqrt(var / x.size)
    assert abs(x.mean()) < 4 * se * math.sqrt(x[0].size)  # cells within a sample are independent too
    assert abs(x.var() / var - 1) < 0.05


def test_checkpoint_round_trip_and_corruption():
    m = DenoiserModel.create(TINY, seed=5, zero_output=False)
    data = checkpoint_bytes(m, "f64")
    back = model_from_bytes(data)
    assert back.config == m.config
    for k in m.params:
        np.testing.assert_array_equal(back.params[k], m.params[k])
    bad = bytearray(data)
    bad[len(bad) // 2] ^= 0xFF
    with pytest.raises(CheckpointError):
        model_from_bytes(bytes(bad))
    with pytest.raises(CheckpointError):
        model_from_bytes(b"nonsense")


def test_quantization_ratio_and_zero_tensor():
    m = DenoiserModel.create(DenoiserConfig(), seed=5)
    m.params["out.w"][...] = 0.0
    artifact, rep = quantize(m)
    assert rep.size_ratio <= 0.26
    q = dequantize(artifact)
    assert np.all(q.params["out.w"] == 0.0)
    for k, v in m.params.items():
        peak = np.max(np.abs(v))
        assert np.max(np.abs(q.params[k] - v)) <= peak / 254 + 1e-12
