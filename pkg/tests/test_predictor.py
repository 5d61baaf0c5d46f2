import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbp.errors import ConfigError, DimensionError, NumericDomainError, TrainingError
from cbp.metrics import wade6
from cbp.predictor import (
    ConditionalQuery, ModelConfig, PredictorParams, SceneEncoding, TrainConfig, nll_loss, overlap_loss,
    predict, train,
)
from cbp.predictor import training as training_mod
from cbp.predictor.features import query_dim
from cbp.predictor.losses import closest_mode
from cbp.predictor.model import Item, build_batch, run
from cbp.predictor.network import forward
from cbp.sim import SimConfig, generate_scene
from cbp.trajectory import LOG_2PI, TrajectoryGMM

from helpers import directional_check, gradient_check, small_problem

SMALL = dict(history=4, horizon=5, modes=2, degree=2, enc_width=8, trunk_width=8)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SimConfig(history=4, horizon=5, background_max=2), "car_follow", 0, 3)


@pytest.fixture(scope="module")
def params():
    p = PredictorParams.init(ModelConfig(**SMALL), 1)
    rng = np.random.default_rng(0)
    return p.with_flat(p.flat() + 0.2 * rng.standard_normal(p.size))


def _zero_params(cfg):
    p = PredictorParams.init(cfg, 0)
    return p.with_flat(np.zeros(p.size))


def test_zero_polynomial_puts_waypoints_at_origin(scene):
    cfg = ModelConfig(**SMALL)
    p = PredictorParams.init(cfg, 0)
    p.weights["head.Wc"][:] = 0.0
    p.weights["head.bc"][:] = 0.0
    d = predict(p, scene, 1)
    np.testing.assert_allclose(d.means, np.broadcast_to(scene.agent(1).position, d.means.shape), atol=1e-12)


def test_equal_logits_give_uniform_modes(scene):
    cfg = ModelConfig(**{**SMALL, "modes": 4})
    p = PredictorParams.init(cfg, 0)
    p.weights["head.Wl"][:] = 0.0
    p.weights["head.bl"][:] = 0.3
    np.testing.assert_allclose(predict(p, scene, 0).probs, 0.25, atol=1e-15)


def test_query_reaches_output(params, scene):
    lead = scene.meta["leader"]
    fol = scene.meta["follower"]
    marg = predict(params, scene, fol)
    cond = predict(params, scene, fol, ConditionalQuery(lead, scene.agent(lead).future))
    assert np.max(np.abs(marg.means - cond.means)) > 0


def test_marginal_equals_zero_query_vector(params, scene):
    cfg = params.config
    enc = SceneEncoding(scene, cfg)
    batch = build_batch(cfg, [Item(enc, 1)])
    assert np.all(batch.qry == 0) and batch.qry.shape[1] == query_dim(cfg)
    out, _ = forward(params, batch.own, batch.nbr, batch.nbr_mask, np.zeros_like(batch.qry))
    np.testing.assert_allclose(predict(params, scene, 1).means - batch.origin[0], out.means[0], atol=1e-9)


def test_nll_at_mean_with_unit_std(scene):
    cfg = ModelConfig(**{**SMALL, "modes": 1})
    p = _zero_params(cfg)
    gt = np.broadcast_to(scene.agent(0).position, (cfg.horizon, 2))
    loss, _ = nll_loss(p, scene, 0, None, gt)
    assert loss == pytest.approx(cfg.horizon * LOG_2PI, rel=1e-12)


def test_closest_mode_selection():
    gt = np.zeros((5, 2))
    means = np.zeros((2, 5, 2))
    means[0, -1, 0] = 1.0
    means[1, -1, 0] = 5.0
    assert closest_mode(means, gt) == 0


def test_nll_gradient_matches_finite_differences(params, scene):
    cfg = params.config
    enc = SceneEncoding(scene, cfg)
    batch = build_batch(cfg, [Item(enc, 1, 0, enc.future[0], enc.future[1])])
    assert directional_check(params, batch, 0.0, 4.0) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_total_loss_gradient_random_configs(seed):
    params, batch, alpha = small_problem(100 + seed)
    err, _, _ = gradient_check(params, batch, 0.5, alpha)
    assert err < 1e-4


def test_overlap_identical_is_one():
    m = np.random.default_rng(0).normal(size=(1, 4, 2))
    d = TrajectoryGMM.from_probs([1.0], m, np.ones_like(m))
    loss, (ga, gb) = overlap_loss(d, d, 2.0)
    assert loss == pytest.approx(1.0)
    np.testing.assert_allclose(ga, 0.0)


def test_overlap_far_apart():
    a = TrajectoryGMM.from_probs([1.0], np.zeros((1, 3, 2)), np.ones((1, 3, 2)))
    mb = np.zeros((1, 3, 2))
    mb[..., 0] = [30.0, 10.0, 20.0]
    b = TrajectoryGMM.from_probs([1.0], mb, np.ones((1, 3, 2)))
    assert overlap_loss(a, b, 1.0)[0] == pytest.approx(math.exp(-100.0), rel=1e-9)


def test_overlap_matches_brute_force():
    rng = np.random.default_rng(5)
    ma, mb = rng.normal(size=(2, 4, 2)) * 2, rng.normal(size=(1, 4, 2)) * 2
    a = TrajectoryGMM.from_probs([0.3, 0.7], ma, np.ones_like(ma))
    b = TrajectoryGMM.from_probs([1.0], mb, np.ones_like(mb))
    alpha = 3.0
    total = 0.0
    for i in range(2):
        for j in range(1):
            best = max(math.exp(-((ma[i, t] - mb[j, t]) ** 2).sum() / alpha) for t in range(4))
            total += a.probs[i] * b.probs[j] * best
    loss, (ga, gb) = overlap_loss(a, b, alpha)
    assert loss == pytest.approx(total, rel=1e-12)
    eps = 1e-6
    for idx in np.ndindex(ma.shape):
        mp = ma.copy()
        mp[idx] += eps
        mm = ma.copy()
        mm[idx] -= eps
        fd = (overlap_loss(TrajectoryGMM(a.log_probs, mp, a.stds), b, alpha)[0]
              - overlap_loss(TrajectoryGMM(a.log_probs, mm, a.stds), b, alpha)[0]) / (2 * eps)
        assert ga[idx] == pytest.approx(fd, abs=1e-8)


def test_overlap_errors():
    a = TrajectoryGMM.from_probs([1.0], np.zeros((1, 3, 2)), np.ones((1, 3, 2)))
    b = TrajectoryGMM.from_probs([1.0], np.zeros((1, 4, 2)), np.ones((1, 4, 2)))
    with pytest.raises(DimensionError):
        overlap_loss(a, b, 1.0)
    with pytest.raises(NumericDomainError):
        overlap_loss(a, a, 0.0)


def test_lookup_and_argument_errors(params, scene):
    with pytest.raises(KeyError):
        predict(params, scene, 99)
    with pytest.raises(ValueError):
        predict(params, scene, 0, ConditionalQuery(0, scene.agent(0).future))
    with pytest.raises(DimensionError):
        predict(params, scene, 1, ConditionalQuery(0, np.zeros((3, 2))))


@settings(max_examples=20, deadline=None)
@given(dx=st.floats(-500, 500), dy=st.floats(-500, 500))
def test_nll_translation_invariant(params, scene, dx, dy):
    off = np.array([dx, dy])
    q = ConditionalQuery(0, scene.agent(0).future)
    base, _ = nll_loss(params, scene, 1, q, scene.agent(1).future)
    moved = scene.translated(off)
    shifted, _ = nll_loss(params, moved, 1, ConditionalQuery(0, moved.agent(0).future), moved.agent(1).future)
    assert shifted == pytest.approx(base, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 30.0))
def test_mode_probabilities_normalized(scene, seed, scale):
    p = PredictorParams.init(ModelConfig(**{**SMALL, "modes": 5}), seed)
    p = p.with_flat(p.flat() * scale)
    d = predict(p, scene, 0)
    assert abs(d.probs.sum() - 1.0) < 1e-9


def test_checkpoint_round_trip(tmp_path, params):
    path = tmp_path / "m.npz"
    params.save(path, extra={"epochs": 3})
    back = PredictorParams.load(path, expect_config=params.config)
    np.testing.assert_array_equal(back.flat(), params.flat())
    assert PredictorParams.read_extra(path) == {"epochs": 3}
    with pytest.raises(ConfigError):
        PredictorParams.load(path, expect_config=ModelConfig(**{**SMALL, "modes": 3}))


def test_checkpoint_rejects_shape_mismatch(tmp_path, params):
    w = dict(params.weights)
    w["head.bl"] = np.zeros(7)
    with pytest.raises(ConfigError):
        PredictorParams(params.config, w)


def test_zero_epochs_returns_identical_params(params, scene):
    out, log = train(params, [scene], TrainConfig(epochs=0))
    np.testing.assert_array_equal(out.flat(), params.flat())
    assert log == []


def test_training_is_deterministic(params, scene):
    a, la = train(params, [scene], TrainConfig(epochs=3, seed=4))
    b, lb = train(params, [scene], TrainConfig(epochs=3, seed=4))
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert la == lb


def test_divergence_names_the_batch(params, scene, monkeypatch):
    real = training_mod.batch_loss

    def bad(*a, **k):
        loss, g, info = real(*a, **k)
        return float("nan"), g, info

    monkeypatch.setattr(training_mod, "batch_loss", bad)
    with pytest.raises(TrainingError, match="batch 0"):
        train(params, [scene], TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(query_rate=1.5).validate()
    with pytest.raises(ConfigError):
        TrainConfig(grad_clip=0.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="lbfgs").validate()
    with pytest.raises(ConfigError):
        train(PredictorParams.init(ModelConfig(**SMALL)), [], TrainConfig())


def test_single_scene_memorization():
    sim = SimConfig(background_max=0)
    scene = generate_scene(sim, "car_follow", 0, 11)
    cfg = ModelConfig(modes=6, enc_width=32, trunk_width=64)
    p, _ = train(PredictorParams.init(cfg, 0), [scene],
                 TrainConfig(epochs=1000, lr=3e-3, grad_clip=5.0, query_rate=0.0, overlap_weight=0.0,
                             relax=0.0, seed=0))
    fol = scene.meta["follower"]
    assert wade6(predict(p, scene, fol), scene.agent(fol).future) < 0.5
