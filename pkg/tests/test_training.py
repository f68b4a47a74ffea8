import math

import numpy as np
import pytest

from dcrec.data import Dataset, InteractionRecord
from dcrec.experts import HEAD_PARAMS
from dcrec.model import init_model
from dcrec.training import (
    AdagradState,
    NumericalError,
    TrainConfig,
    adagrad_step,
    bce_loss,
    gradient_check_full,
    loss_and_grads,
    train,
)

from conftest import random_dataset, small_schema


@pytest.mark.parametrize(
    "p,y,w,expected",
    [(0.5, 1, 1.0, math.log(2)), (1 - 1e-12, 1, 1.0, 0.0), (0.9, 0, 2.0, -2 * math.log(0.1)), (0.0, 1, 1.0, -math.log(1e-12))],
)
def test_bce_examples(p, y, w, expected):
    assert bce_loss(p, y, w) == pytest.approx(expected, abs=1e-6)


def _adagrad(param, grad, acc=0.0, lr=0.1):
    state = AdagradState({"x": np.array([acc])}, eps=0.0)
    params = {"x": np.array([param])}
    adagrad_step(state, params, {"x": np.array([grad])}, lr)
    return state, params


def test_adagrad_one_step():
    state, params = _adagrad(1.0, 0.5)
    assert state.acc["x"][0] == 0.25
    assert params["x"][0] == pytest.approx(0.9, abs=1e-15)


def test_adagrad_zero_gradient():
    state, params = _adagrad(1.0, 0.0, acc=0.3)
    assert state.acc["x"][0] == 0.3 and params["x"][0] == 1.0


def test_adagrad_two_steps():
    state, params = _adagrad(1.0, 0.5)
    adagrad_step(state, params, {"x": np.array([0.5])}, 0.1)
    assert state.acc["x"][0] == 0.5
    # 1 - 0.1 - 0.1 * 0.5 / sqrt(0.5)
    assert params["x"][0] == pytest.approx(0.8292893218813452, abs=1e-12)


def test_adagrad_shape_mismatch():
    state = AdagradState({"x": np.zeros(2)})
    with pytest.raises(ValueError):
        adagrad_step(state, {"x": np.zeros(2)}, {"x": np.zeros(3)}, 0.1)


def _split(seed=0, n=60):
    schema = small_schema()
    return schema, random_dataset(schema, n, seed), random_dataset(schema, 20, seed + 100)


def test_zero_learning_rate_keeps_params():
    schema, tr, va = _split()
    model = init_model("dcr_moe", schema, d=3, h1=4, h2=3, seed=1)
    trained, hist = train(model, tr, va, TrainConfig(learning_rate=0.0, max_epochs=3, batch_size=16))
    for k in model.params:
        assert np.array_equal(model.params[k], trained.params[k])


def test_separable_loss_decreases():
    schema = small_schema(n_users=2, n_items=2, K=2, content=())
    # label is set by the confounder, so each expert's bias alone separates it
    recs = [InteractionRecord(u, i, (u, i, i), i, int(i == 0), 0) for u in range(2) for i in range(2)]
    ds = Dataset.from_records(schema, recs)
    model = init_model("dcr_moe", schema, d=2, h1=4, h2=4, seed=0)
    _, hist = train(model, ds, ds, TrainConfig(learning_rate=0.1, max_epochs=5, batch_size=4, patience=10))
    losses = hist.train_loss
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_early_stopping_contract():
    schema, tr, va = _split()
    model = init_model("nfm_woa", schema, d=3, h1=4, h2=3, seed=2)
    snapshots = []
    losses = iter([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])

    def monitor(m):
        snapshots.append({k: v.copy() for k, v in m.params.items()})
        return next(losses)

    trained, hist = train(model, tr, va, TrainConfig(learning_rate=0.05, max_epochs=20, patience=3, batch_size=16), monitor=monitor)
    assert hist.best_epoch == 1
    assert hist.stopped_epoch == 4  # patience + 1
    assert hist.stopped_epoch - hist.best_epoch == 3
    for k in trained.params:
        assert np.array_equal(trained.params[k], snapshots[0][k])


def test_stop_gap_equals_patience_on_real_run():
    schema, tr, va = _split(3, 200)
    model = init_model("dcr_moe", schema, d=3, h1=4, h2=3, seed=3)
    _, hist = train(model, tr, va, TrainConfig(learning_rate=0.5, max_epochs=200, patience=4, batch_size=8))
    assert hist.stopped_epoch < 200
    assert hist.stopped_epoch - hist.best_epoch == 4


def test_schema_mismatch():
    schema, tr, va = _split()
    model = init_model("dcr_moe", small_schema(K=4), d=3, h1=4, h2=3)
    with pytest.raises(ValueError):
        train(model, tr, va, TrainConfig(max_epochs=1))


def test_non_finite_aborts():
    schema, tr, va = _split()
    model = init_model("dcr_moe", schema, d=3, h1=4, h2=3)
    model.params["W3"][:] = np.nan
    with pytest.raises(NumericalError):
        train(model, tr, va, TrainConfig(max_epochs=1))


def test_determinism():
    schema, tr, va = _split(5, 100)
    model = init_model("dcr_moe", schema, d=3, h1=4, h2=3, seed=5)
    cfg = TrainConfig(learning_rate=0.1, l2_embedding=1e-3, l2_other=1e-3, max_epochs=4, batch_size=16, seed=9)
    a, ha = train(model, tr, va, cfg)
    b, hb = train(model, tr, va, cfg)
    assert ha.train_loss == hb.train_loss
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


@pytest.mark.parametrize("kind", ["dcr_moe", "nfm_wa", "nfm_woa"])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(kind, seed):
    rng = np.random.default_rng(seed)
    schema = small_schema(K=int(rng.integers(2, 4)))
    model = init_model(kind, schema, d=int(rng.integers(2, 5)), h1=3, h2=3, seed=seed)
    # random biases too: zero biases behind dead relu units sit exactly on a kink
    for v in model.params.values():
        v[...] = rng.normal(size=v.shape)
    sample = random_dataset(schema, 4, seed)
    cfg = TrainConfig(l2_embedding=0.01, l2_other=0.02)
    assert gradient_check_full(model, sample, cfg, weight=1.7) < 1e-4


def test_saturated_sample_has_no_gradient():
    schema = small_schema()
    model = init_model("dcr_moe", schema, d=2, h1=2, h2=2)
    model.params["W3"][:] = 0.0
    model.params["b3"][:] = 40.0  # prediction clamps to 1 - 1e-12
    feats = np.array([[0, 0, 0, 1]])
    _, _, grads = loss_and_grads(model, feats, np.array([1]))
    assert all(not g.any() for g in grads.values())


def test_l2_step_shrinks_parameters():
    schema = small_schema()
    model = init_model("nfm_wa", schema, d=3, h1=3, h2=3, seed=4)
    rng = np.random.default_rng(4)
    for v in model.params.values():
        v[...] = rng.normal(size=v.shape)
    before = {k: v.copy() for k, v in model.params.items()}
    feats = np.array([[0, 0, 0, 1]])
    # weight 0 switches off the data term
    _, _, grads = loss_and_grads(model, feats, np.array([1]), np.array([0.0]), 0.1, 0.1)
    adagrad_step(AdagradState.zeros(model), model.params, grads, 1e-3)
    for k in model.params:
        nz = before[k] != 0
        assert np.all(np.abs(model.params[k][nz]) < np.abs(before[k][nz]))


def test_training_touches_one_expert_per_sample():
    schema = small_schema()
    model = init_model("dcr_moe", schema, d=3, h1=4, h2=3, seed=6)
    rec = InteractionRecord(1, 2, (1, 2, 0, 1), 1, 1, 1)
    one = Dataset.from_records(schema, [rec])
    trained, _ = train(model, one, one, TrainConfig(learning_rate=0.1, max_epochs=1, batch_size=1))
    for name in HEAD_PARAMS:
        for e in range(schema.K):
            same = np.array_equal(trained.params[name][e], model.params[name][e])
            assert same == (e != 1), (name, e)
    assert not np.array_equal(trained.params["embedding"], model.params["embedding"])
