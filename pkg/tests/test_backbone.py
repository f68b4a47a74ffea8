import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcrec.backbone import (
    WITH_CONFOUNDER,
    WITHOUT_CONFOUNDER,
    backbone_backward,
    backbone_forward,
    bi_interaction,
    embed_lookup,
)
from dcrec import _kernels
from dcrec.data import InteractionRecord
from dcrec.model import init_model

from conftest import small_schema


def rec(u=0, i=1, c=1, a=2):
    return InteractionRecord(u, i, (u, i, c, a), a, 1, 0)


@pytest.mark.parametrize(
    "vectors,expected",
    [
        ([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
        ([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0]),
        ([[3.0, -2.0]], [0.0, 0.0]),
        ([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [1 * 3 + 1 * 5 + 3 * 5, 2 * 4 + 2 * 6 + 4 * 6]),
    ],
)
def test_bi_interaction_examples(vectors, expected):
    assert bi_interaction(np.array(vectors)).tolist() == expected


def test_bi_interaction_empty():
    with pytest.raises(ValueError):
        bi_interaction([])


vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3)


@settings(max_examples=60, deadline=None)
@given(st.lists(vec, min_size=1, max_size=6), st.randoms())
def test_bi_interaction_is_pairwise_sum_and_symmetric(vectors, rnd):
    v = np.array(vectors)
    pairwise = sum((v[i] * v[j] for i, j in itertools.combinations(range(len(v)), 2)), np.zeros(3))
    assert np.allclose(bi_interaction(v), pairwise, atol=1e-9)
    shuffled = list(v)
    rnd.shuffle(shuffled)
    assert np.allclose(bi_interaction(np.array(shuffled)), bi_interaction(v), atol=1e-9)


def test_embed_lookup():
    model = init_model("nfm_wa", small_schema(), d=3, h1=2, h2=2)
    r = rec()
    out = embed_lookup(model, r, [0, 3])
    assert len(out) == 2 and out[0].shape == (3,)
    assert np.array_equal(out[1], model.table(3)[2])
    with pytest.raises(ValueError):
        embed_lookup(model, r, [])


def test_forward_zero_embeddings():
    model = init_model("nfm_wa", small_schema(), d=3, h1=2, h2=2)
    model.params["embedding"][:] = 0
    assert np.array_equal(backbone_forward(model, rec(), WITH_CONFOUNDER), np.zeros(3))


def test_forward_without_confounder_ignores_a():
    model = init_model("dcr_moe", small_schema(), d=4, h1=2, h2=2, seed=5)
    outs = [backbone_forward(model, rec(a=a), WITHOUT_CONFOUNDER) for a in range(3)]
    assert all(np.array_equal(outs[0], o) for o in outs)
    with_a = [backbone_forward(model, rec(a=a), WITH_CONFOUNDER) for a in range(3)]
    assert not np.array_equal(with_a[0], with_a[1])


def test_forward_hand_case():
    # two fields, d=2: user row [1, 2], item row [3, -1] -> m = [3, -2]
    schema = small_schema(n_users=1, n_items=1, K=2, content=())
    model = init_model("nfm_woa", schema, d=2, h1=1, h2=1)
    model.table(0)[0] = [1.0, 2.0]
    model.table(1)[0] = [3.0, -1.0]
    r = InteractionRecord(0, 0, (0, 0, 1), 1, 0, 0)
    assert backbone_forward(model, r).tolist() == [3.0, -2.0]
    assert backbone_forward(model, r).tolist() == bi_interaction([[1.0, 2.0], [3.0, -1.0]]).tolist()


def test_backward_trivial_cases():
    model = init_model("nfm_wa", small_schema(), d=3, h1=2, h2=2, seed=1)
    assert not backbone_backward(model, rec(), WITH_CONFOUNDER, np.zeros(3)).any()
    # one pooled field: bi-interaction is identically zero, so is its gradient
    emb = model.params["embedding"]
    rows = np.array([[2]])
    _, s = _kernels.eb_forward(emb, rows)
    grad = np.zeros_like(emb)
    _kernels.eb_backward(emb, rows, s, np.ones((1, 3)), grad)
    assert not grad.any()


def _fd_check(model, record, mode, upstream, step=1e-5):
    g = backbone_backward(model, record, mode, upstream)
    emb = model.params["embedding"]
    worst = 0.0
    for idx in np.ndindex(emb.shape):
        orig = emb[idx]
        emb[idx] = orig + step
        up = float(upstream @ backbone_forward(model, record, mode))
        emb[idx] = orig - step
        down = float(upstream @ backbone_forward(model, record, mode))
        emb[idx] = orig
        fd = (up - down) / (2 * step)
        worst = max(worst, abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), 1e-6))
    return worst, g


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    schema = small_schema(K=int(rng.integers(2, 4)))
    model = init_model("nfm_wa", schema, d=d, h1=2, h2=2, seed=seed)
    model.params["embedding"][:] = rng.normal(size=model.params["embedding"].shape)
    r = rec(int(rng.integers(3)), int(rng.integers(4)), int(rng.integers(2)), int(rng.integers(schema.K)))
    mode = WITH_CONFOUNDER if seed % 2 else WITHOUT_CONFOUNDER
    worst, g = _fd_check(model, r, mode, rng.normal(size=d))
    assert worst < 1e-4
    if mode == WITHOUT_CONFOUNDER:
        assert not g[model.offsets[3] :].any()
