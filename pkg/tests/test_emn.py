import numpy as np
import pytest

from memonet import autodiff as ad
from memonet.emn import (EmnConfig, EmnParams, emn_embed, emn_episode, emn_multi_answer,
                         position_encoding)
from memonet.errors import ConfigError, DimensionError, VocabularyError


def _brute_position(J, d):
    out = np.zeros((J, d))
    for j in range(1, J + 1):
        for k in range(1, d + 1):
            out[j - 1, k - 1] = (1 - j / J) - (k / d) * (1 - 2 * j / J)
    return out


@pytest.mark.parametrize("J,d", [(1, 1), (3, 4), (11, 20)])
def test_position_encoding_matches_loop(J, d):
    assert np.allclose(position_encoding(J, d), _brute_position(J, d), atol=1e-15)


def test_position_encoding_corner_values():
    l = position_encoding(4, 8)
    # j = J gives (k/d) exactly
    assert np.allclose(l[-1], np.arange(1, 9) / 8)


def _setup(seed=0, **kw):
    cfg = EmnConfig(**{**dict(I=5, S=3, O=7, d=6, d_emb=4, S_q=3, n_hops=2), **kw})
    rng = np.random.default_rng(seed)
    return cfg, EmnParams.init(cfg, rng), rng


def test_episode_normalised_and_hop_count():
    cfg, p, rng = _setup()
    a, ws = emn_episode(rng.normal(size=(3, 5, 3, 4)), rng.normal(size=(3, 3, 4)), p)
    assert len(ws) == 2
    assert np.allclose(a.data.sum(-1), 1.0, atol=1e-12)
    assert np.allclose(ws[0].sum(-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_episode_gradcheck(seed):
    cfg, p, rng = _setup(seed)
    items = rng.normal(size=(2, 5, 3, 4))
    query = rng.normal(size=(2, 3, 4))
    tgt = rng.integers(0, 7, size=2)

    def fn():
        a, _ = emn_episode(items, query, p)
        return ad.cross_entropy(a, tgt)

    errs = ad.gradcheck(fn, p.values())
    assert max(errs.values()) < 1e-6, errs


def test_slot_keys_are_position_weighted():
    cfg, p, rng = _setup()
    items = rng.normal(size=(1, 5, 3, 4))
    K, V = emn_embed(items, p)
    l = position_encoding(3, 6)
    proj = items[0, 2] @ p["W_k"].data.T
    assert np.allclose(K.data[0, 2], (proj * l).sum(0), atol=1e-12)
    assert np.allclose(V.data[0, 2], (items[0, 2] @ p["W_v"].data.T).sum(0), atol=1e-12)


def test_token_inputs_padding_and_vocab():
    cfg, p, rng = _setup(d_emb=None, S_q=2)
    tokens = np.array([[[1, 2, 0]] * 5])
    _, V = emn_embed(tokens, p)
    W = p["W_v"].data
    assert np.allclose(V.data[0, 0], W[:, 1] + W[:, 2], atol=1e-14)
    with pytest.raises(VocabularyError):
        emn_embed(np.full((1, 5, 3), 7), p)


def test_memory_shape_checked():
    cfg, p, rng = _setup()
    with pytest.raises(DimensionError):
        emn_embed(rng.normal(size=(1, 4, 3, 4)), p)


def test_config_rejects_zero_hops():
    with pytest.raises(ConfigError):
        EmnConfig(n_hops=0)


def test_multi_answer_uses_feed():
    cfg, p, rng = _setup(d_emb=None, S_q=2, n_answers=2, O=9)
    tokens = rng.integers(1, 9, size=(2, 5, 3))
    query = rng.integers(1, 9, size=(2, 2))
    a = emn_multi_answer(tokens, query, p, feed=np.array([[3, 0], [4, 0]]))
    b = emn_multi_answer(tokens, query, p, feed=np.array([[5, 0], [6, 0]]))
    assert len(a) == 2
    assert np.array_equal(a[0].data, b[0].data)
    assert not np.array_equal(a[1].data, b[1].data)
