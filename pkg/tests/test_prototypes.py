import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avcil.kernels import NumericError, make_rng
from avcil.prototypes import (
    PrototypeBank,
    build_general,
    build_species,
    cluster_means,
    ema_update,
    greedy_match,
    similarity_to_bank,
)


def labelled(n_per=12, d=6, seed=0):
    rng = make_rng(seed)
    labels = np.repeat(np.arange(4), n_per)
    return rng.normal(size=(4 * n_per, d)) + 3 * labels[:, None], labels


def test_general_bank_shape():
    F, y = labelled()
    g = build_general(F, y, m=5, seed=0)
    assert sorted(g) == [0, 1, 2, 3]
    assert all(p.shape == (5, 6) for p in g.values())
    assert PrototypeBank(general=g).general_matrix()[0].shape == (20, 6)


def test_identical_samples_give_identical_prototypes():
    F = np.tile(np.arange(4.0), (10, 1))
    assert np.all(cluster_means(F, 5, seed=0) == F[0])


def test_m1_is_class_mean():
    F, y = labelled()
    g = build_general(F, y, m=1)
    for i in range(4):
        assert np.allclose(g[i][0], F[y == i].mean(axis=0), rtol=0, atol=1e-12)


def test_fewer_samples_than_m_pads():
    F = np.array([[0.0, 0.0], [1.0, 1.0]])
    c = cluster_means(F, 5, seed=0)
    assert c.shape == (5, 2)
    assert {tuple(r) for r in c} == {(0.0, 0.0), (1.0, 1.0)}


def test_missing_intensity_warns_and_is_omitted():
    F, y = labelled()
    keep = y != 2
    with pytest.warns(UserWarning, match="intensity 2"):
        g = build_general(F[keep], y[keep], m=3)
    assert sorted(g) == [0, 1, 3]


def test_species_prototypes():
    F, y = labelled()
    entry = build_species(F, F.copy(), y, species_id=3, m=5, seed=1)
    for i, (pa, pv) in entry.items():
        assert pa.tobytes() == pv.tobytes()
    one = build_species(F, 2 * F, y, 0, m=1)
    assert np.allclose(one[1][1], 2 * F[y == 1].mean(axis=0))


def test_species_storage_count():
    F, y = labelled(n_per=6)
    bank = PrototypeBank(m=5)
    for k in range(6):
        bank.species[k] = build_species(F, F, y, k, m=5, seed=k)
    assert bank.n_vectors() == 240


def test_ema_alpha_endpoints():
    F, y = labelled()
    old = build_general(F, y, m=3, seed=0)
    bank = PrototypeBank(m=3, alpha=1.0, general={i: p.copy() for i, p in old.items()})
    ema_update(bank, F + 5.0, y, seed=1)
    for i in old:
        assert bank.general[i].tobytes() == old[i].tobytes()
    bank = PrototypeBank(m=1, alpha=0.0, general={i: old[i][:1].copy() for i in old})
    ema_update(bank, F + 5.0, y)
    for i in old:
        assert np.array_equal(bank.general[i][0], (F + 5.0)[y == i].mean(axis=0))


def test_ema_point_seven_is_exact():
    bank = PrototypeBank(m=1, alpha=0.7, general={0: np.array([[1.0, 0.0]])})
    ema_update(bank, np.array([[0.0, 1.0]]), [0])
    assert bank.general[0].tolist() == [[0.7, 0.3]]


def test_ema_idempotent_when_means_equal_prototypes():
    F, y = labelled()
    bank = PrototypeBank(m=1, alpha=0.7, general=build_general(F, y, m=1))
    before = {i: p.copy() for i, p in bank.general.items()}
    ema_update(bank, F, y)
    for i in before:
        assert np.allclose(bank.general[i], before[i], rtol=0, atol=1e-12)


def test_ema_absent_intensity_unchanged_and_species_frozen():
    F, y = labelled()
    bank = PrototypeBank(m=2, general=build_general(F, y, m=2))
    bank.species[0] = build_species(F, F, y, 0, m=2)
    g3, sp = bank.general[3].copy(), bank.species[0][1][0].copy()
    keep = y != 3
    ema_update(bank, F[keep] * 2, y[keep])
    assert np.array_equal(bank.general[3], g3)
    assert np.array_equal(bank.species[0][1][0], sp)


def test_ema_requires_populated_bank():
    with pytest.raises(NumericError):
        ema_update(PrototypeBank(), np.ones((2, 2)), [0, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_greedy_match_is_a_partial_bijection(n_new, n_old, seed):
    rng = make_rng(seed)
    pairs = greedy_match(rng.normal(size=(n_new, 3)), rng.normal(size=(n_old, 3)))
    assert len(pairs) == min(n_new, n_old)
    assert len({p[0] for p in pairs}) == len(pairs) == len({p[1] for p in pairs})


def test_greedy_match_prefers_nearest():
    new = np.array([[0.0, 0.0], [10.0, 0.0]])
    old = np.array([[9.0, 0.0], [1.0, 0.0]])
    assert sorted(greedy_match(new, old)) == [(0, 1), (1, 0)]


def test_similarity_to_bank():
    assert similarity_to_bank(np.ones(2), PrototypeBank()) is None
    bank = PrototypeBank(m=1, general={0: np.array([[1.0, 0.0]]), 1: np.array([[0.0, 1.0]])})
    assert similarity_to_bank(np.array([1.0, 0.0]), bank) == pytest.approx(0.5)
    bank = PrototypeBank(m=1, general={0: np.array([[2.0, 2.0]])})
    assert similarity_to_bank(np.array([1.0, 1.0]), bank) == pytest.approx(1.0)
    assert similarity_to_bank(np.array([1.0, -1.0]), bank) == pytest.approx(0.0, abs=1e-15)


def test_bank_validation():
    with pytest.raises(NumericError):
        PrototypeBank(m=0)
    with pytest.raises(NumericError):
        PrototypeBank(alpha=1.5)


def test_build_is_deterministic():
    F, y = labelled()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = build_general(F, y, 5, seed=4)
        b = build_general(F, y, 5, seed=4)
    assert all(a[i].tobytes() == b[i].tobytes() for i in a)
