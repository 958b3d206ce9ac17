# test_model.py
import sys
import os
from collections import Counter
from math import comb, sqrt

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
from services.errors import ValidationError
from services.majorana import monomial4
from services.model import (
    CouplingScheme, CouplingSet, assemble, k_from_p, n_total, sample, sample_bernoulli, sample_binary,
    sample_gaussian, sample_unary,
)


def test_n_total():
    assert n_total(8) == 70
    assert n_total(16) == 1820


def test_binary_sample_contract():
    cs = sample_binary(16, 32, seed=7)
    assert cs.K == 32
    assert cs.sign_counts == (16, 16)
    assert cs.C == pytest.approx(1 / sqrt(32))
    assert np.all(np.diff(cs.indices, axis=1) > 0)
    assert len(np.unique(cs.indices, axis=0)) == 32
    assert cs.scheme is CouplingScheme.BINARY_SPARSE


def test_binary_rejects_odd_k():
    with pytest.raises(ValidationError, match="K must be even for binary scheme"):
        sample_binary(16, 31, seed=0)


def test_k_bound():
    with pytest.raises(ValidationError, match="exceeds N_total=70"):
        sample_binary(8, 100, seed=0)


def test_sampling_is_deterministic():
    assert sample_binary(12, 24, seed=3) == sample_binary(12, 24, seed=3)
    assert sample_binary(12, 24, seed=3) != sample_binary(12, 24, seed=4)
    assert sample_gaussian(12, 24, seed=3) == sample_gaussian(12, 24, seed=3)


def test_different_seeds_give_different_sets():
    sets = {sample_binary(16, 32, seed=s) for s in range(2000)}
    assert len(sets) == 2000


def test_supports_are_uniform():
    draws = 10 ** 5
    counts = Counter(tuple(map(tuple, sample_unary(8, 2, seed=s).indices)) for s in range(draws))
    n_supports = comb(70, 2)
    assert len(counts) == n_supports
    expected = draws / n_supports
    sigma = sqrt(expected * (1 - 1 / n_supports))
    assert max(abs(c - expected) for c in counts.values()) < 5 * sigma


def test_unary_and_gaussian():
    unary = sample_unary(10, 15, seed=1)
    assert np.all(unary.values == 1)
    exact = sample_gaussian(10, 30, seed=2)
    assert exact.C ** 2 * np.sum(exact.values ** 2) == pytest.approx(1.0)
    expected = sample_gaussian(10, 30, seed=2, normalization="expected")
    assert expected.C == pytest.approx(1 / sqrt(30))
    dense = sample("dense", 8, None, seed=0)
    assert dense.K == 70 and dense.scheme is CouplingScheme.GAUSSIAN_DENSE


def test_bernoulli_sampling():
    cs = sample_bernoulli(10, 0.5, seed=4, scheme="binary")
    assert 0 < cs.K <= n_total(10)
    assert cs.sampling == "bernoulli"
    assert set(np.unique(cs.values)) <= {-1.0, 1.0}
    with pytest.raises(ValidationError):
        sample_bernoulli(10, 0.0, seed=4, scheme="binary")


def test_k_from_p():
    assert k_from_p(16, 0.01, "binary") == 18
    assert k_from_p(16, 0.0115, "binary") == 20
    assert k_from_p(16, 0.0115, "unary") == 21


def test_coupling_set_validation():
    with pytest.raises(ValidationError):
        CouplingSet(8, [[1, 2, 3, 4], [1, 2, 3, 4]], [1.0, -1.0], 0.5, "binary")
    with pytest.raises(ValidationError):
        CouplingSet(8, [[2, 1, 3, 4]], [1.0], 1.0, "binary")
    with pytest.raises(ValidationError):
        CouplingSet(8, [[1, 2, 3, 9]], [1.0], 1.0, "binary")
    with pytest.raises(ValidationError):
        CouplingSet(8, [[1, 2, 3, 4]], [0.5], 1.0, "binary")


def test_negated():
    cs = sample_binary(10, 20, seed=0)
    assert np.array_equal(cs.negated().values, -cs.values)
    with pytest.raises(ValidationError):
        sample_unary(10, 20, seed=0).negated()


def test_assemble():
    cs = sample_gaussian(10, 12, seed=9)
    terms = assemble(cs)
    assert len(terms) == cs.K
    for term, row, J in zip(terms, cs.indices, cs.values):
        assert term.indices == tuple(int(i) for i in row)
        assert term.coefficient == pytest.approx(cs.C * J)
        assert term.operator == monomial4(*term.indices, 10)
