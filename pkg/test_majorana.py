# test_majorana.py
import sys
import os
from functools import reduce

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
from services.errors import ResourceCapError, ValidationError
from services.majorana import (
    PauliString, commutation_sign, commutes, inverse, majorana, monomial4, parity_string, product, to_dense,
)

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def kron_label(label: str) -> np.ndarray:
    # qubit 1 is the least significant bit, so it is the last kron factor
    return reduce(np.kron, [PAULI[c] for c in reversed(label)])


@pytest.mark.parametrize("label", ["X", "Y", "Z", "XZ", "YIZ", "ZZYX"])
def test_dense_matches_kron(label):
    assert np.array_equal(to_dense(PauliString.from_label(label)), kron_label(label))


def test_label_roundtrip():
    p = PauliString.from_label("XIZY", phase=3)
    assert p.label == "XIZY"
    assert repr(p) == "PauliString(-iXIZY)"


@pytest.mark.parametrize("N", [2, 4, 6, 8, 10, 12])
def test_majorana_anticommutators(N):
    chis = [majorana(a, N) for a in range(1, N + 1)]
    for a, chi_a in enumerate(chis):
        for b, chi_b in enumerate(chis):
            ab, ba = product(chi_a, chi_b), product(chi_b, chi_a)
            if a == b:
                # chi^2 = I
                assert ab == PauliString.identity(N // 2)
            else:
                assert commutation_sign(chi_a, chi_b) == -1
                assert (ab.x_mask, ab.z_mask) == (ba.x_mask, ba.z_mask)
                assert ab.phase == (ba.phase + 2) % 4


def test_product_matches_dense_product():
    rng = np.random.default_rng(11)
    n = 4
    for _ in range(100):
        p, q = (PauliString(n, int(rng.integers(16)), int(rng.integers(16)), int(rng.integers(4)))
                for _ in range(2))
        assert np.array_equal(to_dense(product(p, q)), to_dense(p) @ to_dense(q))
        assert np.array_equal(to_dense(p @ q), to_dense(p) @ to_dense(q))


def random_string(rng, n=8):
    return PauliString(n, int(rng.integers(1 << n)), int(rng.integers(1 << n)), int(rng.integers(4)))


def test_product_is_associative():
    rng = np.random.default_rng(21)
    for _ in range(1000):
        p, q, r = (random_string(rng) for _ in range(3))
        assert product(product(p, q), r) == product(p, product(q, r))


def test_product_with_inverse_is_identity():
    rng = np.random.default_rng(22)
    identity = PauliString.identity(8)
    for _ in range(1000):
        p = random_string(rng)
        assert product(p, inverse(p)) == identity
        assert product(inverse(p), p) == identity
        assert product(p, identity) == p


def test_commutation_sign_matches_dense():
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = PauliString(3, int(rng.integers(8)), int(rng.integers(8)))
        q = PauliString(3, int(rng.integers(8)), int(rng.integers(8)))
        P, Q = to_dense(p), to_dense(q)
        assert np.array_equal(P @ Q, commutation_sign(p, q) * (Q @ P))


def test_monomial_example():
    assert monomial4(1, 2, 3, 4, 4) == PauliString.from_label("ZZ")


def test_monomials_are_hermitian_dense_products():
    N = 8
    mats = {a: to_dense(majorana(a, N)) for a in range(1, N + 1)}
    for a, b, c, d in [(1, 2, 3, 4), (1, 3, 5, 7), (2, 4, 6, 8), (1, 4, 6, 7), (3, 5, 6, 8)]:
        m = monomial4(a, b, c, d, N)
        assert m.is_hermitian()
        expected = -(mats[a] @ mats[b] @ mats[c] @ mats[d])
        assert np.array_equal(to_dense(m), expected)
        assert np.array_equal(to_dense(m), to_dense(m).conj().T)


def test_parity_commutes_with_monomials_only():
    N = 10
    parity = parity_string(N)
    assert commutes(parity, monomial4(1, 2, 5, 9, N))
    assert commutes(parity, monomial4(3, 4, 7, 10, N))
    for a in range(1, N + 1):
        assert not commutes(parity, majorana(a, N))


@pytest.mark.parametrize("indices", [(2, 1, 3, 4), (1, 1, 2, 3), (4, 3, 2, 1)])
def test_monomial_rejects_unordered_indices(indices):
    with pytest.raises(ValidationError):
        monomial4(*indices, 8)


def test_invalid_majorana_index():
    with pytest.raises(ValidationError):
        majorana(9, 8)
    with pytest.raises(ValidationError):
        majorana(1, 7)


def test_dense_cap():
    with pytest.raises(ResourceCapError):
        to_dense(PauliString.identity(17))
