# services/majorana.py
# Majorana-Algebra auf N/2 Qubits (Jordan-Wigner), Pauli-Strings symplektisch als Bitmasken.
#
# Convention: a string is i^phase * P_1 ⊗ ... ⊗ P_n with P_k given by the bits
# (x_k, z_k): (0,0)=I, (1,0)=X, (0,1)=Z, (1,1)=Y. Qubit k lives in bit k-1 of the
# masks and of computational basis indices.

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from services.errors import ResourceCapError, ValidationError

logger = logging.getLogger(__name__)

DENSE_QUBIT_CAP = 16
_PHASE_VALUES = np.array([1, 1j, -1, -1j], dtype=complex)
_PHASE_LABELS = ("+", "+i", "-", "-i")


def popcount(value: int) -> int:
    return bin(value).count("1")


@dataclass(frozen=True)
class PauliString:
    n_qubits: int
    x_mask: int
    z_mask: int
    phase: int = 0

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValidationError("n_qubits must be positive")
        limit = 1 << self.n_qubits
        if not (0 <= self.x_mask < limit and 0 <= self.z_mask < limit):
            raise ValidationError(f"masks exceed {self.n_qubits} qubits")
        if self.phase not in (0, 1, 2, 3):
            raise ValidationError(f"phase must be in 0..3, got {self.phase}")

    @classmethod
    def identity(cls, n_qubits: int) -> "PauliString":
        return cls(n_qubits, 0, 0, 0)

    @classmethod
    def from_label(cls, label: str, phase: int = 0) -> "PauliString":
        """Build from a label like "XIZY"; character i acts on qubit i+1."""
        x_mask = z_mask = 0
        for i, char in enumerate(label.upper()):
            if char in "XY":
                x_mask |= 1 << i
            if char in "ZY":
                z_mask |= 1 << i
            if char not in "IXYZ":
                raise ValidationError(f"unknown Pauli character: {char}")
        return cls(len(label), x_mask, z_mask, phase % 4)

    @property
    def label(self) -> str:
        chars = []
        for i in range(self.n_qubits):
            x_bit = (self.x_mask >> i) & 1
            z_bit = (self.z_mask >> i) & 1
            chars.append("IZXY"[x_bit * 2 + z_bit])
        return "".join(chars)

    @property
    def sign(self) -> complex:
        return complex(_PHASE_VALUES[self.phase])

    def is_hermitian(self) -> bool:
        return self.phase in (0, 2)

    def __matmul__(self, other: "PauliString") -> "PauliString":
        return product(self, other)

    def __repr__(self):
        return f"PauliString({_PHASE_LABELS[self.phase]}{self.label})"


def product(p: PauliString, q: PauliString) -> PauliString:
    """Exact product p·q with the phase tracked mod 4."""
    if p.n_qubits != q.n_qubits:
        raise ValidationError(f"qubit-count mismatch: {p.n_qubits} vs {q.n_qubits}")
    # Y = i X Z, and Z^a X^b = (-1)^{a·b} X^b Z^a
    phase = (
        p.phase + q.phase
        + popcount(p.x_mask & p.z_mask)
        + popcount(q.x_mask & q.z_mask)
        + 2 * popcount(p.z_mask & q.x_mask)
    )
    x_mask = p.x_mask ^ q.x_mask
    z_mask = p.z_mask ^ q.z_mask
    phase -= popcount(x_mask & z_mask)
    return PauliString(p.n_qubits, x_mask, z_mask, phase % 4)


def inverse(p: PauliString) -> PauliString:
    return PauliString(p.n_qubits, p.x_mask, p.z_mask, (-p.phase) % 4)


def commutation_sign(p: PauliString, q: PauliString) -> int:
    """+1 if p and q commute, -1 if they anticommute."""
    if p.n_qubits != q.n_qubits:
        raise ValidationError(f"qubit-count mismatch: {p.n_qubits} vs {q.n_qubits}")
    overlap = popcount(p.x_mask & q.z_mask) + popcount(q.x_mask & p.z_mask)
    return -1 if overlap % 2 else 1


def commutes(p: PauliString, q: PauliString) -> bool:
    return commutation_sign(p, q) == 1


def _check_n(N: int):
    if N < 2 or N % 2:
        raise ValidationError(f"N must be a positive even integer, got {N}")


def majorana(a: int, N: int) -> PauliString:
    """Jordan-Wigner image of chi_a: X_k or Y_k behind a Z tail on qubits j < k."""
    _check_n(N)
    if not 1 <= a <= N:
        raise ValidationError(f"Majorana index {a} outside [1, {N}]")
    k = (a + 1) // 2
    bit = 1 << (k - 1)
    tail = bit - 1
    if a % 2:
        return PauliString(N // 2, bit, tail, 0)
    return PauliString(N // 2, bit, tail | bit, 0)


def parity_string(N: int) -> PauliString:
    """Global fermion parity Z_1 Z_2 ... Z_{N/2}."""
    _check_n(N)
    n = N // 2
    return PauliString(n, 0, (1 << n) - 1, 0)


def monomial4(a: int, b: int, c: int, d: int, N: int) -> PauliString:
    """Reduced string of i^2 chi_a chi_b chi_c chi_d; always Hermitian."""
    if not a < b < c < d:
        raise ValidationError(f"indices must be strictly increasing, got {(a, b, c, d)}")
    result = majorana(a, N)
    for index in (b, c, d):
        result = product(result, majorana(index, N))
    result = PauliString(result.n_qubits, result.x_mask, result.z_mask, (result.phase + 2) % 4)
    if not result.is_hermitian():
        raise RuntimeError(f"non-Hermitian monomial for {(a, b, c, d)}: {result!r}")
    return result


def _mask_parity(values: np.ndarray, mask: int) -> np.ndarray:
    """Parity (0/1) of popcount(values & mask), elementwise."""
    bits = values & mask
    shift = 1
    while shift < 64:
        bits = bits ^ (bits >> shift)
        shift <<= 1
    return bits & 1


def element_stream(p: PauliString) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rows, cols, values): the single nonzero entry of every row of the matrix of p."""
    dim = 1 << p.n_qubits
    rows = np.arange(dim, dtype=np.int64)
    cols = rows ^ p.x_mask
    base = _PHASE_VALUES[(p.phase + popcount(p.x_mask & p.z_mask)) % 4]
    signs = 1 - 2 * _mask_parity(cols, p.z_mask)
    return rows, cols, base * signs


def to_dense(p: PauliString, max_qubits: int = DENSE_QUBIT_CAP) -> np.ndarray:
    if p.n_qubits > max_qubits:
        dim = 1 << p.n_qubits
        raise ResourceCapError(
            f"dense string on {p.n_qubits} qubits exceeds cap of {max_qubits}",
            required_bytes=16 * dim * dim,
        )
    dim = 1 << p.n_qubits
    rows, cols, values = element_stream(p)
    matrix = np.zeros((dim, dim), dtype=complex)
    matrix[rows, cols] = values
    return matrix


@dataclass(frozen=True)
class HamiltonianTerm:
    """One summand C*J_abcd * (i^2 chi_a chi_b chi_c chi_d)."""
    indices: Tuple[int, int, int, int]
    coupling: float
    operator: PauliString
    coefficient: float
