# services/model.py
# Kopplungen ziehen (binär, unär, Gauß sparse/dense) und den Hamiltonian als Termliste aufbauen.
#
# RNG: every realization gets numpy's PCG64 seeded through SeedSequence(seed), so a
# 64-bit seed reproduces the same draw on every machine and numpy version that keeps
# the PCG64 stream stable.

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import combinations
from math import comb, sqrt
from typing import Dict, List, Optional, Tuple

import numpy as np

from services.errors import ValidationError
from services.majorana import HamiltonianTerm, monomial4

logger = logging.getLogger(__name__)

Q = 4
MIN_N = 8


class CouplingScheme(str, Enum):
    BINARY_SPARSE = "binary"
    UNARY_SPARSE = "unary"
    GAUSSIAN_SPARSE = "gaussian"
    GAUSSIAN_DENSE = "dense"

    @classmethod
    def parse(cls, value) -> "CouplingScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValidationError(f"unknown coupling scheme '{value}' (expected one of {names})")

    @property
    def is_gaussian(self) -> bool:
        return self in (CouplingScheme.GAUSSIAN_SPARSE, CouplingScheme.GAUSSIAN_DENSE)


NORMALIZATIONS = ("exact", "expected")
SAMPLINGS = ("fixed_k", "bernoulli")


def n_total(N: int, q: int = Q) -> int:
    if N < q:
        raise ValidationError(f"N={N} is smaller than q={q}")
    return comb(N, q)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@lru_cache(maxsize=None)
def _tuple_table(N: int) -> np.ndarray:
    """All (a,b,c,d), 1-based, in lexicographic order; row i is the i-th combination."""
    table = np.array(list(combinations(range(1, N + 1), Q)), dtype=np.int64)
    table.setflags(write=False)
    return table


@dataclass(frozen=True, eq=False)
class CouplingSet:
    N: int
    indices: np.ndarray
    values: np.ndarray
    C: float
    scheme: CouplingScheme
    seed: Optional[int] = None
    sampling: str = "fixed_k"
    q: int = field(default=Q)

    def __post_init__(self):
        indices = np.array(self.indices, dtype=np.int64).reshape(-1, Q)
        values = np.array(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "scheme", CouplingScheme.parse(self.scheme))
        self._validate(indices, values)
        order = np.lexsort(indices.T[::-1])
        indices, values = indices[order], values[order]
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    def _validate(self, indices: np.ndarray, values: np.ndarray):
        if self.q != Q:
            raise ValidationError(f"only q=4 is supported, got q={self.q}")
        if self.N % 2 or self.N < MIN_N:
            raise ValidationError(f"N must be even and >= {MIN_N}, got {self.N}")
        if len(indices) != len(values):
            raise ValidationError("indices and values differ in length")
        if len(values) == 0:
            raise ValidationError("a coupling set needs at least one nonzero coupling")
        if len(values) > n_total(self.N):
            raise ValidationError(f"K={len(values)} exceeds N_total={n_total(self.N)}")
        if np.any(indices < 1) or np.any(indices > self.N):
            raise ValidationError(f"Majorana index outside [1, {self.N}]")
        if np.any(np.diff(indices, axis=1) <= 0):
            raise ValidationError("every index tuple must be strictly increasing")
        if len(np.unique(indices, axis=0)) != len(indices):
            raise ValidationError("duplicate index tuple")
        if np.any(values == 0):
            raise ValidationError("zero couplings must not be stored")
        if not self.C > 0:
            raise ValidationError(f"normalization constant must be positive, got {self.C}")
        if self.scheme is CouplingScheme.BINARY_SPARSE and not np.all(np.abs(values) == 1):
            raise ValidationError("binary couplings must be +1 or -1")
        if self.scheme is CouplingScheme.UNARY_SPARSE and not np.all(values == 1):
            raise ValidationError("unary couplings must all be +1")
        if self.scheme is CouplingScheme.GAUSSIAN_DENSE and len(values) != n_total(self.N):
            raise ValidationError("a dense coupling set must hold all N_total couplings")

    @property
    def K(self) -> int:
        return len(self.values)

    @property
    def n_total(self) -> int:
        return n_total(self.N)

    @property
    def p(self) -> float:
        return self.K / self.n_total

    @property
    def couplings(self) -> Dict[Tuple[int, int, int, int], float]:
        return {tuple(int(i) for i in row): float(v) for row, v in zip(self.indices, self.values)}

    @property
    def sign_counts(self) -> Tuple[int, int]:
        return int(np.sum(self.values > 0)), int(np.sum(self.values < 0))

    def negated(self) -> "CouplingSet":
        """Same support with every J flipped (H -> -H)."""
        if self.scheme is CouplingScheme.UNARY_SPARSE:
            raise ValidationError("negating a unary set leaves the unary scheme")
        return CouplingSet(self.N, self.indices, -self.values, self.C, self.scheme, self.seed, self.sampling)

    def __eq__(self, other):
        if not isinstance(other, CouplingSet):
            return NotImplemented
        return (
            self.N == other.N
            and self.scheme is other.scheme
            and self.C == other.C
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.N, self.scheme, self.C, self.indices.tobytes(), self.values.tobytes()))

    def __repr__(self):
        return f"CouplingSet(N={self.N}, K={self.K}, scheme={self.scheme.value}, C={self.C:.6g}, seed={self.seed})"


def _check_k(N: int, K: int, minimum: int = 1):
    total = n_total(N)
    if not isinstance(K, (int, np.integer)):
        raise ValidationError(f"K must be an integer, got {K!r}")
    if K > total:
        raise ValidationError(f"K={K} exceeds N_total={total} for N={N}")
    if K < minimum:
        raise ValidationError(f"K={K} is below the minimum of {minimum}")


def _support(N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """K distinct rows of the tuple table, uniformly without replacement (draw order kept)."""
    return rng.choice(n_total(N), size=K, replace=False)


def sample_binary(N: int, K: int, seed: int) -> CouplingSet:
    """K/2 couplings set to +1 and K/2 others to -1; C = 1/sqrt(K)."""
    if K % 2:
        raise ValidationError("K must be even for binary scheme")
    _check_k(N, K, minimum=4)
    rng = make_rng(seed)
    chosen = _support(N, K, rng)
    values = np.where(np.arange(K) < K // 2, 1.0, -1.0)
    return CouplingSet(N, _tuple_table(N)[chosen], values, 1.0 / sqrt(K), CouplingScheme.BINARY_SPARSE, seed)


def sample_unary(N: int, K: int, seed: int) -> CouplingSet:
    _check_k(N, K)
    rng = make_rng(seed)
    chosen = _support(N, K, rng)
    return CouplingSet(N, _tuple_table(N)[chosen], np.ones(K), 1.0 / sqrt(K), CouplingScheme.UNARY_SPARSE, seed)


def _gaussian_constant(values: np.ndarray, normalization: str) -> float:
    if normalization == "exact":
        return 1.0 / sqrt(float(np.sum(values ** 2)))
    if normalization == "expected":
        return 1.0 / sqrt(len(values))
    raise ValidationError(f"unknown normalization '{normalization}' (expected one of {NORMALIZATIONS})")


def sample_gaussian(N: int, K: Optional[int], seed: int, dense: bool = False,
                    normalization: str = "exact") -> CouplingSet:
    """Standard-normal couplings on K tuples; dense takes all N_total tuples."""
    total = n_total(N)
    rng = make_rng(seed)
    if dense:
        if K not in (None, total):
            logger.warning("dense Gaussian set ignores K=%s, using N_total=%d", K, total)
        K = total
        chosen = np.arange(total)
        scheme = CouplingScheme.GAUSSIAN_DENSE
    else:
        _check_k(N, K)
        chosen = _support(N, K, rng)
        scheme = CouplingScheme.GAUSSIAN_SPARSE
    values = rng.standard_normal(K)
    C = _gaussian_constant(values, normalization)
    return CouplingSet(N, _tuple_table(N)[chosen], values, C, scheme, seed)


def sample_bernoulli(N: int, p: float, seed: int, scheme, normalization: str = "exact") -> CouplingSet:
    """Keep each coupling independently with probability p (K is random)."""
    scheme = CouplingScheme.parse(scheme)
    if not 0 < p <= 1:
        raise ValidationError(f"p must lie in (0, 1], got {p}")
    if scheme is CouplingScheme.GAUSSIAN_DENSE:
        raise ValidationError("the dense scheme has no sparsity to draw")
    rng = make_rng(seed)
    keep = rng.random(n_total(N)) < p
    K = int(keep.sum())
    if K == 0:
        raise ValidationError(f"Bernoulli draw with p={p} kept no coupling (seed={seed})")
    if scheme is CouplingScheme.BINARY_SPARSE:
        values = rng.choice([-1.0, 1.0], size=K)
        C = 1.0 / sqrt(K)
    elif scheme is CouplingScheme.UNARY_SPARSE:
        values = np.ones(K)
        C = 1.0 / sqrt(K)
    else:
        values = rng.standard_normal(K)
        C = _gaussian_constant(values, normalization)
    return CouplingSet(N, _tuple_table(N)[keep], values, C, scheme, seed, sampling="bernoulli")


def k_from_p(N: int, p: float, scheme) -> int:
    """Fixed-K equivalent of a sparsity p (rounded down to even for binary)."""
    scheme = CouplingScheme.parse(scheme)
    if not 0 < p <= 1:
        raise ValidationError(f"p must lie in (0, 1], got {p}")
    K = int(round(p * n_total(N)))
    if scheme is CouplingScheme.BINARY_SPARSE:
        K -= K % 2
    return max(K, 4 if scheme is CouplingScheme.BINARY_SPARSE else 1)


def sample(scheme, N: int, K: Optional[int], seed: int, normalization: str = "exact") -> CouplingSet:
    scheme = CouplingScheme.parse(scheme)
    if scheme is CouplingScheme.BINARY_SPARSE:
        return sample_binary(N, K, seed)
    if scheme is CouplingScheme.UNARY_SPARSE:
        return sample_unary(N, K, seed)
    return sample_gaussian(N, K, seed, dense=scheme is CouplingScheme.GAUSSIAN_DENSE,
                           normalization=normalization)


@lru_cache(maxsize=200_000)
def _cached_monomial(a: int, b: int, c: int, d: int, N: int):
    return monomial4(a, b, c, d, N)


def assemble(cs: CouplingSet) -> List[HamiltonianTerm]:
    """One term per stored coupling, coefficient C*J, in sorted tuple order."""
    terms = []
    for row, J in zip(cs.indices, cs.values):
        a, b, c, d = (int(i) for i in row)
        terms.append(HamiltonianTerm(
            indices=(a, b, c, d),
            coupling=float(J),
            operator=_cached_monomial(a, b, c, d, cs.N),
            coefficient=cs.C * float(J),
        ))
    return terms
