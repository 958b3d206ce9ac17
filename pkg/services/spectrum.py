# services/spectrum.py
# Dichte Hamilton-Matrix aufbauen (voll oder pro Paritätssektor), diagonalisieren,
# Entartungen zählen und nach N mod 8 klassifizieren.

import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from services.errors import ConfigMismatchError, ResourceCapError, SolverError, ValidationError
from services.majorana import HamiltonianTerm, popcount, element_stream
from services.model import CouplingSet, assemble

logger = logging.getLogger(__name__)

MAX_DIMENSION = 2 ** 14
RELATIVE_DEGENERACY_TOL = 1e-10
HERMITIAN_ATOL = 1e-12
RECORD_FORMATS = ("bin", "csv")

Multiplicities = List[Tuple[float, int]]


class ParitySector(str, Enum):
    EVEN = "even"
    ODD = "odd"

    def dimension(self, n_qubits: int) -> int:
        return 2 ** (n_qubits - 1)

    def basis(self, n_qubits: int) -> np.ndarray:
        """Computational basis states of this sector (Hamming-weight parity), ascending."""
        return _sector_basis(n_qubits, self is ParitySector.ODD)


@lru_cache(maxsize=64)
def _sector_basis(n_qubits: int, odd: bool) -> np.ndarray:
    states = np.arange(2 ** n_qubits, dtype=np.int64)
    weights = _weights(states, n_qubits)
    basis = states[(weights % 2) == int(odd)]
    basis.setflags(write=False)
    return basis


def _weights(states: np.ndarray, n_qubits: int) -> np.ndarray:
    weights = np.zeros_like(states)
    for k in range(n_qubits):
        weights += (states >> k) & 1
    return weights


class DegeneracyClass(str, Enum):
    LEAST = "LeastDegenerate"
    EXTRA = "ExtraDegenerate"


def matrix_bytes(dim: int, complex_valued: bool = True) -> int:
    return (16 if complex_valued else 8) * dim * dim


def _term_is_real(term: HamiltonianTerm) -> bool:
    op = term.operator
    return (op.phase + popcount(op.x_mask & op.z_mask)) % 2 == 0


def build_matrix(terms: Sequence[HamiltonianTerm], sector: Optional[ParitySector] = None,
                 max_dimension: int = MAX_DIMENSION, force: bool = False) -> np.ndarray:
    """Dense Hermitian matrix of sum(coefficient * operator), streamed term by term."""
    if not terms:
        raise ValidationError("cannot build a matrix from zero terms")
    n_qubits = terms[0].operator.n_qubits
    if any(t.operator.n_qubits != n_qubits for t in terms):
        raise ValidationError("terms act on different numbers of Majorana fermions")

    sector = ParitySector(sector) if sector is not None else None
    full_dim = 2 ** n_qubits
    dim = full_dim if sector is None else sector.dimension(n_qubits)
    real = all(_term_is_real(t) for t in terms)
    if dim > max_dimension and not force:
        raise ResourceCapError(
            f"matrix dimension {dim} exceeds the cap of {max_dimension} (N={2 * n_qubits}); use force to override",
            required_bytes=matrix_bytes(dim, not real),
        )

    matrix = np.zeros((dim, dim), dtype=float if real else complex)
    if sector is None:
        for term in terms:
            rows, cols, values = element_stream(term.operator)
            matrix[rows, cols] += term.coefficient * (values.real if real else values)
        return matrix

    basis = sector.basis(n_qubits)
    lookup = np.full(full_dim, -1, dtype=np.int64)
    lookup[basis] = np.arange(dim)
    for term in terms:
        rows, cols, values = element_stream(term.operator)
        target = lookup[cols[basis]]
        if np.any(target < 0):
            raise ValidationError(f"term {term.indices} does not conserve fermion parity")
        entries = values[basis]
        matrix[np.arange(dim), target] += term.coefficient * (entries.real if real else entries)
    return matrix


def eigenvalues(matrix: np.ndarray, hermitian_atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """All eigenvalues of a dense Hermitian matrix, ascending."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {matrix.shape}")
    asymmetry = np.max(np.abs(matrix - matrix.conj().T)) if matrix.size else 0.0
    if asymmetry > hermitian_atol:
        raise ValidationError(f"matrix is not Hermitian (max |M - M^H| = {asymmetry:.3g})")
    try:
        values = linalg.eigh(matrix, eigvals_only=True, check_finite=False)
    except linalg.LinAlgError as e:
        raise SolverError(f"eigensolver failed: {e}")
    return np.sort(np.asarray(values, dtype=float))


def default_tolerance(eigs: np.ndarray) -> float:
    scale = float(np.max(np.abs(eigs))) if len(eigs) else 0.0
    return RELATIVE_DEGENERACY_TOL * max(1.0, scale)


def detect_degeneracies(eigs: Sequence[float], tol: Optional[float] = None) -> Multiplicities:
    """Greedy clustering: a value joins the open cluster if within tol of its first member."""
    eigs = np.asarray(eigs, dtype=float)
    if len(eigs) == 0:
        return []
    if np.any(np.diff(eigs) < 0):
        raise ValidationError("eigenvalues must be sorted ascending")
    if tol is None:
        tol = default_tolerance(eigs)
    if not tol > 0:
        raise ValidationError(f"degeneracy tolerance must be positive, got {tol}")

    clusters: Multiplicities = []
    values = eigs.tolist()
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] - values[start] > tol:
            members = values[start:i]
            clusters.append((sum(members) / len(members), len(members)))
            start = i
    return clusters


def distinct_values(multiplicities: Multiplicities) -> np.ndarray:
    return np.array([E for E, _ in multiplicities], dtype=float)


def expected_sector_degeneracy(N: int) -> int:
    return 2 if N % 8 == 4 else 1


def classify_degeneracy(N: int, sector_multiplicities: Sequence[Multiplicities]) -> DegeneracyClass:
    if N % 2:
        raise ValidationError(f"N must be even, got {N}")
    expected = expected_sector_degeneracy(N)
    for multiplicities in sector_multiplicities:
        if any(d != expected for _, d in multiplicities):
            return DegeneracyClass.EXTRA
    return DegeneracyClass.LEAST


def sectors_coincide(even: np.ndarray, odd: np.ndarray, atol: float = 1e-9) -> bool:
    return len(even) == len(odd) and bool(np.all(np.abs(np.asarray(even) - np.asarray(odd)) <= atol))


@dataclass(frozen=True, eq=False)
class SpectrumRecord:
    eigenvalues: np.ndarray
    multiplicities: Multiplicities
    meta: dict
    sector_eigenvalues: Optional[Tuple[np.ndarray, np.ndarray]] = None
    sector_multiplicities: Optional[Tuple[Multiplicities, Multiplicities]] = field(default=None)

    @property
    def N(self) -> int:
        return int(self.meta["N"])

    @property
    def dimension(self) -> int:
        return len(self.eigenvalues)

    @property
    def second_moment(self) -> float:
        """sum(eps^2) / dimension; equals 1 for a normalized Hamiltonian."""
        return float(np.sum(self.eigenvalues ** 2) / self.dimension)

    @property
    def classification(self) -> Optional[DegeneracyClass]:
        if self.sector_multiplicities is None:
            return None
        return classify_degeneracy(self.N, self.sector_multiplicities)

    def sector_distinct(self) -> List[np.ndarray]:
        if self.sector_multiplicities is None:
            return [distinct_values(self.multiplicities)]
        return [distinct_values(m) for m in self.sector_multiplicities]


def diagonalize(cs: CouplingSet, mode: str = "sectors", degeneracy_tol: Optional[float] = None,
                max_dimension: int = MAX_DIMENSION, force: bool = False,
                extra_meta: Optional[dict] = None) -> SpectrumRecord:
    """Sample-independent part of the pipeline: assemble -> matrix -> eigenvalues -> record."""
    if mode not in ("sectors", "full"):
        raise ValidationError(f"mode must be 'sectors' or 'full', got '{mode}'")
    terms = assemble(cs)

    sector_eigs = None
    if mode == "sectors":
        sector_eigs = tuple(
            eigenvalues(build_matrix(terms, sector, max_dimension=max_dimension, force=force))
            for sector in (ParitySector.EVEN, ParitySector.ODD)
        )
        eigs = np.sort(np.concatenate(sector_eigs))
    else:
        eigs = eigenvalues(build_matrix(terms, None, max_dimension=max_dimension, force=force))

    meta = {
        "N": cs.N,
        "K": cs.K,
        "scheme": cs.scheme.value,
        "seed": cs.seed,
        "sampling": cs.sampling,
        "C": cs.C,
        "mode": mode,
    }
    meta.update(extra_meta or {})
    return make_record(eigs, meta, sector_eigs, degeneracy_tol)


def make_record(eigs: np.ndarray, meta: dict, sector_eigs=None, degeneracy_tol: Optional[float] = None) -> SpectrumRecord:
    eigs = np.sort(np.asarray(eigs, dtype=float))
    tol = degeneracy_tol if degeneracy_tol is not None else default_tolerance(eigs)
    meta = dict(meta, degeneracy_tolerance=tol)
    sector_mult = None
    if sector_eigs is not None:
        sector_eigs = tuple(np.sort(np.asarray(s, dtype=float)) for s in sector_eigs)
        sector_mult = tuple(detect_degeneracies(s, tol) for s in sector_eigs)
    return SpectrumRecord(
        eigenvalues=eigs,
        multiplicities=detect_degeneracies(eigs, tol),
        meta=meta,
        sector_eigenvalues=sector_eigs,
        sector_multiplicities=sector_mult,
    )


# --- Persistenz ---

def record_filename(meta: dict, fmt: str = "bin") -> str:
    return f"N{meta['N']}_K{meta['K']}_{meta['scheme']}_s{meta['seed']}.{fmt}"


def _atomic_write(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(payload)
    os.replace(tmp, path)


def save_record(record: SpectrumRecord, directory: Union[str, Path], fmt: str = "bin") -> Path:
    if fmt not in RECORD_FORMATS:
        raise ValidationError(f"unknown record format '{fmt}' (expected one of {RECORD_FORMATS})")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / record_filename(record.meta, fmt)

    if record.sector_eigenvalues is not None:
        blocks = [("even", record.sector_eigenvalues[0]), ("odd", record.sector_eigenvalues[1])]
    else:
        blocks = [("full", record.eigenvalues)]
    header = dict(record.meta, layout=[[name, len(values)] for name, values in blocks])
    header_line = json.dumps(header, sort_keys=True)

    if fmt == "bin":
        body = b"".join(np.asarray(values, dtype="<f8").tobytes() for _, values in blocks)
        _atomic_write(path, header_line.encode() + b"\n" + body)
    else:
        frame = pd.concat(
            [pd.DataFrame({"sector": name, "eigenvalue": values}) for name, values in blocks],
            ignore_index=True,
        )
        text = "# " + header_line + "\n" + frame.to_csv(index=False, float_format="%.17g")
        _atomic_write(path, text.encode())
    return path


def load_record(path: Union[str, Path], expected_hash: Optional[str] = None) -> SpectrumRecord:
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.index(b"\n")
    first = raw[:newline].decode()
    if path.suffix == ".csv":
        header = json.loads(first.lstrip("# "))
        frame = pd.read_csv(path, skiprows=1)
        blocks = {name: group["eigenvalue"].to_numpy(dtype=float) for name, group in frame.groupby("sector", sort=False)}
    else:
        header = json.loads(first)
        data = np.frombuffer(raw[newline + 1:], dtype="<f8")
        blocks, offset = {}, 0
        for name, length in header["layout"]:
            blocks[name] = data[offset:offset + length].astype(float)
            offset += length

    if expected_hash is not None and header.get("meta_hash") != expected_hash:
        raise ConfigMismatchError(
            f"{path.name} was written with metadata hash {header.get('meta_hash')}, expected {expected_hash}")

    layout = header.pop("layout")
    tol = header.pop("degeneracy_tolerance")
    if [name for name, _ in layout] == ["even", "odd"]:
        sector_eigs = (blocks["even"], blocks["odd"])
        return make_record(np.concatenate(sector_eigs), header, sector_eigs, tol)
    return make_record(blocks["full"], header, None, tol)
