# services/rmt.py
# Zufallsmatrix-Referenzen: Ensemble nach N mod 8, Stichproben aus GOE/GUE/GSE/Poisson,
# gepinnte <r>-Werte und die Surmise-Kurven für P(s) und P(r).

import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from math import log, pi, sqrt
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from scipy import linalg

from services.errors import ValidationError

logger = logging.getLogger(__name__)

REFERENCE_FILE = Path(__file__).resolve().parent.parent / "data" / "rmt_reference.json"
POISSON_MEAN_R = 2 * log(2) - 1


class RmtEnsemble(str, Enum):
    GOE = "GOE"
    GUE = "GUE"
    GSE = "GSE"
    POISSON = "Poisson"

    @property
    def dyson_index(self) -> int:
        return {"GOE": 1, "GUE": 2, "GSE": 4, "Poisson": 0}[self.value]


def ensemble_for_n(N: int) -> RmtEnsemble:
    """GOE for N = 0 mod 8, GUE for N = 2, 6 mod 8, GSE for N = 4 mod 8."""
    if N % 2:
        raise ValidationError(f"N must be even, got {N}")
    return {0: RmtEnsemble.GOE, 4: RmtEnsemble.GSE}.get(N % 8, RmtEnsemble.GUE)


def sample_levels(ensemble: RmtEnsemble, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted eigenvalues of one random matrix (GSE: one level per Kramers pair)."""
    ensemble = RmtEnsemble(ensemble)
    if ensemble is RmtEnsemble.POISSON:
        return np.sort(rng.random(dim))
    if ensemble is RmtEnsemble.GOE:
        a = rng.standard_normal((dim, dim))
        return linalg.eigh((a + a.T) / 2, eigvals_only=True)
    if ensemble is RmtEnsemble.GUE:
        a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        return linalg.eigh((a + a.conj().T) / 2, eigvals_only=True)

    # quaternion self-dual: [[A, B], [-B*, A*]] with A Hermitian, B antisymmetric
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    b = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    a = (a + a.conj().T) / 2
    b = (b - b.T) / 2
    h = np.block([[a, b], [-b.conj(), a.conj()]])
    return linalg.eigh(h, eigvals_only=True)[::2]


DEFAULT_MATRICES = 200
DEFAULT_DIM = 300
DEFAULT_SEED = 2024

# tables sampled in this process that could not be written to disk
_UNSAVED: Dict[str, dict] = {}


def sample_reference_r(ensemble: RmtEnsemble, n_matrices: int = DEFAULT_MATRICES, dim: int = DEFAULT_DIM,
                       seed: int = DEFAULT_SEED) -> Dict[str, float]:
    """Monte-Carlo <r> with the standard error over matrices."""
    from services.statistics import gap_ratios

    ensemble = RmtEnsemble(ensemble)
    if n_matrices < 2:
        raise ValidationError("need at least two matrices for a standard error")
    rng = np.random.default_rng(seed)
    means = np.array([gap_ratios(sample_levels(ensemble, dim, rng)).mean for _ in range(n_matrices)])
    return {
        "mean_r": float(means.mean()),
        "stderr": float(means.std(ddof=1) / sqrt(n_matrices)),
        "n_matrices": n_matrices,
        "dim": dim,
        "seed": seed,
    }


@dataclass(frozen=True)
class RmtReference:
    ensemble: RmtEnsemble
    mean_r: float
    stderr: float
    source: str


def sample_reference_table(n_matrices: Optional[int] = None, dim: Optional[int] = None,
                           seed: Optional[int] = None) -> dict:
    n_matrices = DEFAULT_MATRICES if n_matrices is None else n_matrices
    dim = DEFAULT_DIM if dim is None else dim
    seed = DEFAULT_SEED if seed is None else seed
    values = {}
    for offset, ensemble in enumerate((RmtEnsemble.GOE, RmtEnsemble.GUE, RmtEnsemble.GSE)):
        logger.info("sampling %d %s matrices of dimension %d", n_matrices, ensemble.value, dim)
        values[ensemble.value] = sample_reference_r(ensemble, n_matrices, dim, seed + offset)
    return {
        "version": 1,
        "generated_by": "rmt-reference",
        "values": values,
        "poisson": {"mean_r": POISSON_MEAN_R, "stderr": 0.0},
    }


def pin_reference(path: Union[str, Path] = REFERENCE_FILE, n_matrices: Optional[int] = None,
                  dim: Optional[int] = None, seed: Optional[int] = None) -> dict:
    """Sample the reference table and write it atomically to `path`."""
    table = sample_reference_table(n_matrices, dim, seed)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    _UNSAVED.pop(str(path), None)
    return table


def load_reference_table(path: Union[str, Path] = REFERENCE_FILE) -> dict:
    """Read the pinned table; a missing table is sampled once and pinned."""
    path = Path(path)
    if not path.exists():
        if str(path) in _UNSAVED:
            return _UNSAVED[str(path)]
        logger.warning("no reference table at %s, sampling one (%d matrices of dimension %d)",
                       path, DEFAULT_MATRICES, DEFAULT_DIM)
        try:
            return pin_reference(path)
        except OSError as e:
            logger.warning("could not pin the reference table: %s", e)
            table = sample_reference_table()
            _UNSAVED[str(path)] = table
            return table
    with open(path) as handle:
        table = json.load(handle)
    if "values" not in table:
        raise ValidationError(f"{path} holds no 'values' section")
    return table


def rmt_reference(N: Optional[int] = None, ensemble: Optional[RmtEnsemble] = None,
                  path: Union[str, Path] = REFERENCE_FILE) -> RmtReference:
    """Reference <r> for an ensemble, or for the ensemble N mod 8 selects."""
    if ensemble is None:
        if N is None:
            raise ValidationError("give either N or an ensemble")
        ensemble = ensemble_for_n(N)
    ensemble = RmtEnsemble(ensemble)
    if ensemble is RmtEnsemble.POISSON:
        return RmtReference(ensemble, POISSON_MEAN_R, 0.0, "analytic")
    entry = load_reference_table(path)["values"][ensemble.value]
    return RmtReference(ensemble, float(entry["mean_r"]), float(entry["stderr"]), str(path))


# --- Surmise-Kurven ---

def spacing_surmise(s: np.ndarray, ensemble: RmtEnsemble) -> np.ndarray:
    """Wigner surmise P(s) for unit mean spacing (Poisson: exp(-s))."""
    s = np.asarray(s, dtype=float)
    ensemble = RmtEnsemble(ensemble)
    if ensemble is RmtEnsemble.POISSON:
        return np.exp(-s)
    if ensemble is RmtEnsemble.GOE:
        return (pi / 2) * s * np.exp(-pi * s ** 2 / 4)
    if ensemble is RmtEnsemble.GUE:
        return (32 / pi ** 2) * s ** 2 * np.exp(-4 * s ** 2 / pi)
    return (2 ** 18 / (3 ** 6 * pi ** 3)) * s ** 4 * np.exp(-64 * s ** 2 / (9 * pi))


_RATIO_NORMS = {1: 8 / 27, 2: 4 * pi / (81 * sqrt(3)), 4: 4 * pi / (729 * sqrt(3))}


def gap_ratio_surmise(r: np.ndarray, ensemble: RmtEnsemble) -> np.ndarray:
    """Density of r = min/max on [0, 1] (surmise for 3x3 matrices; Poisson 2/(1+r)^2)."""
    r = np.asarray(r, dtype=float)
    ensemble = RmtEnsemble(ensemble)
    if ensemble is RmtEnsemble.POISSON:
        return 2.0 / (1.0 + r) ** 2
    beta = ensemble.dyson_index
    return 2.0 / _RATIO_NORMS[beta] * (r + r ** 2) ** beta / (1 + r + r ** 2) ** (1 + 1.5 * beta)


def number_variance_asymptotic(L: np.ndarray, ensemble: RmtEnsemble) -> np.ndarray:
    """Large-L number variance; Poisson is exactly L."""
    L = np.asarray(L, dtype=float)
    ensemble = RmtEnsemble(ensemble)
    gamma = np.euler_gamma
    if ensemble is RmtEnsemble.POISSON:
        return L
    if ensemble is RmtEnsemble.GOE:
        return (2 / pi ** 2) * (np.log(2 * pi * L) + gamma + 1 - pi ** 2 / 8)
    if ensemble is RmtEnsemble.GUE:
        return (1 / pi ** 2) * (np.log(2 * pi * L) + gamma + 1)
    return (1 / (2 * pi ** 2)) * (np.log(4 * pi * L) + gamma + 1 + pi ** 2 / 8)
