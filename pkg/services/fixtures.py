# services/fixtures.py
# Textformat für einzelne Realisierungen: Header "N=<int>", "C=<float|auto>", optional "scheme=<name>",
# danach eine Zeile pro Term "<sign> <a> <b> <c> <d> [magnitude]". Kommentare beginnen mit '#'.

import logging
import os
from dataclasses import dataclass
from math import sqrt
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from services.errors import FixtureError, ValidationError
from services.model import CouplingScheme, CouplingSet, n_total

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
FIXTURE_DIR = DATA_DIR / "fixtures"

# shipped single realizations: file name -> (N, K)
SHIPPED_FIXTURES: Dict[str, Tuple[int, int]] = {
    "syk_n32_k30.txt": (32, 30),
    "syk_n34_k36.txt": (34, 36),
}


@dataclass
class FixtureTerm:
    line_no: int
    sign: int
    indices: Tuple[int, int, int, int]
    magnitude: float = 1.0

    @property
    def value(self) -> float:
        return self.sign * self.magnitude


@dataclass
class FixtureData:
    N: int
    C: Optional[float]  # None means "auto"
    scheme: CouplingScheme
    terms: List[FixtureTerm]

    @property
    def K(self) -> int:
        return len(self.terms)

    @property
    def sign_counts(self) -> Tuple[int, int]:
        plus = sum(1 for t in self.terms if t.sign > 0)
        return plus, self.K - plus


def _parse_header(key: str, raw: str, line_no: int, header: dict):
    if key in header:
        raise FixtureError(f"repeated header '{key}'", line_no)
    if key == "N":
        try:
            header["N"] = int(raw)
        except ValueError:
            raise FixtureError(f"N must be an integer, got '{raw}'", line_no)
    elif key == "C":
        if raw.lower() == "auto":
            header["C"] = None
        else:
            try:
                header["C"] = float(raw)
            except ValueError:
                raise FixtureError(f"C must be a float or 'auto', got '{raw}'", line_no)
    elif key == "scheme":
        try:
            header["scheme"] = CouplingScheme.parse(raw)
        except ValidationError as e:
            raise FixtureError(str(e), line_no)
    else:
        raise FixtureError(f"unknown header '{key}'", line_no)


def parse_fixture(text: str) -> FixtureData:
    header: dict = {}
    terms: List[FixtureTerm] = []
    seen: Dict[Tuple[int, ...], int] = {}

    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, raw = (part.strip() for part in line.split("=", 1))
            _parse_header(key, raw, line_no, header)
            continue

        if "N" not in header:
            raise FixtureError("term before the 'N=' header", line_no)
        N = header["N"]
        fields = line.split()
        if len(fields) not in (5, 6) or fields[0] not in ("+", "-"):
            raise FixtureError(f"expected '<sign> <a> <b> <c> <d> [magnitude]', got '{line}'", line_no)
        try:
            indices = tuple(int(f) for f in fields[1:5])
            magnitude = float(fields[5]) if len(fields) == 6 else 1.0
        except ValueError:
            raise FixtureError(f"non-numeric field in '{line}'", line_no)
        if not all(1 <= i <= N for i in indices):
            raise FixtureError(f"index outside [1, {N}] in {indices}", line_no)
        if not indices[0] < indices[1] < indices[2] < indices[3]:
            raise FixtureError(f"indices must be strictly increasing, got {indices}", line_no)
        if magnitude <= 0:
            raise FixtureError(f"magnitude must be positive, got {magnitude}", line_no)
        if indices in seen:
            raise FixtureError(f"duplicate tuple {indices} (first on line {seen[indices]})", line_no)
        seen[indices] = line_no
        terms.append(FixtureTerm(line_no, 1 if fields[0] == "+" else -1, indices, magnitude))

    if "N" not in header:
        raise FixtureError("missing 'N=' header")
    if "C" not in header:
        raise FixtureError("missing 'C=' header")
    N = header["N"]
    if N % 2 or N < 8:
        raise FixtureError(f"N must be even and >= 8, got {N}")
    if not terms:
        raise FixtureError("fixture holds no terms")
    if len(terms) > n_total(N):
        raise FixtureError(f"K={len(terms)} exceeds N_total={n_total(N)}")

    magnitudes_used = any(t.magnitude != 1.0 for t in terms)
    scheme = header.get("scheme", CouplingScheme.GAUSSIAN_SPARSE if magnitudes_used else CouplingScheme.BINARY_SPARSE)
    return FixtureData(N=N, C=header["C"], scheme=scheme, terms=terms)


def to_coupling_set(data: FixtureData, seed: Optional[int] = None) -> CouplingSet:
    values = np.array([t.value for t in data.terms])
    C = data.C if data.C is not None else 1.0 / sqrt(float(np.sum(values ** 2)))
    indices = np.array([t.indices for t in data.terms])
    return CouplingSet(data.N, indices, values, C, data.scheme, seed)


def load_fixture(path: Union[str, Path]) -> CouplingSet:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise FixtureError(f"cannot read fixture {path}: {e}")
    return to_coupling_set(parse_fixture(text))


def validate_fixture(path: Union[str, Path]) -> dict:
    """Check ordering, duplicates, N bounds, K and sign balance; raises FixtureError on failure."""
    path = Path(path)
    try:
        data = parse_fixture(path.read_text())
    except OSError as e:
        raise FixtureError(f"cannot read fixture {path}: {e}")

    plus, minus = data.sign_counts
    if data.scheme is CouplingScheme.BINARY_SPARSE and plus != minus:
        raise FixtureError(f"binary fixture is unbalanced (+:{plus} -:{minus})")
    if data.scheme is CouplingScheme.UNARY_SPARSE and minus:
        raise FixtureError(f"unary fixture holds {minus} negative couplings")

    expected = SHIPPED_FIXTURES.get(path.name)
    if expected is not None and expected != (data.N, data.K):
        raise FixtureError(f"shipped fixture {path.name} should hold N={expected[0]} K={expected[1]}, "
                           f"found N={data.N} K={data.K}")

    # CouplingSet re-checks the scheme invariants
    to_coupling_set(data)
    return {
        "path": str(path),
        "N": data.N,
        "K": data.K,
        "plus": plus,
        "minus": minus,
        "scheme": data.scheme.value,
        "shipped": expected is not None,
        "message": f"OK: N={data.N} K={data.K} (+:{plus} −:{minus})",
    }


def format_fixture(cs: CouplingSet, comments: Optional[List[str]] = None) -> str:
    lines = [f"# {c}" for c in (comments or [])]
    lines.append(f"N={cs.N}")
    lines.append(f"C={float(cs.C)!r}")
    if cs.scheme is not CouplingScheme.BINARY_SPARSE:
        lines.append(f"scheme={cs.scheme.value}")
    unit = cs.scheme in (CouplingScheme.BINARY_SPARSE, CouplingScheme.UNARY_SPARSE)
    for row, J in zip(cs.indices, cs.values):
        sign = "+" if J > 0 else "-"
        body = " ".join(str(int(i)) for i in row)
        lines.append(f"{sign} {body}" if unit else f"{sign} {body} {float(abs(J))!r}")
    return "\n".join(lines) + "\n"


def write_fixture(cs: CouplingSet, path: Union[str, Path], comments: Optional[List[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(format_fixture(cs, comments))
    os.replace(tmp, path)
    logger.info("wrote fixture %s (N=%d, K=%d)", path, cs.N, cs.K)
    return path
