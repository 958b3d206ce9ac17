# services/ensemble.py
# Ensemble-Läufe: Seeds ableiten, Realisierungen ziehen und diagonalisieren (Worker-Pool),
# Spektren persistieren/wiederverwenden und Statistik über die Realisierungen aggregieren.

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from services import PIPELINE_VERSION
from services.errors import ConfigMismatchError, ResourceCapError, SykError, ValidationError
from services.model import (
    NORMALIZATIONS, SAMPLINGS, CouplingScheme, k_from_p, n_total, sample, sample_bernoulli,
)
from services.rmt import ensemble_for_n, rmt_reference
from services.spectrum import (
    MAX_DIMENSION, RECORD_FORMATS, DegeneracyClass, diagonalize, load_record, matrix_bytes,
    record_filename, save_record,
)
from services.statistics import (
    DEFAULT_FIT_ORDER, DEFAULT_TRIM, H_DENOMINATORS, NV_MODES, SFF_MODES, SffCurve, bootstrap_curves,
    default_time_grid, density_histogram, ensemble_number_variance, ensemble_sff, gap_ratio_histogram,
    pool_gap_ratios, ramp_onset, record_gap_ratios, spacing_edges, unfold,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_BUDGET = 2 ** 20
# Felder ohne Einfluss auf die Ergebnisse
_UNHASHED = ("out_dir", "workers")


@dataclass
class RunConfig:
    N: int
    scheme: str = "binary"
    K: Optional[int] = None
    p: Optional[float] = None
    n_realizations: Optional[int] = None
    eigenvalue_budget: Optional[int] = None
    base_seed: int = 0
    betas: List[float] = field(default_factory=lambda: [0.0])
    alphas: List[float] = field(default_factory=list)
    grid: Dict[str, float] = field(default_factory=lambda: {"n_points": 400, "t_min": 1e-1, "t_max": 1e6})
    sampling: str = "fixed_k"
    normalization: str = "exact"
    mode: str = "sectors"
    pool_sectors: bool = True
    sff_mode: str = "mean_ratio"
    h_denominator: str = "filtered"
    nv_mode: str = "per_realization"
    window_lengths: List[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 3.0, 5.0, 8.0])
    fit_order: int = DEFAULT_FIT_ORDER
    trim: float = DEFAULT_TRIM
    spacing_bin_width: float = 0.1
    ratio_bin_width: float = 0.05
    degeneracy_tol: Optional[float] = None
    max_dimension: int = MAX_DIMENSION
    force: bool = False
    persist: bool = True
    record_format: str = "bin"
    out_dir: Optional[str] = None
    workers: Optional[int] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.scheme = CouplingScheme.parse(self.scheme).value
        self._validate()

    def _validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        if self.N % 2 or self.N < 8:
            raise ValidationError(f"N must be even and >= 8, got {self.N}")
        if (self.K is None) == (self.p is None):
            raise ValidationError("exactly one of K and p must be given")
        if (self.n_realizations is None) == (self.eigenvalue_budget is None):
            raise ValidationError("exactly one of n_realizations and eigenvalue_budget must be given")
        if self.n_realizations is not None and self.n_realizations < 1:
            raise ValidationError(f"n_realizations must be >= 1, got {self.n_realizations}")
        if self.eigenvalue_budget is not None and self.eigenvalue_budget < 1:
            raise ValidationError(f"eigenvalue_budget must be positive, got {self.eigenvalue_budget}")
        if self.p is not None and not 0 < self.p <= 1:
            raise ValidationError(f"p must lie in (0, 1], got {self.p}")
        if self.K is not None and not 1 <= self.K <= n_total(self.N):
            raise ValidationError(f"K={self.K} outside [1, N_total={n_total(self.N)}]")
        if CouplingScheme(self.scheme) is CouplingScheme.BINARY_SPARSE and self.K is not None:
            if self.K % 2:
                raise ValidationError("K must be even for binary scheme")
            if self.K < 4:
                raise ValidationError(f"binary scheme needs K >= 4, got {self.K}")
        if self.sampling not in SAMPLINGS:
            raise ValidationError(f"unknown sampling '{self.sampling}' (expected one of {SAMPLINGS})")
        if self.normalization not in NORMALIZATIONS:
            raise ValidationError(f"unknown normalization '{self.normalization}'")
        if self.mode not in ("sectors", "full"):
            raise ValidationError(f"mode must be 'sectors' or 'full', got '{self.mode}'")
        if self.sff_mode not in SFF_MODES:
            raise ValidationError(f"unknown sff_mode '{self.sff_mode}' (expected one of {SFF_MODES})")
        if self.h_denominator not in H_DENOMINATORS:
            raise ValidationError(f"unknown h_denominator '{self.h_denominator}'")
        if self.nv_mode not in NV_MODES:
            raise ValidationError(f"unknown nv_mode '{self.nv_mode}' (expected one of {NV_MODES})")
        if self.record_format not in RECORD_FORMATS:
            raise ValidationError(f"unknown record_format '{self.record_format}'")
        if any(b < 0 for b in self.betas) or any(a < 0 for a in self.alphas):
            raise ValidationError("betas and alphas must be non-negative")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ValidationError(f"base_seed must be a 64-bit unsigned integer, got {self.base_seed}")
        if self.workers is not None and self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if CouplingScheme(self.scheme) is CouplingScheme.GAUSSIAN_DENSE:
            if self.sampling == "bernoulli":
                raise ValidationError("the dense scheme cannot use Bernoulli sampling")
            if self.effective_k != n_total(self.N):
                raise ValidationError(f"the dense scheme holds all N_total={n_total(self.N)} couplings")

    # --- abgeleitete Größen ---

    @property
    def effective_k(self) -> Optional[int]:
        """K used for fixed-K sampling; None for Bernoulli draws."""
        if self.sampling == "bernoulli":
            return None
        if self.K is not None:
            return self.K
        return k_from_p(self.N, self.p, self.scheme)

    @property
    def effective_p(self) -> float:
        return self.p if self.p is not None else self.K / n_total(self.N)

    @property
    def dimension(self) -> int:
        return 2 ** (self.N // 2)

    @property
    def realizations(self) -> int:
        if self.n_realizations is not None:
            return self.n_realizations
        return max(1, self.eigenvalue_budget // self.dimension)

    def time_grid(self) -> np.ndarray:
        return default_time_grid(int(self.grid["n_points"]), float(self.grid["t_min"]), float(self.grid["t_max"]))

    # --- Serialisierung ---

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        if "N" not in data:
            raise ValidationError("config needs N")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def realization_hash(self, seed: int) -> str:
        """Hash of everything that fixes one persisted spectrum."""
        payload = {
            "N": self.N, "scheme": self.scheme, "K": self.effective_k,
            "p": self.effective_p if self.sampling == "bernoulli" else None, "sampling": self.sampling,
            "normalization": self.normalization, "mode": self.mode, "seed": seed,
            "degeneracy_tol": self.degeneracy_tol, "pipeline": PIPELINE_VERSION,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def derive_seed(base_seed: int, index: int) -> int:
    """Seed of realization `index`.

    splitmix64: an odd-step Weyl sequence followed by a bijective finalizer, so
    for a fixed base seed every index below 2**64 gets its own seed.
    """
    if index < 0:
        raise ValidationError(f"realization index must be non-negative, got {index}")
    z = (int(base_seed) + (int(index) + 1) * _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


# --- eine Realisierung (läuft im Worker) ---

def _sample_couplings(config: RunConfig, seed: int):
    if config.sampling == "bernoulli":
        return sample_bernoulli(config.N, config.effective_p, seed, config.scheme, config.normalization)
    return sample(config.scheme, config.N, config.effective_k, seed, config.normalization)


def _realize(task: dict) -> dict:
    config = RunConfig.from_dict(task["config"])
    index, seed, meta_hash = task["index"], task["seed"], task["meta_hash"]
    result = {"index": index, "seed": seed, "record": None, "reused": False, "error": None, "mismatch": False}
    try:
        cs = _sample_couplings(config, seed)
        path = None
        if task["spectra_dir"] is not None:
            meta = {"N": cs.N, "K": cs.K, "scheme": cs.scheme.value, "seed": seed}
            path = Path(task["spectra_dir"]) / record_filename(meta, config.record_format)
            if path.exists():
                result["record"] = load_record(path, expected_hash=meta_hash)
                result["reused"] = True
                return result
        record = diagonalize(
            cs, mode=config.mode, degeneracy_tol=config.degeneracy_tol, max_dimension=config.max_dimension,
            force=config.force, extra_meta={"meta_hash": meta_hash, "realization": index},
        )
        if path is not None:
            save_record(record, path.parent, config.record_format)
        result["record"] = record
    except ConfigMismatchError as e:
        result["error"] = str(e)
        result["mismatch"] = True
    except SykError as e:
        result["error"] = f"{type(e).__name__}: {e}"
    return result


# --- Ergebnis ---

@dataclass(eq=False)
class EnsembleResult:
    config: RunConfig
    config_hash: str
    seeds: List[int]
    failures: List[dict]
    summary: dict
    sff: Dict[str, SffCurve] = field(default_factory=dict)
    number_variance: Optional[pd.DataFrame] = None
    spacing_histogram: Optional[pd.DataFrame] = None
    ratio_histogram: Optional[pd.DataFrame] = None
    realizations: Optional[pd.DataFrame] = None
    n_reused: int = 0
    error: Optional[str] = None
    records: list = field(default_factory=list, repr=False)
    pipeline_version: str = PIPELINE_VERSION

    @property
    def ok(self) -> bool:
        return self.error is None

    def provenance(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "pipeline_version": self.pipeline_version,
            "seeds": self.seeds,
            "failures": self.failures,
        }

    def frames(self) -> Dict[str, pd.DataFrame]:
        """Figure-ready tables keyed by dataset name."""
        out = {"summary": pd.DataFrame([self.summary])}
        if self.realizations is not None:
            out["realizations"] = self.realizations
        for name, curve in self.sff.items():
            out[name] = curve.to_frame()
        if self.number_variance is not None:
            out["number_variance"] = self.number_variance
        if self.spacing_histogram is not None:
            out["spacing_histogram"] = self.spacing_histogram
        if self.ratio_histogram is not None:
            out["ratio_histogram"] = self.ratio_histogram
        return out


def curve_name(kind: str, beta: float, alpha: Optional[float] = None) -> str:
    if kind == "g":
        return f"sff_g_beta{beta:g}"
    return f"sff_h_alpha{alpha:g}_beta{beta:g}"


def _mean_stderr(values: Sequence[float]):
    values = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if len(values) == 0:
        return None, None
    stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), stderr


def _check_capacity(config: RunConfig):
    dim = config.dimension // 2 if config.mode == "sectors" else config.dimension
    if dim > config.max_dimension and not config.force:
        raise ResourceCapError(f"matrix dimension {dim} exceeds the cap of {config.max_dimension}; pass force",
                               required_bytes=matrix_bytes(dim))


def _aggregate(config: RunConfig, records: list) -> dict:
    """Deterministic reduction over records sorted by seed."""
    out: dict = {}
    rows = []
    ratio_parts, spacings, unfolded = [], [], []
    for record in records:
        row = {
            "seed": record.meta["seed"], "K": record.meta["K"],
            "second_moment": record.second_moment,
            "classification": record.classification.value if record.classification else None,
        }
        try:
            ratios = record_gap_ratios(record)
            row.update({f"mean_r_{name}": stats.mean for name, stats in ratios.items()})
            ratio_parts.append(ratios["pooled"])
        except ValidationError as e:
            logger.warning("seed %s: no gap ratios (%s)", record.meta["seed"], e)
        for levels in record.sector_distinct():
            try:
                u = unfold(levels, config.fit_order, config.trim)
            except ValidationError as e:
                logger.debug("seed %s: block not unfolded (%s)", record.meta["seed"], e)
                continue
            unfolded.append(u)
            spacings.append(u.spacings)
        rows.append(row)
    frame = pd.DataFrame(rows)
    out["realizations"] = frame

    n = len(records)
    summary = {"n_completed": n}
    if n and config.mode == "sectors":
        least = (frame["classification"] == DegeneracyClass.LEAST.value).to_numpy()
        fraction = float(least.mean())
        summary["least_fraction"] = fraction
        summary["least_fraction_stderr"] = float(np.sqrt(fraction * (1 - fraction) / n))
    else:
        least = np.ones(n, dtype=bool)

    headline = "mean_r_pooled" if config.pool_sectors else ("mean_r_even" if config.mode == "sectors" else "mean_r_full")
    for column in sorted(c for c in frame.columns if c.startswith("mean_r_")):
        mean, stderr = _mean_stderr(frame[column])
        summary[column], summary[column + "_stderr"] = mean, stderr
        if config.mode == "sectors":
            mean, stderr = _mean_stderr(frame.loc[least, column])
            summary[column + "_least"], summary[column + "_least_stderr"] = mean, stderr
    summary["mean_r"] = summary.get(headline)
    summary["stderr"] = summary.get(headline + "_stderr")
    if n:
        summary["second_moment_max_dev"] = float(np.max(np.abs(frame["second_moment"] - 1)))
    out["summary"] = summary

    if ratio_parts:
        out["ratio_histogram"] = gap_ratio_histogram(pool_gap_ratios(ratio_parts), config.ratio_bin_width)
    if spacings:
        pooled = np.concatenate(spacings)
        out["spacing_histogram"] = density_histogram(pooled, spacing_edges(pooled.max(), config.spacing_bin_width))
        span = min(u.span for u in unfolded)
        lengths = [w for w in config.window_lengths if w <= span]
        if len(lengths) < len(config.window_lengths):
            logger.warning("dropping window lengths beyond the unfolded span %.2f", span)
        if lengths:
            out["number_variance"] = ensemble_number_variance(unfolded, lengths, config.nv_mode)

    curves = {}
    if records:
        spectra = [r.eigenvalues for r in records]
        times = config.time_grid()
        for beta in config.betas:
            curves[curve_name("g", beta)] = ensemble_sff(spectra, times, 0.0, beta, config.sff_mode)
            for alpha in config.alphas:
                curves[curve_name("h", beta, alpha)] = ensemble_sff(
                    spectra, times, alpha, beta, config.sff_mode, config.h_denominator)
    out["sff"] = curves
    return out


def _map(tasks: List[dict], workers: int, on_progress: Optional[Callable[[int, int], None]]):
    results = []
    if workers <= 1 or len(tasks) <= 1:
        iterator = map(_realize, tasks)
        pool = None
    else:
        pool = Pool(processes=workers)
        iterator = pool.imap(_realize, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
    try:
        for done, result in enumerate(iterator, start=1):
            results.append(result)
            if on_progress is not None:
                on_progress(done, len(tasks))
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return results


def analyze(config: RunConfig, records: list, failures: Sequence[dict] = (),
            n_requested: Optional[int] = None, n_reused: int = 0) -> EnsembleResult:
    """Aggregate already computed records; records are reduced in seed order."""
    records = sorted(records, key=lambda r: (r.meta.get("seed") is None, r.meta.get("seed") or 0))
    aggregates = _aggregate(config, records)
    summary = {
        "N": config.N,
        "K": config.effective_k,
        "p": config.effective_p,
        "scheme": config.scheme,
        "sampling": config.sampling,
        "n_requested": n_requested if n_requested is not None else len(records),
        "n_failed": len(failures),
        **aggregates["summary"],
    }
    try:
        reference = rmt_reference(config.N)
        summary["rmt_ensemble"] = reference.ensemble.value
        summary["rmt_mean_r"] = reference.mean_r
    except (OSError, KeyError) as e:
        logger.warning("no RMT reference available: %s", e)
        summary["rmt_ensemble"] = ensemble_for_n(config.N).value
        summary["rmt_mean_r"] = None

    return EnsembleResult(
        config=config,
        config_hash=config.config_hash(),
        seeds=[r.meta["seed"] for r in records],
        failures=list(failures),
        summary=summary,
        sff=aggregates["sff"],
        number_variance=aggregates.get("number_variance"),
        spacing_histogram=aggregates.get("spacing_histogram"),
        ratio_histogram=aggregates.get("ratio_histogram"),
        realizations=aggregates["realizations"],
        n_reused=n_reused,
        records=records,
    )


def run(config: RunConfig, on_progress: Optional[Callable[[int, int], None]] = None) -> EnsembleResult:
    """Sample, diagonalize (or reuse) and aggregate every realization of one config."""
    _check_capacity(config)
    spectra_dir = None
    if config.persist and config.out_dir is not None:
        spectra_dir = Path(config.out_dir) / "spectra"
        spectra_dir.mkdir(parents=True, exist_ok=True)

    n = config.realizations
    workers = config.workers or os.cpu_count() or 1
    payload = config.to_dict()
    tasks = []
    for index in range(n):
        seed = derive_seed(config.base_seed, index)
        tasks.append({
            "config": payload, "index": index, "seed": seed,
            "meta_hash": config.realization_hash(seed),
            "spectra_dir": str(spectra_dir) if spectra_dir is not None else None,
        })
    logger.info("N=%d %s: %d realizations on %d workers", config.N, config.scheme, n, workers)

    results = _map(tasks, workers, on_progress)
    mismatched = [r for r in results if r["mismatch"]]
    if mismatched:
        raise ConfigMismatchError(f"{len(mismatched)} persisted spectra disagree with this config: "
                                  f"{mismatched[0]['error']}")

    done = sorted((r for r in results if r["record"] is not None), key=lambda r: r["seed"])
    failures = [{"index": r["index"], "seed": r["seed"], "error": r["error"]} for r in results if r["error"]]
    for failure in failures:
        logger.warning("realization %d (seed %d) skipped: %s", failure["index"], failure["seed"], failure["error"])

    return analyze(config, [r["record"] for r in done], failures, n_requested=n,
                   n_reused=sum(1 for r in done if r["reused"]))


def sweep(grid: Sequence[RunConfig], on_progress: Optional[Callable[[RunConfig, int, int], None]] = None) -> List[EnsembleResult]:
    """Run every config in turn; a failing config yields a result carrying its error."""
    hashes = [c.config_hash() for c in grid]
    if len(set(hashes)) != len(hashes):
        raise ValidationError("sweep grid holds duplicate configs")
    results = []
    for config in grid:
        callback = None if on_progress is None else (lambda done, total, c=config: on_progress(c, done, total))
        try:
            results.append(run(config, callback))
        except SykError as e:
            logger.error("config N=%d K=%s %s failed: %s", config.N, config.K, config.scheme, e)
            results.append(EnsembleResult(
                config=config, config_hash=config.config_hash(), seeds=[], failures=[],
                summary={"N": config.N, "K": config.effective_k, "p": config.effective_p, "scheme": config.scheme},
                error=f"{type(e).__name__}: {e}",
            ))
    return results


def combine_summaries(results: Sequence[EnsembleResult]) -> pd.DataFrame:
    """One row per config (e.g. <r> vs K for several N)."""
    rows = [dict(r.summary, error=r.error, config_hash=r.config_hash) for r in results]
    return pd.DataFrame(rows)


def ramp_table(results: Sequence[EnsembleResult], n_boot: int = 10, seed: int = 0) -> pd.DataFrame:
    """Dip time of every ensemble curve, plus the median over bootstrap resamples."""
    rows = []
    for result in results:
        if not result.ok or not result.records:
            continue
        spectra = [r.eigenvalues for r in result.records]
        for name, curve in result.sff.items():
            row = {"N": result.summary["N"], "K": result.summary["K"], "scheme": result.summary["scheme"],
                   "curve": name, "ramp_onset": None, "bootstrap_median": None}
            try:
                row["ramp_onset"] = ramp_onset(curve)
                boots = bootstrap_curves(spectra, n_boot, seed, curve.times, curve.alpha or 0.0, curve.beta,
                                         curve.denominator)
                row["bootstrap_median"] = float(np.median([ramp_onset(c) for c in boots]))
            except ValidationError as e:
                logger.warning("%s for N=%s K=%s: %s", name, row["N"], row["K"], e)
            rows.append(row)
    return pd.DataFrame(rows, columns=["N", "K", "scheme", "curve", "ramp_onset", "bootstrap_median"])
