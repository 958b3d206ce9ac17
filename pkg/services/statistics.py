# services/statistics.py
# Spektralstatistik: Gap-Ratio, Unfolding, P(s)/P(r), Zahlvarianz, Formfaktoren g und h, Ramp-Onset.

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from services.errors import UnfoldingError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_FIT_ORDER = 10
DEFAULT_TRIM = 0.05
WINDOW_STRIDE = 0.5
SFF_MODES = ("mean_ratio", "ratio_of_averages")
H_DENOMINATORS = ("filtered", "unfiltered")
NV_MODES = ("per_realization", "pooled")
RAMP_SMOOTHING = 5

# max. Anzahl komplexer Phasen pro Block beim Aufsummieren von Z(t)
_PHASE_BLOCK = 1 << 22


def default_time_grid(n_points: int = 400, t_min: float = 1e-1, t_max: float = 1e6) -> np.ndarray:
    if n_points < 2 or not 0 < t_min < t_max:
        raise ValidationError(f"invalid time grid: {n_points} points on [{t_min}, {t_max}]")
    return np.logspace(np.log10(t_min), np.log10(t_max), n_points)


# --- Gap-Ratio ---

@dataclass(frozen=True, eq=False)
class GapRatioStats:
    ratios: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ratios)

    @property
    def mean(self) -> float:
        return float(np.mean(self.ratios))

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.std(self.ratios, ddof=1) / np.sqrt(self.n))


def gap_ratios(distinct_eigs: Sequence[float]) -> GapRatioStats:
    """r_i = min(s_i, s_{i+1}) / max(s_i, s_{i+1}) over a sorted list of distinct levels."""
    eigs = np.asarray(distinct_eigs, dtype=float)
    if len(eigs) < 3:
        raise ValidationError(f"gap ratios need at least 3 distinct levels, got {len(eigs)}")
    spacings = np.diff(eigs)
    if np.any(spacings <= 0):
        raise ValidationError("levels must be sorted and distinct (remove degenerate copies first)")
    left, right = spacings[:-1], spacings[1:]
    return GapRatioStats(np.minimum(left, right) / np.maximum(left, right))


def pool_gap_ratios(parts: Sequence[GapRatioStats]) -> GapRatioStats:
    if not parts:
        raise ValidationError("nothing to pool")
    return GapRatioStats(np.concatenate([p.ratios for p in parts]))


def record_gap_ratios(record) -> Dict[str, GapRatioStats]:
    """Gap ratios per parity sector on distinct levels, plus the pool of both sectors.

    A full-mode record has a single block named "full"; sectors are never merged into
    one level sequence, since levels of different sectors cross freely.
    """
    names = ("even", "odd") if record.sector_multiplicities is not None else ("full",)
    per_block = {name: gap_ratios(levels) for name, levels in zip(names, record.sector_distinct())}
    per_block["pooled"] = pool_gap_ratios(list(per_block.values()))
    return per_block


# --- Unfolding ---

@dataclass(frozen=True, eq=False)
class UnfoldedSpectrum:
    values: np.ndarray
    mean_spacing: float
    fit_order: int = DEFAULT_FIT_ORDER
    trim_fraction: float = DEFAULT_TRIM

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def span(self) -> float:
        return float(self.values[-1] - self.values[0])


def unfold(eigs: Sequence[float], fit_order: int = DEFAULT_FIT_ORDER, trim: float = DEFAULT_TRIM) -> UnfoldedSpectrum:
    """Polynomial fit of the staircase (level index vs. energy) on the trimmed window."""
    eigs = np.asarray(eigs, dtype=float)
    if not 0 <= trim < 0.5:
        raise ValidationError(f"trim fraction must lie in [0, 0.5), got {trim}")
    if fit_order < 1:
        raise ValidationError(f"fit order must be positive, got {fit_order}")
    needed = int(np.ceil((fit_order + 2) / (1 - 2 * trim)))
    if len(eigs) < needed:
        raise ValidationError(f"unfolding at order {fit_order} with trim {trim} needs {needed} levels, got {len(eigs)}")
    if np.any(np.diff(eigs) <= 0):
        raise ValidationError("unfolding expects strictly increasing levels")

    cut = int(np.floor(trim * len(eigs)))
    kept = eigs[cut:len(eigs) - cut]
    staircase = np.arange(cut, len(eigs) - cut, dtype=float)
    poly = np.polynomial.Polynomial.fit(kept, staircase, fit_order)

    samples = np.linspace(kept[0], kept[-1], 8 * len(kept))
    slope = poly.deriv()(np.concatenate([samples, kept]))
    if np.any(slope <= 0):
        raise UnfoldingError(f"order-{fit_order} staircase fit is not increasing inside the retained window")

    values = poly(kept)
    if np.any(np.diff(values) <= 0):
        raise UnfoldingError("unfolded levels are not strictly increasing")
    mean_spacing = float(np.mean(np.diff(values)))
    if abs(mean_spacing - 1) > 0.05:
        logger.warning("unfolded mean spacing %.4f deviates from 1", mean_spacing)
    return UnfoldedSpectrum(values, mean_spacing, fit_order, trim)


# --- Histogramme ---

def density_histogram(samples: np.ndarray, edges: np.ndarray) -> pd.DataFrame:
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise ValidationError("cannot histogram an empty sample")
    density, edges = np.histogram(samples, bins=edges, density=True)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "density": density})


def spacing_edges(max_spacing: float, bin_width: float) -> np.ndarray:
    if bin_width <= 0:
        raise ValidationError(f"bin width must be positive, got {bin_width}")
    n_bins = int(np.floor(max_spacing / bin_width)) + 1
    return bin_width * np.arange(n_bins + 1)


def spacing_histogram(u: UnfoldedSpectrum, bin_width: float = 0.1) -> pd.DataFrame:
    """Density-normalized P(s) of the unfolded nearest-neighbor spacings."""
    spacings = u.spacings
    if len(spacings) == 0:
        raise ValidationError("unfolded spectrum holds no spacings")
    return density_histogram(spacings, spacing_edges(spacings.max(), bin_width))


def gap_ratio_histogram(stats: GapRatioStats, bin_width: float = 0.05) -> pd.DataFrame:
    """Density of r on [0, 1]; r = 1 falls in the last bin."""
    n_bins = int(round(1 / bin_width))
    if n_bins < 1 or not np.isclose(n_bins * bin_width, 1.0):
        raise ValidationError(f"bin width must divide 1, got {bin_width}")
    return density_histogram(stats.ratios, np.linspace(0.0, 1.0, n_bins + 1))


# --- Zahlvarianz ---

def _window_counts(u: UnfoldedSpectrum, length: float, stride: float) -> np.ndarray:
    if length <= 0:
        raise ValidationError(f"window length must be positive, got {length}")
    if length > u.span:
        raise ValidationError(f"window length {length} exceeds the unfolded span {u.span:.3f}")
    starts = np.arange(u.values[0], u.values[-1] - length + 1e-12, stride)
    # Fenster [E, E+L)
    return np.searchsorted(u.values, starts + length, "left") - np.searchsorted(u.values, starts, "left")


def number_variance(u: UnfoldedSpectrum, window_lengths: Sequence[float],
                    stride: float = WINDOW_STRIDE) -> pd.DataFrame:
    """Sigma^2(L) = <n^2> - <n>^2 over overlapping windows slid with the given stride."""
    rows = []
    for length in window_lengths:
        counts = _window_counts(u, float(length), stride)
        rows.append({"window": float(length), "sigma2": float(np.var(counts)), "n_windows": len(counts)})
    return pd.DataFrame(rows, columns=["window", "sigma2", "n_windows"])


def ensemble_number_variance(spectra: Sequence[UnfoldedSpectrum], window_lengths: Sequence[float],
                             mode: str = "per_realization", stride: float = WINDOW_STRIDE) -> pd.DataFrame:
    """per_realization: mean of the per-spectrum variances; pooled: one variance over all windows."""
    if mode not in NV_MODES:
        raise ValidationError(f"unknown number-variance mode '{mode}' (expected one of {NV_MODES})")
    if not spectra:
        raise ValidationError("no spectra to average")
    rows = []
    for length in window_lengths:
        per_spectrum = [_window_counts(u, float(length), stride) for u in spectra]
        variances = np.array([np.var(c) for c in per_spectrum])
        if mode == "pooled":
            sigma2 = float(np.var(np.concatenate(per_spectrum)))
        else:
            sigma2 = float(variances.mean())
        stderr = float(variances.std(ddof=1) / np.sqrt(len(variances))) if len(variances) > 1 else 0.0
        rows.append({"window": float(length), "sigma2": sigma2, "stderr": stderr,
                     "n_realizations": len(spectra), "mode": mode})
    return pd.DataFrame(rows, columns=["window", "sigma2", "stderr", "n_realizations", "mode"])


# --- Spektraler Formfaktor ---

@dataclass(frozen=True, eq=False)
class SffCurve:
    times: np.ndarray
    values: np.ndarray
    beta: float
    alpha: Optional[float] = None
    n_realizations: int = 1
    stderr: Optional[np.ndarray] = None
    mode: str = "single"
    denominator: str = "filtered"

    def to_frame(self) -> pd.DataFrame:
        stderr = self.stderr if self.stderr is not None else np.zeros_like(self.values)
        return pd.DataFrame({
            "t": self.times,
            "value": self.values,
            "stderr": stderr,
            "n_realizations": self.n_realizations,
        })

    def params(self) -> dict:
        return {
            "beta": self.beta,
            "alpha": self.alpha,
            "n_realizations": self.n_realizations,
            "mode": self.mode,
            "denominator": self.denominator,
            "grid": {"n_points": len(self.times), "t_min": float(self.times[0]), "t_max": float(self.times[-1])},
        }


def _check_sff_args(alpha: float, beta: float, denominator: str):
    if beta < 0:
        raise ValidationError(f"beta must be non-negative, got {beta}")
    if alpha < 0:
        raise ValidationError(f"alpha must be non-negative, got {alpha}")
    if denominator not in H_DENOMINATORS:
        raise ValidationError(f"unknown denominator '{denominator}' (expected one of {H_DENOMINATORS})")


def _log_partition(eigs, alpha: float, beta: float, times: np.ndarray, degeneracies,
                   denominator: str):
    """log|Y(alpha,t,beta)|^2 on the grid and log of the t=0 normalizer.

    Weights are shifted by their maximum before exponentiation; the shift is added
    back in log space.
    """
    energies = np.asarray(eigs, dtype=float)
    if len(energies) == 0:
        raise ValidationError("empty spectrum")
    log_mult = np.zeros_like(energies) if degeneracies is None else np.log(np.asarray(degeneracies, dtype=float))
    log_w = log_mult - alpha * energies ** 2 - beta * energies
    shift = log_w.max()
    weights = np.exp(log_w - shift)

    block = max(1, _PHASE_BLOCK // len(energies))
    y = np.empty(len(times), dtype=complex)
    for start in range(0, len(times), block):
        chunk = times[start:start + block]
        y[start:start + block] = np.exp(-1j * np.outer(chunk, energies)) @ weights
    with np.errstate(divide="ignore"):
        log_num = np.log(y.real ** 2 + y.imag ** 2) + 2 * shift

    if denominator == "filtered":
        log_norm = np.log(weights.sum()) + shift
    else:
        log_norm = logsumexp(log_mult - beta * energies)
    return log_num, log_norm


def _curve_values(eigs, alpha, beta, times, degeneracies, denominator) -> np.ndarray:
    log_num, log_norm = _log_partition(eigs, alpha, beta, times, degeneracies, denominator)
    return np.exp(log_num - 2 * log_norm)


def sff_h(eigs, alpha: float, times: Optional[np.ndarray] = None, beta: float = 0.0,
          denominator: str = "filtered", degeneracies=None) -> SffCurve:
    """h(alpha,t,beta) = |Y(alpha,t,beta)|^2 / Y(alpha,0,beta)^2 (or / Z(0,beta)^2 when unfiltered).

    `eigs` is the full spectrum with degenerate copies; alternatively pass distinct
    levels together with their `degeneracies`.
    """
    _check_sff_args(alpha, beta, denominator)
    times = default_time_grid() if times is None else np.asarray(times, dtype=float)
    values = _curve_values(eigs, alpha, beta, times, degeneracies, denominator)
    return SffCurve(times, values, beta, alpha, denominator=denominator)


def sff_g(eigs, times: Optional[np.ndarray] = None, beta: float = 0.0, degeneracies=None) -> SffCurve:
    """g(t,beta) = |Z(beta+it)|^2 / Z(beta)^2."""
    curve = sff_h(eigs, 0.0, times, beta, degeneracies=degeneracies)
    return SffCurve(curve.times, curve.values, beta, None)


def per_realization_sff(spectra: Sequence[np.ndarray], times: np.ndarray, alpha: float = 0.0,
                        beta: float = 0.0, denominator: str = "filtered") -> np.ndarray:
    """Matrix of curve values, one row per spectrum."""
    _check_sff_args(alpha, beta, denominator)
    return np.vstack([_curve_values(e, alpha, beta, times, None, denominator) for e in spectra])


def ensemble_sff(spectra: Sequence[np.ndarray], times: Optional[np.ndarray] = None, alpha: float = 0.0,
                 beta: float = 0.0, mode: str = "mean_ratio", denominator: str = "filtered") -> SffCurve:
    """Ensemble curve: mean of per-spectrum ratios, or <|Y|^2> / <Y(0)>^2 with a jackknife error."""
    _check_sff_args(alpha, beta, denominator)
    if mode not in SFF_MODES:
        raise ValidationError(f"unknown SFF mode '{mode}' (expected one of {SFF_MODES})")
    if not spectra:
        raise ValidationError("no spectra to average")
    times = default_time_grid() if times is None else np.asarray(times, dtype=float)
    n = len(spectra)

    if mode == "mean_ratio":
        rows = per_realization_sff(spectra, times, alpha, beta, denominator)
        values = rows.mean(axis=0)
        stderr = rows.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(values)
    else:
        parts = [_log_partition(e, alpha, beta, times, None, denominator) for e in spectra]
        log_num = np.vstack([p[0] for p in parts])
        log_norm = np.array([p[1] for p in parts])
        num_scale = np.max(log_num[np.isfinite(log_num)]) if np.isfinite(log_num).any() else 0.0
        norm_scale = log_norm.max()
        num = np.exp(log_num - num_scale)
        norm = np.exp(log_norm - norm_scale)
        factor = np.exp(num_scale - 2 * norm_scale)
        values = num.mean(axis=0) / norm.mean() ** 2 * factor
        if n > 1:
            # leave-one-out
            loo_num = (num.sum(axis=0) - num) / (n - 1)
            loo_norm = (norm.sum() - norm) / (n - 1)
            loo = loo_num / loo_norm[:, None] ** 2 * factor
            stderr = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
        else:
            stderr = np.zeros_like(values)

    return SffCurve(times, values, beta, alpha if alpha else None, n, stderr, mode, denominator)


def bootstrap_curves(spectra: Sequence[np.ndarray], n_boot: int = 10, seed: int = 0,
                     times: Optional[np.ndarray] = None, alpha: float = 0.0, beta: float = 0.0,
                     denominator: str = "filtered") -> List[SffCurve]:
    """Mean-ratio curves over resamples (with replacement) of the realizations."""
    if n_boot < 1:
        raise ValidationError(f"n_boot must be positive, got {n_boot}")
    if not spectra:
        raise ValidationError("no spectra to resample")
    times = default_time_grid() if times is None else np.asarray(times, dtype=float)
    rows = per_realization_sff(spectra, times, alpha, beta, denominator)
    rng = np.random.default_rng(seed)
    curves = []
    for _ in range(n_boot):
        pick = rng.integers(0, len(rows), size=len(rows))
        curves.append(SffCurve(times, rows[pick].mean(axis=0), beta, alpha if alpha else None,
                               len(rows), mode="bootstrap", denominator=denominator))
    return curves


def ramp_onset(curve: SffCurve, window: int = RAMP_SMOOTHING, refine: bool = False) -> float:
    """Dip time: global minimum of the centred moving average of the curve.

    With refine=True the raw curve minimum within half a window of that point is
    reported instead.
    """
    values = np.asarray(curve.values, dtype=float)
    if len(values) < 3:
        raise ValidationError("curve too short to locate a dip")
    smoothed = pd.Series(values).rolling(window, center=True, min_periods=1).mean().to_numpy()
    dip = int(np.argmin(smoothed))
    if refine:
        half = window // 2
        lo, hi = max(0, dip - half), min(len(values), dip + half + 1)
        dip = lo + int(np.argmin(values[lo:hi]))
    if dip in (0, len(values) - 1):
        raise ValidationError("curve is monotone on the grid, no dip to report")
    return float(curve.times[dip])


def plateau_level(multiplicities) -> float:
    """Long-time limit of g at beta=0: sum(d_i^2) / D^2."""
    d = np.array([m for _, m in multiplicities], dtype=float)
    if len(d) == 0:
        raise ValidationError("empty spectrum")
    return float(np.sum(d ** 2) / np.sum(d) ** 2)


def time_average(curve: SffCurve, t_min: float, t_max: float) -> float:
    inside = (curve.times >= t_min) & (curve.times <= t_max)
    if not inside.any():
        raise ValidationError(f"no grid points in [{t_min}, {t_max}]")
    return float(np.mean(curve.values[inside]))
