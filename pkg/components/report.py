# components/report.py
# Ergebnisse ausgeben: CSV-Datensätze mit JSON-Sidecars, manifest.json und Rich-Tabellen für die Konsole.

import json
import logging
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from services.ensemble import EnsembleResult, combine_summaries, ramp_table
from services.rmt import RmtEnsemble, ensemble_for_n, rmt_reference
from services.spectrum import SpectrumRecord, sectors_coincide
from services.statistics import SffCurve

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def write_json(payload: dict, path: Union[str, Path]) -> Path:
    return _write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    return _write_text(Path(path), frame.to_csv(index=False, float_format="%.12g"))


def cell_tag(summary: dict) -> str:
    if summary.get("sampling") == "bernoulli" or summary.get("K") is None:
        return f"N{summary['N']}_p{summary['p']:.6g}_{summary['scheme']}"
    return f"N{summary['N']}_K{summary['K']}_{summary['scheme']}"


def write_curve(curve: SffCurve, path: Union[str, Path], context: dict) -> List[Path]:
    """Curve CSV (t, value, stderr, n_realizations) plus a JSON sidecar of its parameters."""
    path = Path(path)
    sidecar = dict(context, **curve.params())
    return [write_frame(curve.to_frame(), path), write_json(sidecar, path.with_suffix(".json"))]


def write_result(result: EnsembleResult, out_dir: Union[str, Path]) -> List[Path]:
    """All tables of one ensemble cell under out_dir/<cell tag>/."""
    cell = Path(out_dir) / cell_tag(result.summary)
    context = {k: result.summary.get(k) for k in ("N", "K", "p", "scheme", "sampling")}
    written: List[Path] = []
    for name, frame in result.frames().items():
        if name in result.sff:
            written.extend(write_curve(result.sff[name], cell / f"{name}.csv", context))
        else:
            written.append(write_frame(frame, cell / f"{name}.csv"))
    written.append(write_json(dict(result.provenance(), config=result.config.to_dict()), cell / "provenance.json"))
    return written


def rmt_reference_frame(Ns: Iterable[int]) -> pd.DataFrame:
    """Reference lines: one row per N (its ensemble) plus the Poisson value."""
    rows = []
    for N in sorted(set(Ns)):
        reference = rmt_reference(N)
        rows.append({"N": N, "ensemble": reference.ensemble.value, "mean_r": reference.mean_r,
                     "stderr": reference.stderr})
    poisson = rmt_reference(ensemble=RmtEnsemble.POISSON)
    rows.append({"N": None, "ensemble": poisson.ensemble.value, "mean_r": poisson.mean_r, "stderr": 0.0})
    return pd.DataFrame(rows, columns=["N", "ensemble", "mean_r", "stderr"])


def write_sweep(results: Sequence[EnsembleResult], out_dir: Union[str, Path],
                outputs: Sequence[str] = ()) -> Dict[Path, Optional[str]]:
    """Per-cell tables and combined figure-ready datasets; returns path -> config hash."""
    out_dir = Path(out_dir)
    produced: Dict[Path, Optional[str]] = {}
    for result in results:
        if result.ok:
            for path in write_result(result, out_dir):
                produced[path] = result.config_hash

    combined = combine_summaries(results)
    produced[write_frame(combined, out_dir / "summary.csv")] = None
    if combined.empty:
        return produced

    if "gap_ratio" in outputs:
        columns = ["N", "K", "scheme", "mean_r", "stderr", "mean_r_pooled_least", "mean_r_pooled_least_stderr"]
        view = combined.reindex(columns=columns)
        produced[write_frame(view, out_dir / "gap_ratio.csv")] = None
    if "rmt_reference" in outputs:
        produced[write_frame(rmt_reference_frame(combined["N"]), out_dir / "rmt_reference.csv")] = None
    if "degeneracy" in outputs:
        view = combined.reindex(columns=["N", "K", "scheme", "least_fraction", "least_fraction_stderr", "n_completed"])
        produced[write_frame(view, out_dir / "degeneracy_fraction.csv")] = None
    if "ramp_onset" in outputs:
        produced[write_frame(ramp_table(results), out_dir / "ramp_onset.csv")] = None
    return produced


def update_manifest(out_dir: Union[str, Path], produced: Dict[Path, Optional[str]], command: str) -> Path:
    """Merge produced files into out_dir/manifest.json (paths relative to out_dir)."""
    out_dir = Path(out_dir)
    path = out_dir / MANIFEST
    manifest = {"version": 1, "files": {}}
    if path.exists():
        manifest = json.loads(path.read_text())
    for file, config_hash in produced.items():
        relative = Path(file).resolve().relative_to(out_dir.resolve()).as_posix()
        manifest["files"][relative] = {"command": command, "config_hash": config_hash}
    return write_json(manifest, path)


# --- Konsole ---

def _fmt(value, digits: int = 4) -> str:
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "–"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def render_sweep(console: Console, results: Sequence[EnsembleResult]):
    table = Table(title="Ensemble cells")
    for column in ("N", "K", "scheme", "done", "failed", "least frac", "<r>", "± stderr", "RMT <r>"):
        table.add_column(column, justify="right")
    for result in results:
        s = result.summary
        if not result.ok:
            table.add_row(str(s["N"]), _fmt(s.get("K")), s["scheme"], "–", "–", "–", "–", "–",
                          f"[red]{escape(result.error)}[/red]")
            continue
        table.add_row(
            str(s["N"]), _fmt(s.get("K")), s["scheme"], str(s["n_completed"]), str(s["n_failed"]),
            _fmt(s.get("least_fraction"), 3), _fmt(s.get("mean_r")), _fmt(s.get("stderr")),
            f"{_fmt(s.get('rmt_mean_r'))} ({s.get('rmt_ensemble')})",
        )
    console.print(table)


def render_spectrum(console: Console, record: SpectrumRecord, sectors: str):
    meta = record.meta
    table = Table(title=f"N={meta['N']} K={meta['K']} {meta['scheme']}")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    table.add_row("eigenvalues", str(record.dimension))
    table.add_row("distinct levels", str(len(record.multiplicities)))
    D = 2 ** (record.N // 2)
    table.add_row(f"sum(eps^2)/{D}" if record.dimension == D else "sum(eps^2)/dim", f"{record.second_moment:.12f}")
    table.add_row("RMT class", ensemble_for_n(record.N).value)
    if record.sector_eigenvalues is not None:
        table.add_row("sector dimensions", " / ".join(str(len(s)) for s in record.sector_eigenvalues))
        table.add_row("classification", record.classification.value)
        if sectors == "both":
            coincide = sectors_coincide(*record.sector_eigenvalues)
            table.add_row("sector spectra equal", "yes" if coincide else "no")
    console.print(table)


def render_validation(console: Console, report: dict):
    console.print(f"[green]{escape(report['message'])}[/green]", highlight=False)
    console.print(f"  {report['path']}", style="dim", highlight=False)
