# components/cli.py
# Kommandozeile: sample, spectrum, stats, validate-fixture, rmt-reference.
# Exit-Codes: 0 ok, 1 Aufruf, 2 Daten/Validierung, 3 Ressourcen-Limit.

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.progress import Progress
from rich.table import Table

from components.report import (
    render_spectrum, render_sweep, render_validation, update_manifest, write_frame, write_sweep,
)
from services.ensemble import DEFAULT_BUDGET, RunConfig, analyze, sweep
from services.errors import ResourceCapError, SykError
from services.fixtures import DATA_DIR, FIXTURE_DIR, SHIPPED_FIXTURES, load_fixture, validate_fixture, write_fixture
from services.model import CouplingScheme, assemble, k_from_p, n_total, sample, sample_bernoulli
from services.rmt import DEFAULT_DIM, DEFAULT_MATRICES, DEFAULT_SEED, REFERENCE_FILE, pin_reference
from services.spectrum import (
    MAX_DIMENSION, RECORD_FORMATS, ParitySector, build_matrix, diagonalize, eigenvalues, load_record,
    make_record, record_filename, save_record,
)

logger = logging.getLogger(__name__)

PRESET_FILE = DATA_DIR / "presets.json"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RESOURCE = 0, 1, 2, 3

console = Console()
err_console = Console(stderr=True)


class UsageError(Exception):
    """Flag combinations that argparse cannot express."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- Presets ---

def load_presets(path: Path = PRESET_FILE) -> dict:
    presets = json.loads(Path(path).read_text())
    if presets.get("version") != 1:
        raise UsageError(f"unsupported preset file version {presets.get('version')}")
    return presets["figures"]


def _preset_ks(preset: dict, N: int, scheme: CouplingScheme) -> List[int]:
    if "K" in preset:
        ks = list(preset["K"])
    else:
        ks = [max(1, int(round(m * N))) for m in preset["k_multiples"]]
    if scheme is CouplingScheme.BINARY_SPARSE:
        ks = [max(4, k - k % 2) for k in ks]
    if preset.get("dense") and scheme is CouplingScheme.BINARY_SPARSE:
        total = n_total(N)
        ks.append(total - total % 2)
    return sorted({k for k in ks if k <= n_total(N)})


def configs_from_preset(preset: dict, n: Optional[int] = None, max_n: Optional[int] = None,
                        realizations: Optional[int] = None, **overrides) -> List[RunConfig]:
    Ns = [n] if n is not None else [N for N in preset["N"] if max_n is None or N <= max_n]
    if not Ns:
        raise UsageError(f"--max-n {max_n} leaves no N of the preset {preset['N']}")
    sizing = {"n_realizations": realizations} if realizations else (
        {"eigenvalue_budget": preset["eigenvalue_budget"]} if "eigenvalue_budget" in preset
        else {"n_realizations": preset.get("n_realizations", 100)})
    common = dict(betas=preset.get("betas", [0.0]), alphas=preset.get("alphas", []), **sizing)
    common.update({k: v for k, v in overrides.items() if v is not None})

    configs = []
    for N in Ns:
        for name in preset["schemes"]:
            scheme = CouplingScheme.parse(name)
            for K in _preset_ks(preset, N, scheme):
                configs.append(RunConfig(N=N, scheme=scheme.value, K=K, **common))
            if preset.get("dense") and scheme is CouplingScheme.GAUSSIAN_SPARSE:
                configs.append(RunConfig(N=N, scheme=CouplingScheme.GAUSSIAN_DENSE.value, K=n_total(N), **common))
    return configs


# --- Befehle ---

def _progress_sweep(configs: Sequence[RunConfig]):
    with Progress(console=err_console, transient=True) as progress:
        tasks = {}

        def on_progress(config, done, total):
            key = id(config)
            if key not in tasks:
                tasks[key] = progress.add_task(f"N={config.N} K={config.K} {config.scheme}", total=total)
            progress.update(tasks[key], completed=done)

        return sweep(configs, on_progress)


def cmd_sample(args) -> int:
    if (args.k is None) == (args.p is None):
        raise UsageError("give exactly one of --k and --p")
    if args.sampling == "bernoulli":
        p = args.p if args.p is not None else args.k / n_total(args.n)
        cs = sample_bernoulli(args.n, p, args.seed, args.scheme, args.normalization)
    else:
        if args.k is None:
            args.k = k_from_p(args.n, args.p, args.scheme)
        cs = sample(args.scheme, args.n, args.k, args.seed, args.normalization)
    path = write_fixture(cs, args.out, comments=[f"scheme={cs.scheme.value} seed={args.seed} sampling={args.sampling}"])

    plus, minus = cs.sign_counts
    table = Table(title=str(path))
    for column in ("N", "K", "C", "+", "-"):
        table.add_column(column, justify="right")
    table.add_row(str(cs.N), str(cs.K), f"{cs.C:.10g}", str(plus), str(minus))
    console.print(table)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    if args.fixture:
        if args.n is not None or args.k is not None:
            raise UsageError("--fixture cannot be combined with --n/--k")
        cs = load_fixture(args.fixture)
    else:
        if args.n is None or args.k is None:
            raise UsageError("give --fixture or both --n and --k")
        cs = sample(args.scheme, args.n, args.k, args.seed, args.normalization)

    if args.sector in ("even", "odd"):
        sector = ParitySector(args.sector)
        eigs = eigenvalues(build_matrix(assemble(cs), sector, max_dimension=args.max_dimension, force=args.force))
        meta = {"N": cs.N, "K": cs.K, "scheme": cs.scheme.value, "seed": cs.seed, "sampling": cs.sampling,
                "C": cs.C, "mode": f"sector-{sector.value}"}
        record = make_record(eigs, meta)
    else:
        mode = "sectors" if args.sector == "both" else "full"
        record = diagonalize(cs, mode=mode, max_dimension=args.max_dimension, force=args.force)

    out_dir = Path(args.out_dir)
    path = save_record(record, out_dir, args.format)
    rows = []
    if record.sector_multiplicities is not None:
        for name, mults in zip(("even", "odd"), record.sector_multiplicities):
            rows.extend({"sector": name, "level": E, "multiplicity": d} for E, d in mults)
    else:
        rows.extend({"sector": record.meta["mode"], "level": E, "multiplicity": d} for E, d in record.multiplicities)
    mult_path = write_frame(pd.DataFrame(rows, columns=["sector", "level", "multiplicity"]),
                            out_dir / (Path(record_filename(record.meta, "csv")).stem + "_multiplicities.csv"))
    update_manifest(out_dir, {path: None, mult_path: None}, "spectrum")
    render_spectrum(console, record, args.sector)
    return EXIT_OK


def _overrides(args) -> dict:
    return {
        "betas": args.beta, "alphas": args.alpha, "sff_mode": args.sff_mode,
        "h_denominator": args.h_denominator, "workers": args.workers, "base_seed": args.seed,
        "out_dir": str(args.out_dir),
    }


def _fixture_cells(preset: dict, overrides: dict):
    """Single-realization cells from the shipped fixtures (large matrices, needs --force)."""
    results = []
    for name in preset["fixtures"]:
        cs = load_fixture(FIXTURE_DIR / name)
        record = diagonalize(cs, force=True)
        config = RunConfig(N=cs.N, scheme=cs.scheme.value, K=cs.K, n_realizations=1, betas=[], alphas=[],
                           workers=overrides.get("workers"), out_dir=overrides.get("out_dir"))
        results.append(analyze(config, [record]))
    return results


def cmd_stats(args) -> int:
    sources = sum(x is not None and x != [] for x in (args.figure, args.config, args.spectra))
    if sources != 1:
        raise UsageError("give exactly one of --figure, --config and --spectra")
    if args.n is not None and args.max_n is not None:
        raise UsageError("--n and --max-n conflict")
    if (args.n is not None or args.max_n is not None) and args.figure is None:
        raise UsageError("--n/--max-n only apply to --figure presets")

    out_dir = Path(args.out_dir)
    overrides = _overrides(args)
    outputs = ["gap_ratio", "rmt_reference", "degeneracy"]
    command = "stats"

    if args.figure is not None:
        presets = load_presets()
        if args.figure not in presets:
            raise UsageError(f"unknown figure '{args.figure}' (choose from {', '.join(presets)})")
        preset = presets[args.figure]
        outputs = preset["outputs"] + (["gap_ratio"] if "gap_ratio" not in preset["outputs"] else [])
        command = f"stats --figure {args.figure}"
        if preset.get("fixtures") and args.force:
            results = _fixture_cells(preset, overrides)
        else:
            configs = configs_from_preset(preset, args.n, args.max_n, args.realizations, **overrides)
            results = _progress_sweep(configs)
    elif args.config is not None:
        data = json.loads(Path(args.config).read_text())
        items = data if isinstance(data, list) else [data]
        configs = []
        for item in items:
            item = dict(item)
            item.setdefault("out_dir", str(out_dir))
            if args.workers is not None:
                item["workers"] = args.workers
            configs.append(RunConfig.from_dict(item))
        if any(c.alphas for c in configs):
            outputs.append("ramp_onset")
        results = _progress_sweep(configs)
    else:
        records = [load_record(p) for p in args.spectra]
        first = records[0].meta
        if any((r.meta["N"], r.meta["scheme"]) != (first["N"], first["scheme"]) for r in records):
            raise UsageError("--spectra files must share N and scheme")
        config = RunConfig(N=int(first["N"]), scheme=first["scheme"], K=int(first["K"]),
                           n_realizations=len(records), mode="sectors" if records[0].sector_eigenvalues else "full",
                           **{k: v for k, v in overrides.items() if v is not None and k != "base_seed"})
        results = [analyze(config, records)]

    produced = write_sweep(results, out_dir, outputs)
    update_manifest(out_dir, produced, command)
    render_sweep(console, results)
    failed = [r for r in results if not r.ok or not r.summary.get("n_completed")]
    if failed:
        err_console.print(f"[yellow]{len(failed)} of {len(results)} cells failed[/yellow]")
    return EXIT_DATA if results and len(failed) == len(results) else EXIT_OK


def cmd_validate_fixture(args) -> int:
    paths = args.paths or [FIXTURE_DIR / name for name in SHIPPED_FIXTURES]
    for path in paths:
        render_validation(console, validate_fixture(path))
    return EXIT_OK


def cmd_rmt_reference(args) -> int:
    table_data = pin_reference(args.out, args.matrices, args.dim, args.seed)
    table = Table(title=f"reference <r> ({args.matrices} matrices, dim {args.dim})")
    for column in ("ensemble", "<r>", "stderr"):
        table.add_column(column, justify="right")
    for name, entry in sorted(table_data["values"].items()):
        table.add_row(name, f"{entry['mean_r']:.5f}", f"{entry['stderr']:.5f}")
    table.add_row("Poisson", f"{table_data['poisson']['mean_r']:.5f}", "0")
    console.print(table)
    return EXIT_OK


# --- Parser ---

def _add_sampling_flags(parser, required: bool):
    parser.add_argument("--n", type=int, required=required, help="number of Majorana fermions N")
    parser.add_argument("--k", type=int, help="number of nonzero couplings K")
    parser.add_argument("--scheme", default="binary", choices=[s.value for s in CouplingScheme])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--normalization", default="exact", choices=["exact", "expected"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparse-syk", description="Sparse SYK Hamiltonians and their spectral statistics")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = commands.add_parser("sample", help="draw one coupling set and write it as a fixture")
    _add_sampling_flags(p, required=True)
    p.add_argument("--p", type=float, help="sparsity p instead of K")
    p.add_argument("--sampling", default="fixed_k", choices=["fixed_k", "bernoulli"])
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_sample)

    p = commands.add_parser("spectrum", help="diagonalize a fixture or a sampled realization")
    _add_sampling_flags(p, required=False)
    p.add_argument("--fixture", type=Path)
    p.add_argument("--sector", default="both", choices=["even", "odd", "both", "full"])
    p.add_argument("--format", default="bin", choices=list(RECORD_FORMATS))
    p.add_argument("--max-dimension", type=int, default=MAX_DIMENSION)
    p.add_argument("--force", action="store_true", help="ignore the dimension cap")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_spectrum)

    p = commands.add_parser("stats", help="ensemble statistics from a preset, a config or spectrum files")
    p.add_argument("--figure", choices=["1", "2", "3", "4", "5", "s1", "s2", "s3"])
    p.add_argument("--config", type=Path)
    p.add_argument("--spectra", type=Path, nargs="+")
    p.add_argument("--n", type=int)
    p.add_argument("--max-n", type=int)
    p.add_argument("--realizations", type=int, help=f"fixed ensemble size (presets default to a budget of {DEFAULT_BUDGET} eigenvalues)")
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--sff-mode", choices=["mean_ratio", "ratio_of_averages"])
    p.add_argument("--h-denominator", choices=["filtered", "unfiltered"])
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--force", action="store_true", help="run the full-size fixtures of presets that ship them")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_stats)

    p = commands.add_parser("validate-fixture", help="check fixture files (default: the shipped ones)")
    p.add_argument("paths", nargs="*", type=Path)
    p.set_defaults(func=cmd_validate_fixture)

    p = commands.add_parser("rmt-reference", help="sample random matrices and pin reference <r> values")
    p.add_argument("--matrices", type=int, default=DEFAULT_MATRICES)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", type=Path, default=REFERENCE_FILE)
    p.set_defaults(func=cmd_rmt_reference)
    return parser


def setup_logging(level: str):
    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(console=err_console, show_path=False)], force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except UsageError as e:
        err_console.print(f"[red]usage error:[/red] {escape(str(e))}")
        return EXIT_USAGE
    except ResourceCapError as e:
        err_console.print(f"[red]refused:[/red] {escape(str(e))}")
        return EXIT_RESOURCE
    except (SykError, OSError, json.JSONDecodeError) as e:
        err_console.print(f"[red]error:[/red] {escape(str(e))}")
        return EXIT_DATA
