"""Command line entry point.

Usage::

    cavity-sed <subcommand> --config FILE [--seed N] [--workers N] [--out DIR]

Every run writes its tables into a staging directory next to ``--out`` and
moves it into place only on success, so an aborted run leaves no partial
output.  ``manifest.json`` records the effective configuration, its hash, the
seed, package versions, wall time and the SHA-256 of every output file.  A
manifest can be passed back as ``--config`` to repeat the run.

Exit codes: 0 on success, 2 for malformed or invalid configurations, 3 for
solver failures (a ``diagnostics.json`` is written to the output directory).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import platform
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .errors import SolverError
from .exact import SpatialGrid, exact_point, exact_sweep
from .modes import distribution_peak, dressed_scan, ensemble_mode_histogram
from .observables import (
    SweepSpec,
    SweepVariable,
    comb_experiment,
    polarization_profile,
    sweep_spectrum,
    transverse_targeting,
)
from .sampling import draw, write_realizations_csv
from .tables import write_csv

__all__ = ["main", "run", "emit_plot_script", "PLOT_KINDS", "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# plot scripts
# ---------------------------------------------------------------------------

_PLOT_TEMPLATES = {
    "spectrum": """\
set datafile separator ','
set key autotitle columnhead
set logscale y
set xlabel 'sweep value [kappa]'
set ylabel 'intracavity intensity'
plot '{csv}' using 'sweep_value':'total' with lines title 'total', \\
     '' using 'sweep_value':'coherent' with lines title 'coherent', \\
     '' using 'sweep_value':'incoherent' with lines title 'incoherent'
""",
    "histogram": """\
set datafile separator ','
set key autotitle columnhead
set logscale x
set xlabel 'Gamma / Gamma_u'
set ylabel 'delta / Gamma_u'
set cblabel 'count'
set view map
plot '{csv}' using 'gamma_over_unit':'delta_over_unit':'count' with points pointtype 5 pointsize 0.5 palette notitle
""",
    "theta": """\
set datafile separator ','
set key autotitle columnhead
set xlabel 'sweep value [kappa]'
set ylabel 'Theta'
set yrange [0:1]
plot for [i=2:*] '{csv}' using 1:i with lines
""",
    "dressed-scan": """\
set datafile separator ','
set key autotitle columnhead
set xlabel 'Delta_c [kappa]'
set ylabel 'Im(lambda) [kappa]'
plot '{csv}' using 'delta_c':'im' with points pointtype 7 pointsize 0.3 notitle
""",
    "compare": """\
set datafile separator ','
set key autotitle columnhead
set logscale y
set xlabel 'sweep value [kappa]'
set ylabel 'intracavity intensity'
plot '{csv}' using 'sweep_value':'exact_total' with lines title 'exact', \\
     '' using 'sweep_value':'stochastic_total' with points title 'stochastic'
""",
}

PLOT_KINDS = tuple(_PLOT_TEMPLATES)


def emit_plot_script(table: str | Path, kind: str) -> str:
    """Gnuplot script that plots the CSV ``table``.

    Parameters
    ----------
    table : path
        CSV written by one of the subcommands.  It must exist.
    kind : {'spectrum', 'histogram', 'theta', 'dressed-scan', 'compare'}

    Raises
    ------
    FileNotFoundError
        If ``table`` does not exist.
    ValueError
        For an unknown ``kind``.
    """
    if kind not in _PLOT_TEMPLATES:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {', '.join(PLOT_KINDS)}")
    table = Path(table)
    if not table.is_file():
        raise FileNotFoundError(f"no table at {table}")
    return _PLOT_TEMPLATES[kind].format(csv=table.name)


def _write_plot(out: Path, csv_name: str, kind: str) -> None:
    script = emit_plot_script(out / csv_name, kind)
    (out / (Path(csv_name).stem + ".gp")).write_text(script, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _require_sweep(cfg: ExperimentConfig) -> SweepSpec:
    if cfg.sweep is None:
        raise ConfigError("sweep: this subcommand needs a sweep section")
    return cfg.sweep


def _cmd_sample(cfg: ExperimentConfig, out: Path) -> dict:
    exp = cfg.experiment
    write_realizations_csv(exp.batch(0, exp.n_realizations), out / "realizations.csv")
    return {}


def _cmd_eigenmodes(cfg: ExperimentConfig, out: Path) -> dict:
    bins = cfg.options.get("histogram_bins", 60)
    hist = ensemble_mode_histogram(cfg.experiment, bins=bins)
    write_csv(
        out / "histogram.csv",
        ["mode_class", "mode_rank", "gamma_over_unit", "delta_over_unit", "count"],
        hist.rows,
    )
    _write_plot(out, "histogram.csv", "histogram")
    modes = hist.modes
    g_sr, _ = modes.superradiant_modes()
    g_sub, d_sub, _ = modes.subradiant_modes()
    summary = {"separable": hist.separable, "n_realizations": modes.n_realizations}
    if g_sr.size:
        summary["superradiant_gamma_median"] = float(np.median(g_sr / modes.unit))
    if g_sub.shape[1] and hist.separable:
        summary["subradiant_gamma_peak"] = [
            distribution_peak(g_sub[:, r] / modes.unit) for r in range(g_sub.shape[1])
        ]
        summary["subradiant_delta_median"] = [float(v) for v in np.median(d_sub / modes.unit, axis=0)]
    return summary


def _cmd_dressed_scan(cfg: ExperimentConfig, out: Path) -> dict:
    spec = _require_sweep(cfg)
    if spec.variable is not SweepVariable.CAVITY_DETUNING:
        raise ConfigError("sweep.variable: dressed-scan sweeps cavity_detuning")
    exp = cfg.experiment
    index = cfg.options.get("realization_index", 0)
    real = draw(exp.lattice, exp.sampler, exp.seed, index, exp.stream)
    lam = dressed_scan(real, exp.params, spec.values)
    rows = [
        (float(dc), b, float(lam[i, b].real), float(lam[i, b].imag))
        for i, dc in enumerate(spec.values)
        for b in range(lam.shape[1])
    ]
    write_csv(out / "dressed_scan.csv", ["delta_c", "branch", "re", "im"], rows)
    _write_plot(out, "dressed_scan.csv", "dressed-scan")
    return {"realization_index": index}


def _cmd_spectrum(cfg: ExperimentConfig, out: Path) -> dict:
    spec = _require_sweep(cfg)
    table = sweep_spectrum(spec, cfg.experiment)
    table.to_csv(out / "spectrum.csv")
    _write_plot(out, "spectrum.csv", "spectrum")
    if "profile_at" in cfg.options:
        kw = {"bin_width": cfg.options["bin_width"]} if "bin_width" in cfg.options else {}
        prof = polarization_profile(cfg.experiment, cfg.options["profile_at"], spec, **kw)
        prof.to_csv(out / "polarization_profile.csv")
    return {"masked_points": int(np.sum(table.masked))}


def _cmd_target(cfg: ExperimentConfig, out: Path) -> dict:
    spec = _require_sweep(cfg)
    res = transverse_targeting(cfg.experiment, spec)
    res.spectrum.to_csv(out / "spectrum.csv")
    res.theta_to_csv(out / "theta.csv")
    _write_plot(out, "spectrum.csv", "spectrum")
    _write_plot(out, "theta.csv", "theta")
    return {}


def _grid(cfg: ExperimentConfig) -> SpatialGrid:
    h = cfg.options.get("grid_spacing", 0.005)
    return SpatialGrid.for_lattice(cfg.lattice, h=h)


def _cmd_two_atom(cfg: ExperimentConfig, out: Path) -> dict:
    spec = _require_sweep(cfg)
    h = cfg.options.get("grid_spacing", 0.005)
    table = exact_sweep(spec, cfg.lattice, cfg.params, h=h)
    table.to_csv(out / "spectrum.csv")
    _write_plot(out, "spectrum.csv", "spectrum")
    summary = {"masked_points": int(np.sum(table.masked))}
    if "profile_at" in cfg.options:
        params = spec.params_at(cfg.params, cfg.options["profile_at"])
        obs, field, one = exact_point(cfg.lattice, params, _grid(cfg))
        field.slices_to_csv(out / "two_body.csv")
        write_csv(
            out / "one_body.csv",
            ["x_over_lambda", "re_P", "im_P", "rho_ee", "rho_1"],
            zip(one.x, one.polarization.real, one.polarization.imag, one.excited, one.density),
        )
        summary.update(
            conservation_error=field.conservation_error(),
            hermiticity_error=field.hermiticity_error(),
            exchange_error=field.exchange_error(),
        )
    return summary


def _cmd_compare(cfg: ExperimentConfig, out: Path) -> dict:
    spec = _require_sweep(cfg)
    h = cfg.options.get("grid_spacing", 0.005)
    ex = exact_sweep(spec, cfg.lattice, cfg.params, h=h)
    st = sweep_spectrum(spec, cfg.experiment)
    ex.to_csv(out / "exact.csv")
    st.to_csv(out / "stochastic.csv")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(st.total - ex.total) / st.se_total
    rows = zip(spec.values, ex.total, st.total, st.se_total, z, ex.coherent, st.coherent, st.se_coherent)
    write_csv(
        out / "compare.csv",
        [
            "sweep_value",
            "exact_total",
            "stochastic_total",
            "se_total",
            "z_total",
            "exact_coherent",
            "stochastic_coherent",
            "se_coherent",
        ],
        rows,
    )
    _write_plot(out, "compare.csv", "compare")
    finite = z[np.isfinite(z)]
    return {"max_z_total": float(finite.max()) if finite.size else None}


def _cmd_comb(cfg: ExperimentConfig, out: Path) -> dict:
    spec = _require_sweep(cfg)
    res = comb_experiment(cfg.experiment, spec, cfg.options.get("peak_threshold", 5.0))
    res.mi.to_csv(out / "comb_mi.csv")
    res.independent.to_csv(out / "comb_independent.csv")
    res.peaks_to_csv(out / "comb_peaks.csv")
    _write_plot(out, "comb_mi.csv", "spectrum")
    _write_plot(out, "comb_independent.csv", "spectrum")
    return {"mi_peaks": len(res.mi_peaks), "independent_peaks": len(res.independent_peaks)}


COMMANDS: dict[str, Callable[[ExperimentConfig, Path], dict]] = {
    "sample": _cmd_sample,
    "eigenmodes": _cmd_eigenmodes,
    "dressed-scan": _cmd_dressed_scan,
    "spectrum": _cmd_spectrum,
    "target-subradiant": _cmd_target,
    "two-atom-exact": _cmd_two_atom,
    "compare": _cmd_compare,
    "comb": _cmd_comb,
}


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _load(config_path: Path, seed: int | None, workers: int | None) -> ExperimentConfig:
    """Load a config or a manifest and apply command line overrides."""
    try:
        doc = json.loads(config_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {config_path}: {exc.strerror}") from None
    except json.JSONDecodeError:
        return load_config(config_path)  # reports line and column
    if isinstance(doc, dict) and "manifest_version" in doc:
        doc = doc.get("config")
        if not isinstance(doc, dict):
            raise ConfigError(f"{config_path}: manifest has no config")
    doc = copy.deepcopy(doc)
    if isinstance(doc, dict) and isinstance(doc.get("ensemble"), dict):
        if seed is not None:
            doc["ensemble"]["seed"] = seed
        if workers is not None:
            doc["ensemble"]["workers"] = workers
    return parse_config(doc)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return str(obj)


def run(
    command: str,
    config_path: str | Path,
    out: str | Path | None = None,
    seed: int | None = None,
    workers: int | None = None,
) -> Path:
    """Execute ``command`` and return the output directory.

    Raises
    ------
    ConfigError
        Malformed config or a subcommand/config mismatch.
    SolverError
        Numerical failure; no outputs other than diagnostics are kept.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    cfg = _load(Path(config_path), seed, workers)
    out = Path(out) if out is not None else cfg.output_dir or Path(f"out-{command}")
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.partial-", dir=out.parent))
    t0 = time.perf_counter()
    try:
        try:
            summary = COMMANDS[command](cfg, stage)
        except SolverError:
            raise
        except ValueError as exc:
            # parameter combinations the schema cannot express
            raise ConfigError(str(exc)) from exc
        outputs = {p.name: _sha256(p) for p in sorted(stage.iterdir()) if p.is_file()}
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "command": command,
            "config_sha256": cfg.sha256,
            "seed": cfg.experiment.seed,
            "workers": cfg.experiment.workers,
            "versions": {
                "artifact": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_time_s": time.perf_counter() - t0,
            "outputs": outputs,
            "summary": summary,
            "config": cfg.raw,
        }
        (stage / "manifest.json").write_text(
            json.dumps(manifest, indent=2, default=_json_default) + "\n", encoding="utf-8"
        )
        if out.exists():
            shutil.rmtree(out)
        stage.rename(out)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return out


def _write_diagnostics(out: Path, exc: SolverError, command: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "diagnostics.json"
    payload = {"command": command, "error": type(exc).__name__, "message": str(exc), "diagnostics": exc.diagnostics}
    path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavity-sed", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON configuration or a previous manifest.json")
    p.add_argument("--seed", type=int, help="override ensemble.seed")
    p.add_argument("--workers", type=int, help="override ensemble.workers")
    p.add_argument("--out", help="output directory (default: output.directory or out-<command>)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = run(args.command, args.config, args.out, args.seed, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        target = Path(args.out) if args.out else Path(f"out-{args.command}")
        path = _write_diagnostics(target, exc, args.command)
        print(f"solver error: {exc} (diagnostics in {path})", file=sys.stderr)
        return EXIT_SOLVER
    print(out)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
