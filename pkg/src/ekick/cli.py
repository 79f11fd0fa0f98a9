"""Command-line interface: single solves, sweeps, and dataset exports.

Exit codes: 0 on success, 2 for an invalid configuration (the message
names the offending field), 3 when a solver reports non-convergence
(diagnostics go to stderr; partial results are still written with a
``converged`` column).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import asdict

from . import __version__
from .coupling import (
    SYMMETRIES,
    normalize_amplitude,
    normalize_amplitude_nonrecoil,
    symmetry,
)
from .nonrecoil import (
    boson_coherent,
    boson_ladder_system,
    eels_spectrum,
    integrate,
    two_level_system,
)
from .output import (
    dump_config,
    format_csv,
    format_json,
    load_config,
    strip_volatile,
    write_text,
)
from .recoil import solve_boson_ladder, solve_two_level
from .sweep import (
    Axis,
    SweepSpec,
    fig1_dataset,
    fig2_dataset,
    fig3a_dataset,
    fig3b_dataset,
    find_maximum,
    run_sweep,
)

__all__ = ["main"]

_SYMMETRY_CHOICES = tuple(sorted(SYMMETRIES))
_BOSON_MODES = ("nonrecoil-analytic", "nonrecoil-ode", "recoil")
_FIGURES = ("fig1", "fig2", "fig3a", "fig3b")
_EXIT_OK = 0
_EXIT_CONFIG = 2
_EXIT_NOT_CONVERGED = 3

# Hard defaults double as the set of recognized config-file keys.
_SCHEMAS = {
    "pointlike": {
        "p1lin_max": 10.0,
        "points": 500,
        "format": "csv",
        "output": "-",
    },
    "nonrecoil": {
        "symmetry": "p_x",
        "rho": 0.2,
        "p1lin": 1.0,
        "tolerance": 1e-10,
        "trajectory": None,
        "samples": 200,
        "format": "json",
        "output": "-",
    },
    "recoil": {
        "symmetry": "p_x",
        "rho": 0.2,
        "p1lin": 1.0,
        "energy_ratio": 10.0,
        "span_factor": None,
        "half_count": None,
        "backscatter": True,
        "format": "json",
        "output": "-",
    },
    "boson": {
        "mode": "nonrecoil-analytic",
        "symmetry": "p_x",
        "rho": 0.2,
        "p1lin": 1.0,
        "energy_ratio": 10.0,
        "truncation": None,
        "levels": None,
        "tolerance": 1e-10,
        "backscatter": True,
        "format": "json",
        "output": "-",
    },
    "sweep": {
        "figure": None,
        "solver": None,
        "symmetry": None,
        "axes": None,
        "rho": None,
        "energy_ratio": None,
        "target_linear": None,
        "include_backscatter": True,
        "grid_overrides": None,
        "export_trajectory": False,
        "workers": None,
        "format": "csv",
        "output": "-",
    },
    "find-max": {
        "symmetry": None,
        "rho_min": 0.02,
        "rho_max": 3.0,
        "p1lin_min": 0.2,
        "p1lin_max": 8.0,
        "coarse": 40,
        "tolerance": 1e-4,
        "format": "json",
        "output": "-",
    },
    "eels": {
        "symmetry": "p_x",
        "rho": 0.2,
        "p1lin": 1.0,
        "tolerance": 1e-10,
        "merge_tolerance": None,
        "format": "csv",
        "output": "-",
    },
}

_TRAJECTORY_COLUMNS = (
    "z_over_v_omega",
    "re_f0",
    "im_f0",
    "re_f1",
    "im_f1",
    "p1_of_z",
)


class _ConfigError(Exception):
    """Invalid configuration; the message starts with the field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ekick",
        description="Free-electron excitation of few-level quantum targets.",
    )
    parser.add_argument(
        "--version", action="version", version=f"ekick {__version__}"
    )
    commands = parser.add_subparsers(dest="command")

    def common(sub):
        sub.add_argument("--output", help="output path, or - for stdout")
        sub.add_argument("--format", choices=("csv", "json"))
        sub.add_argument("--config", help="JSON file supplying flag defaults")
        sub.add_argument(
            "--dump-config",
            help="write the effective configuration to this path and exit",
        )
        sub.add_argument(
            "--seedless",
            action="store_true",
            help="accepted for script compatibility; every run is "
            "deterministic by construction",
        )

    sub = commands.add_parser(
        "pointlike", help="closed-form excitation curves over a coupling range"
    )
    sub.add_argument("--p1lin-max", type=float)
    sub.add_argument("--points", type=int)
    common(sub)

    sub = commands.add_parser(
        "nonrecoil", help="two-level solve along a straight trajectory"
    )
    sub.add_argument("--symmetry", choices=_SYMMETRY_CHOICES)
    sub.add_argument("--rho", type=float, help="transition frequency times "
                     "impact parameter over speed")
    sub.add_argument("--p1lin", type=float, help="prescribed linear "
                     "excitation probability")
    sub.add_argument("--tolerance", type=float)
    sub.add_argument("--trajectory", help="also write the sampled "
                     "trajectory to this CSV path")
    sub.add_argument("--samples", type=int)
    common(sub)

    sub = commands.add_parser(
        "recoil", help="two-level solve with full electron recoil"
    )
    sub.add_argument("--symmetry", choices=_SYMMETRY_CHOICES)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--p1lin", type=float)
    sub.add_argument("--energy-ratio", type=float, help="incident kinetic "
                     "energy over the transition quantum")
    sub.add_argument("--span-factor", type=float)
    sub.add_argument("--half-count", type=int)
    sub.add_argument("--backscatter", action=argparse.BooleanOptionalAction,
                     help="include the backward on-shell amplitude in the "
                     "coupling normalization")
    common(sub)

    sub = commands.add_parser(
        "boson", help="bosonic-mode excitation (Fock ladder)"
    )
    sub.add_argument("--mode", choices=_BOSON_MODES)
    sub.add_argument("--symmetry", choices=_SYMMETRY_CHOICES)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--p1lin", type=float)
    sub.add_argument("--energy-ratio", type=float)
    sub.add_argument("--truncation", type=int)
    sub.add_argument("--levels", type=int)
    sub.add_argument("--tolerance", type=float)
    sub.add_argument("--backscatter", action=argparse.BooleanOptionalAction)
    common(sub)

    sub = commands.add_parser(
        "sweep", help="parameter sweep from a config file or a bundled "
        "figure dataset"
    )
    sub.add_argument("--figure", choices=_FIGURES)
    sub.add_argument("--symmetry", choices=_SYMMETRY_CHOICES)
    sub.add_argument("--workers", type=int)
    common(sub)

    sub = commands.add_parser(
        "find-max", help="locate the excitation maximum over (rho, p1lin)"
    )
    sub.add_argument("--symmetry", choices=_SYMMETRY_CHOICES)
    sub.add_argument("--rho-min", type=float)
    sub.add_argument("--rho-max", type=float)
    sub.add_argument("--p1lin-min", type=float)
    sub.add_argument("--p1lin-max", type=float)
    sub.add_argument("--coarse", type=int)
    sub.add_argument("--tolerance", type=float)
    common(sub)

    sub = commands.add_parser(
        "eels", help="energy-loss spectrum of the outgoing electron"
    )
    sub.add_argument("--symmetry", choices=_SYMMETRY_CHOICES)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--p1lin", type=float)
    sub.add_argument("--tolerance", type=float)
    sub.add_argument("--merge-tolerance", type=float)
    common(sub)

    return parser


def _effective_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags, with unknown keys refused."""
    schema = _SCHEMAS[command]
    merged = dict(schema)
    if args.config:
        file_values = load_config(args.config)
        file_command = file_values.pop("command", None)
        if file_command is not None and file_command != command:
            raise _ConfigError(
                "command", f"config file is for {file_command!r}, not {command!r}"
            )
        for key, value in file_values.items():
            if key not in schema:
                raise _ConfigError("config", f"unknown key {key!r} for {command}")
            merged[key] = value
    for key in schema:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require_positive(cfg: dict, field: str) -> float:
    try:
        value = float(cfg[field])
    except (TypeError, ValueError):
        raise _ConfigError(field, f"expected a number, got {cfg[field]!r}") from None
    if not value > 0.0:
        raise _ConfigError(field, f"must be positive, got {value}")
    cfg[field] = value
    return value


def _require_count(cfg: dict, field: str, minimum: int) -> int:
    value = cfg[field]
    if not isinstance(value, int) or isinstance(value, bool):
        raise _ConfigError(field, f"expected an integer, got {value!r}")
    if value < minimum:
        raise _ConfigError(field, f"must be at least {minimum}, got {value}")
    return value


def _require_symmetry(cfg: dict) -> str:
    name = cfg["symmetry"]
    if name not in _SYMMETRY_CHOICES:
        raise _ConfigError(
            "symmetry", f"unknown name {name!r}; choose from {_SYMMETRY_CHOICES}"
        )
    return name


def _require_format(cfg: dict) -> str:
    if cfg["format"] not in ("csv", "json"):
        raise _ConfigError("format", f"must be csv or json, got {cfg['format']!r}")
    return cfg["format"]


def _base_metadata(command: str, cfg: dict) -> dict:
    return {
        "command": command,
        "package_version": __version__,
        "inputs": dict(cfg),
    }


def _run_pointlike(cfg: dict):
    _require_positive(cfg, "p1lin_max")
    points = _require_count(cfg, "points", 2)
    result = fig1_dataset(points=points, p1lin_max=cfg["p1lin_max"])
    metadata = _base_metadata("pointlike", cfg)
    metadata.update(strip_volatile(result.metadata))
    columns = (
        "p1lin",
        "p1_with_backscatter",
        "p1_no_backscatter",
        "p1_boson_reference",
    )
    return list(result.records), metadata, True, [], columns


def _run_nonrecoil(cfg: dict):
    name = _require_symmetry(cfg)
    rho = _require_positive(cfg, "rho")
    p1lin = _require_positive(cfg, "p1lin")
    tolerance = _require_positive(cfg, "tolerance")
    samples = _require_count(cfg, "samples", 2) if cfg["trajectory"] else 0
    model = normalize_amplitude_nonrecoil(symmetry(name), rho, 1.0, 1.0, p1lin)
    run = integrate(
        two_level_system(model, 1.0, 1.0), tolerance=tolerance, samples=samples
    )
    converged = run.norm_drift <= 1e-6
    record = {
        "symmetry": name,
        "rho": rho,
        "p1lin": p1lin,
        "p0": float(run.probabilities[0]),
        "p1": float(run.probabilities[1]),
        "norm_drift": run.norm_drift,
        "tail_estimate": run.tail_estimate,
        "window": run.diagnostics["window"],
        "converged": converged,
    }
    if cfg["trajectory"]:
        rows = [
            {
                "z_over_v_omega": float(z),
                "re_f0": float(f0.real),
                "im_f0": float(f0.imag),
                "re_f1": float(f1.real),
                "im_f1": float(f1.imag),
                "p1_of_z": float(abs(f1) ** 2),
            }
            for z, f0, f1 in zip(run.z, run.amplitudes[0], run.amplitudes[1])
        ]
        write_text(cfg["trajectory"], format_csv(rows, _TRAJECTORY_COLUMNS))
    notes = []
    if not converged:
        notes.append(f"norm drift {run.norm_drift:.3e} exceeds 1e-6")
    return [record], _base_metadata("nonrecoil", cfg), converged, notes, None


def _recoil_inputs(cfg: dict) -> tuple:
    name = _require_symmetry(cfg)
    rho = _require_positive(cfg, "rho")
    p1lin = _require_positive(cfg, "p1lin")
    ratio = _require_positive(cfg, "energy_ratio")
    if ratio <= 1.0:
        raise _ConfigError(
            "energy_ratio",
            "must exceed 1: at or below it the excitation channel is closed",
        )
    q0 = math.sqrt(2.0 * ratio)
    model = normalize_amplitude(
        symmetry(name),
        rho * q0,
        q0,
        1.0,
        p1lin,
        include_backscatter=bool(cfg["backscatter"]),
    )
    return name, rho, p1lin, ratio, q0, model


def _run_recoil(cfg: dict):
    name, rho, p1lin, ratio, q0, model = _recoil_inputs(cfg)
    solution = solve_two_level(
        model,
        q0,
        1.0,
        span_factor=cfg["span_factor"],
        half_count=cfg["half_count"],
    )
    record = {
        "symmetry": name,
        "rho": rho,
        "p1lin": p1lin,
        "energy_ratio": ratio,
        "p0": float(solution.probabilities[0]),
        "p1": float(solution.probabilities[1]),
        "p1_forward": float(solution.forward[1]),
        "p1_backward": float(solution.backward[1]),
        "eps_conv": solution.diagnostics["eps_conv"],
        "grid_points": solution.grid.size,
        "grid_spacing": solution.grid.spacing,
        "grid_span": solution.grid.span,
        "converged": solution.converged,
    }
    notes = []
    if not solution.converged:
        notes.append(
            f"eps_conv {solution.diagnostics['eps_conv']:.3e} exceeds 1e-3; "
            "consider a denser grid (--half-count) or a wider span"
        )
    return [record], _base_metadata("recoil", cfg), solution.converged, notes, None


def _run_boson(cfg: dict):
    mode = cfg["mode"]
    if mode not in _BOSON_MODES:
        raise _ConfigError("mode", f"must be one of {_BOSON_MODES}, got {mode!r}")
    notes: list[str] = []
    if mode == "recoil":
        name, rho, p1lin, ratio, q0, model = _recoil_inputs(cfg)
        if abs(ratio - round(ratio)) < 1e-9:
            raise _ConfigError(
                "energy_ratio",
                "integer values park a ladder level exactly at threshold; "
                "offset the ratio slightly",
            )
        truncation = cfg["truncation"]
        if truncation is not None:
            truncation = _require_count(cfg, "truncation", 1)
        solution = solve_boson_ladder(model, q0, 1.0, truncation=truncation)
        record = {
            "mode": mode,
            "symmetry": name,
            "rho": rho,
            "p1lin": p1lin,
            "energy_ratio": ratio,
            "mean": solution.mean_occupation,
            "truncation": solution.diagnostics["truncation"],
            "tail_weight": solution.diagnostics["tail_weight"],
            "eps_conv": solution.diagnostics["eps_conv"],
            "converged": solution.converged,
        }
        for n, p in enumerate(solution.probabilities):
            record[f"p_{n}"] = float(p)
        if not solution.converged:
            notes.append(
                "occupation weight at the ladder truncation edge "
                f"({solution.diagnostics['tail_weight']:.3e}) is above "
                "tolerance; raise --truncation"
            )
        return [record], _base_metadata("boson", cfg), solution.converged, notes, None

    name = _require_symmetry(cfg)
    rho = _require_positive(cfg, "rho")
    p1lin = _require_positive(cfg, "p1lin")
    model = normalize_amplitude_nonrecoil(symmetry(name), rho, 1.0, 1.0, p1lin)
    record = {"mode": mode, "symmetry": name, "rho": rho, "p1lin": p1lin}
    if mode == "nonrecoil-analytic":
        run = boson_coherent(model, 1.0, 1.0)
        record["mean"] = run.mean
        record["converged"] = True
        for n, p in enumerate(run.occupations):
            record[f"p_{n}"] = float(p)
        return [record], _base_metadata("boson", cfg), True, notes, None
    tolerance = _require_positive(cfg, "tolerance")
    levels = cfg["levels"]
    if levels is None:
        levels = max(8, int(math.ceil(p1lin + 12.0 * math.sqrt(p1lin) + 12.0)))
    else:
        levels = _require_count(cfg, "levels", 1)
    system = boson_ladder_system(model, 1.0, 1.0, levels)
    run = integrate(system, tolerance=tolerance)
    occupations = run.probabilities
    converged = run.norm_drift <= 1e-6
    record["mean"] = float(
        sum(n * p for n, p in enumerate(occupations))
    )
    record["norm_drift"] = run.norm_drift
    record["converged"] = converged
    for n, p in enumerate(occupations):
        record[f"p_{n}"] = float(p)
    if not converged:
        notes.append(f"norm drift {run.norm_drift:.3e} exceeds 1e-6")
    return [record], _base_metadata("boson", cfg), converged, notes, None


def _sweep_spec_from_config(cfg: dict) -> SweepSpec:
    if not cfg["solver"]:
        raise _ConfigError(
            "solver", "required unless --figure selects a bundled dataset"
        )
    raw_axes = cfg["axes"]
    if not isinstance(raw_axes, (list, tuple)) or not raw_axes:
        raise _ConfigError("axes", "expected a nonempty list of axis objects")
    axes = []
    for index, entry in enumerate(raw_axes):
        if not isinstance(entry, dict):
            raise _ConfigError("axes", f"entry {index} is not an object")
        unknown = set(entry) - {"name", "minimum", "maximum", "count", "scale"}
        if unknown:
            raise _ConfigError("axes", f"entry {index}: unknown keys {sorted(unknown)}")
        try:
            axes.append(Axis(**entry))
        except TypeError as exc:
            raise _ConfigError("axes", f"entry {index}: {exc}") from None
    overrides = cfg["grid_overrides"]
    if overrides is not None and not isinstance(overrides, dict):
        raise _ConfigError("grid_overrides", "expected an object")
    return SweepSpec(
        solver=cfg["solver"],
        axes=tuple(axes),
        symmetry=cfg["symmetry"] if cfg["symmetry"] else "p_x",
        rho=cfg["rho"],
        energy_ratio=cfg["energy_ratio"],
        target_linear=cfg["target_linear"],
        include_backscatter=bool(cfg["include_backscatter"]),
        grid_overrides=overrides or {},
        export_trajectory=bool(cfg["export_trajectory"]),
    )


def _figure_dataset(figure: str, symmetry_name: str | None):
    if figure == "fig1":
        return [(None, fig1_dataset())]
    if figure == "fig2":
        names = (symmetry_name,) if symmetry_name else _SYMMETRY_CHOICES
        return [(name, fig2_dataset(name)) for name in names]
    if figure == "fig3a":
        return [(None, fig3a_dataset())]
    return [(None, fig3b_dataset())]


def _sidecar_path(path: str) -> str:
    base = path[:-4] if path.endswith(".csv") else path
    return base + ".meta.json"


def _write_sweep_result(result, cfg: dict, path: str, command_meta: dict) -> bool:
    """Serialize one sweep result; returns True if any point succeeded."""
    ok = [r for r in result.records if "error" not in r]
    failures = list(result.failures)
    metadata = dict(command_meta)
    metadata.update(strip_volatile(result.metadata))
    metadata["spec"] = asdict(result.spec)
    if cfg["format"] == "json":
        _emit(path, format_json(metadata, list(result.records)))
        return bool(ok)
    columns = None
    if not ok:
        # Header-only file: fall back to the input echo of the failed
        # points so the column set stays meaningful.
        columns = [c for c in _column_union(result.records) if c != "error"]
    text = format_csv(ok, columns)
    _emit(path, text)
    if path != "-":
        metadata["failures"] = failures
        write_text(_sidecar_path(path), format_json(metadata, []))
    return bool(ok)


def _column_union(records) -> list[str]:
    columns: list[str] = []
    seen = set()
    for record in records:
        for key in record:
            if key not in seen:
                seen.add(key)
                columns.append(key)
    return columns


def _run_sweep_command(cfg: dict):
    workers = cfg["workers"]
    if workers is not None:
        workers = _require_count(cfg, "workers", 1)
    figure = cfg["figure"]
    if figure is not None and cfg["solver"] is not None:
        raise _ConfigError("figure", "give either a figure name or a solver, not both")
    if figure is not None and figure not in _FIGURES:
        raise _ConfigError("figure", f"must be one of {_FIGURES}, got {figure!r}")
    _require_format(cfg)
    metadata = _base_metadata("sweep", cfg)

    if figure is not None:
        if cfg["symmetry"] is not None:
            _require_symmetry(cfg)
        outputs = _figure_dataset(figure, cfg["symmetry"])
        if len(outputs) > 1 and cfg["output"] == "-":
            raise _ConfigError(
                "output",
                f"{figure} export writes one file per symmetry; give a directory",
            )
        notes = []
        all_ok = True
        extension = "csv" if cfg["format"] == "csv" else "json"
        if cfg["output"] != "-" and any(name is not None for name, _ in outputs):
            # Per-symmetry exports treat the output path as a directory.
            os.makedirs(cfg["output"].rstrip("/") or "/", exist_ok=True)
        for name, result in outputs:
            if len(outputs) > 1 or (cfg["output"] != "-" and name is not None):
                path = f"{cfg['output'].rstrip('/')}/{figure}_{name}.{extension}"
            elif name is not None and cfg["output"] == "-":
                path = "-"
            else:
                path = cfg["output"]
            ok = _write_sweep_result(result, cfg, path, metadata)
            all_ok = ok and all_ok
            if result.metadata["failures"]:
                notes.append(
                    f"{figure}{'_' + name if name else ''}: "
                    f"{result.metadata['failures']} of "
                    f"{result.metadata['points']} points failed"
                )
        return None, metadata, all_ok, notes, None

    spec = _sweep_spec_from_config(cfg)
    if spec.export_trajectory and cfg["format"] == "csv":
        raise _ConfigError(
            "export_trajectory", "trajectories nest arrays; use --format json"
        )
    result = run_sweep(spec, workers=workers)
    notes = []
    if result.metadata["failures"]:
        first = result.failures[0]
        notes.append(
            f"{result.metadata['failures']} of {result.metadata['points']} "
            f"points failed; first error: {first['error']}"
        )
    ok = _write_sweep_result(result, cfg, cfg["output"], metadata)
    return None, metadata, ok, notes, None


def _run_find_max(cfg: dict):
    if cfg["symmetry"] is None:
        raise _ConfigError("symmetry", "required; pass --symmetry")
    name = _require_symmetry(cfg)
    rho_min = _require_positive(cfg, "rho_min")
    rho_max = _require_positive(cfg, "rho_max")
    p1lin_min = _require_positive(cfg, "p1lin_min")
    p1lin_max = _require_positive(cfg, "p1lin_max")
    coarse = _require_count(cfg, "coarse", 2)
    tolerance = _require_positive(cfg, "tolerance")
    result = find_maximum(
        name,
        rho_bounds=(rho_min, rho_max),
        p1lin_bounds=(p1lin_min, p1lin_max),
        coarse=coarse,
        tolerance=tolerance,
    )
    record = {
        "symmetry": name,
        "rho_star": result.rho,
        "p1lin_star": result.target_linear,
        "p1_max": result.probability,
        "evaluations": result.evaluations,
        "attained": result.attained,
    }
    metadata = _base_metadata("find-max", cfg)
    metadata["box"] = result.box
    notes = []
    if not result.attained:
        notes.append(
            f"maximum {result.probability:.6f} fell short of complete "
            "excitation; the search box may not bracket it"
        )
    return [record], metadata, result.attained, notes, None


def _run_eels(cfg: dict):
    name = _require_symmetry(cfg)
    rho = _require_positive(cfg, "rho")
    p1lin = _require_positive(cfg, "p1lin")
    tolerance = _require_positive(cfg, "tolerance")
    merge = cfg["merge_tolerance"]
    if merge is not None:
        merge = _require_positive(cfg, "merge_tolerance")
    model = normalize_amplitude_nonrecoil(symmetry(name), rho, 1.0, 1.0, p1lin)
    run = integrate(two_level_system(model, 1.0, 1.0), tolerance=tolerance)
    lines = eels_spectrum(run, merge_tolerance=merge)
    records = [
        {
            "symmetry": name,
            "rho": rho,
            "p1lin": p1lin,
            "frequency_loss": line.frequency,
            "weight": line.weight,
        }
        for line in lines
    ]
    return records, _base_metadata("eels", cfg), True, [], None


_COMMANDS = {
    "pointlike": _run_pointlike,
    "nonrecoil": _run_nonrecoil,
    "recoil": _run_recoil,
    "boson": _run_boson,
    "sweep": _run_sweep_command,
    "find-max": _run_find_max,
    "eels": _run_eels,
}


def _emit(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        write_text(path, text)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return _EXIT_CONFIG
    try:
        cfg = _effective_config(args.command, args)
        _require_format(cfg)
        if args.dump_config is not None:
            _emit(args.dump_config, dump_config({"command": args.command, **cfg}))
            return _EXIT_OK
        records, metadata, converged, notes, columns = _COMMANDS[args.command](cfg)
        if records is not None:
            if cfg["format"] == "json":
                _emit(cfg["output"], format_json(metadata, records))
            else:
                _emit(cfg["output"], format_csv(records, columns))
    except _ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_NOT_CONVERGED
    for note in notes:
        print(note, file=sys.stderr)
    return _EXIT_OK if converged else _EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
