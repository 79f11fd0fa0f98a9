"""Parameter sweeps, figure datasets, and the excitation-maximum search.

Grid points are independent solver calls, so sweeps map over them with a
process pool bounded by the ``EKICK_WORKERS`` environment variable and
reassemble the records in row-major axis order; identical specs produce
identical records regardless of worker count.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .closed_forms import (
    pointlike_no_backscatter,
    pointlike_with_backscatter,
    poisson_occupations,
)
from .coupling import normalize_amplitude, normalize_amplitude_nonrecoil, symmetry
from .nonrecoil import integrate, two_level_system
from .recoil import solve_boson_ladder, solve_two_level

__all__ = [
    "Axis",
    "SweepSpec",
    "SweepResult",
    "MaximumSearchResult",
    "run_sweep",
    "find_maximum",
    "fock_decomposition_sweep",
    "fig1_dataset",
    "fig2_dataset",
    "fig3a_dataset",
    "fig3b_dataset",
]

_SOLVERS = ("pointlike", "nonrecoil", "recoil", "boson-nonrecoil", "boson-recoil")
_AXIS_NAMES = ("p1lin", "rho", "energy_ratio")
# Sweep solves trade integrator tolerance for speed; 1e-9 keeps the
# norm drift inside the 1e-8 unitarity budget with margin to spare.
_SWEEP_TOLERANCE = 1e-9
_TRAJECTORY_SAMPLES = 200


@dataclass(frozen=True)
class Axis:
    """One sweep axis: ``count`` values from ``minimum`` to ``maximum``."""

    name: str
    minimum: float
    maximum: float
    count: int
    scale: str = "linear"

    def __post_init__(self) -> None:
        if self.name not in _AXIS_NAMES:
            raise ValueError(
                f"unknown axis {self.name!r}; expected one of {_AXIS_NAMES}"
            )
        if self.count < 2:
            raise ValueError(f"axis {self.name}: count must be >= 2, got {self.count}")
        if not (self.maximum > self.minimum):
            raise ValueError(
                f"axis {self.name}: maximum must exceed minimum, got "
                f"[{self.minimum}, {self.maximum}]"
            )
        if self.scale not in ("linear", "log"):
            raise ValueError(f"axis {self.name}: unknown scale {self.scale!r}")
        if self.scale == "log" and not (self.minimum > 0.0):
            raise ValueError(f"axis {self.name}: log scale requires minimum > 0")

    def values(self) -> np.ndarray:
        if self.scale == "log":
            return np.geomspace(self.minimum, self.maximum, self.count)
        return np.linspace(self.minimum, self.maximum, self.count)


@dataclass(frozen=True)
class SweepSpec:
    """Which solver to sweep, over which axes, with which fixed inputs.

    Axis values override the correspondingly named fixed parameter.  The
    ``rho`` parameter is the scaled impact parameter (transition
    frequency times impact parameter over speed) and ``energy_ratio`` is
    the incident kinetic energy over the transition quantum.
    ``export_trajectory`` attaches sampled trajectories to nonrecoil
    records (JSON output only).
    """

    solver: str
    axes: tuple[Axis, ...]
    symmetry: str = "p_x"
    rho: float | None = None
    energy_ratio: float | None = None
    target_linear: float | None = None
    include_backscatter: bool = True
    grid_overrides: dict = field(default_factory=dict)
    export_trajectory: bool = False

    def __post_init__(self) -> None:
        if self.solver not in _SOLVERS:
            raise ValueError(
                f"unknown solver {self.solver!r}; expected one of {_SOLVERS}"
            )
        if not self.axes:
            raise ValueError("sweep needs at least one axis")
        names = [axis.name for axis in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate axis names in {names}")
        fixed = {"rho": self.rho, "energy_ratio": self.energy_ratio,
                 "p1lin": self.target_linear}
        for name in self._required_inputs():
            if name not in names and fixed[name] is None:
                raise ValueError(
                    f"solver {self.solver!r} needs {name!r} as an axis or a "
                    "fixed parameter"
                )
        if self.solver == "pointlike" and names != ["p1lin"]:
            raise ValueError("pointlike sweeps take exactly one p1lin axis")
        if self.export_trajectory and self.solver != "nonrecoil":
            raise ValueError("trajectory export is a nonrecoil feature")
        unknown = set(self.grid_overrides) - {"span_factor", "half_count", "truncation"}
        if unknown:
            raise ValueError(f"unknown grid overrides {sorted(unknown)}")

    def _required_inputs(self) -> tuple[str, ...]:
        if self.solver == "pointlike":
            return ("p1lin",)
        if self.solver in ("nonrecoil", "boson-nonrecoil"):
            return ("rho", "p1lin")
        return ("rho", "p1lin", "energy_ratio")

    def grid_points(self) -> list[dict]:
        """Input dictionaries in row-major axis order."""
        axes_values = [axis.values() for axis in self.axes]
        points = []
        for combo in itertools.product(*axes_values):
            inputs = {
                "rho": self.rho,
                "energy_ratio": self.energy_ratio,
                "p1lin": self.target_linear,
            }
            for axis, value in zip(self.axes, combo):
                inputs[axis.name] = float(value)
            points.append({k: v for k, v in inputs.items() if v is not None})
        return points

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SweepResult:
    """Records for every grid point plus reproducibility metadata.

    ``metadata['runtime_seconds']`` is informational and is stripped by
    the serializers so identical sweeps yield identical files.
    """

    spec: SweepSpec
    records: tuple[dict, ...]
    metadata: dict

    @property
    def failures(self) -> tuple[dict, ...]:
        return tuple(r for r in self.records if "error" in r)


def _evaluate_point(spec: SweepSpec, inputs: dict) -> dict:
    """Solve one grid point; failures come back as records, not raises."""
    record = dict(inputs)
    record["symmetry"] = spec.symmetry
    try:
        record.update(_dispatch_point(spec, inputs))
    except (ValueError, RuntimeError) as exc:
        record["error"] = str(exc)
        record["converged"] = False
    return record


def _dispatch_point(spec: SweepSpec, inputs: dict) -> dict:
    if spec.solver == "pointlike":
        p1lin = inputs["p1lin"]
        _, with_back = pointlike_with_backscatter(p1lin)
        _, without = pointlike_no_backscatter(p1lin)
        return {
            "p1_with_backscatter": with_back,
            "p1_no_backscatter": without,
            "p1_boson_reference": p1lin,
        }
    sym = symmetry(spec.symmetry)
    if spec.solver == "nonrecoil":
        model = normalize_amplitude_nonrecoil(
            sym, inputs["rho"], 1.0, 1.0, inputs["p1lin"]
        )
        samples = _TRAJECTORY_SAMPLES if spec.export_trajectory else 0
        run = integrate(
            two_level_system(model, 1.0, 1.0),
            tolerance=_SWEEP_TOLERANCE,
            samples=samples,
            tail_check=False,
        )
        record = {
            "p0": float(run.probabilities[0]),
            "p1": float(run.probabilities[1]),
            "norm_drift": run.norm_drift,
            "converged": True,
        }
        if spec.export_trajectory:
            record["trajectory"] = [
                [float(z), float(abs(f1) ** 2)]
                for z, f1 in zip(run.z, run.amplitudes[1])
            ]
        return record
    if spec.solver == "boson-nonrecoil":
        # Coherent driving: the distribution is Poissonian with mean
        # equal to the linear probability, so the closed form suffices.
        mean = inputs["p1lin"]
        occupations = poisson_occupations(mean, _level_columns(mean))
        record = {"mean": mean, "converged": True}
        record.update(
            {f"p_{n}": float(p) for n, p in enumerate(occupations)}
        )
        return record

    q0 = math.sqrt(2.0 * inputs["energy_ratio"])
    model = normalize_amplitude(
        sym,
        inputs["rho"] * q0,
        q0,
        1.0,
        inputs["p1lin"],
        include_backscatter=spec.include_backscatter,
    )
    overrides = spec.grid_overrides
    if spec.solver == "recoil":
        solution = solve_two_level(
            model,
            q0,
            1.0,
            span_factor=overrides.get("span_factor"),
            half_count=overrides.get("half_count"),
        )
        return {
            "p0": float(solution.probabilities[0]),
            "p1": float(solution.probabilities[1]),
            "p1_forward": float(solution.forward[1]),
            "p1_backward": float(solution.backward[1]),
            "eps_conv": solution.diagnostics["eps_conv"],
            "grid_points": solution.diagnostics["grid_points"],
            "converged": solution.converged,
        }
    solution = solve_boson_ladder(
        model,
        q0,
        1.0,
        truncation=overrides.get("truncation"),
        span_factor=overrides.get("span_factor"),
        half_count=overrides.get("half_count"),
    )
    record = {
        "mean": solution.mean_occupation,
        "truncation": solution.diagnostics["truncation"],
        "eps_conv": solution.diagnostics["eps_conv"],
        "converged": solution.converged,
    }
    record.update(
        {f"p_{n}": float(p) for n, p in enumerate(solution.probabilities)}
    )
    return record


def _level_columns(mean: float) -> int:
    # Cover the Poisson bulk plus a generous tail.
    return max(8, int(math.ceil(4.0 * mean + 10.0)))


def _worker_count() -> int:
    raw = os.environ.get("EKICK_WORKERS", "")
    if raw:
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ValueError(
                f"EKICK_WORKERS must be an integer, got {raw!r}"
            ) from exc
        if workers < 1:
            raise ValueError(f"EKICK_WORKERS must be >= 1, got {workers}")
        return workers
    return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """Evaluate the solver on every grid point of the given sweep.

    Points are independent; with more than one worker they are solved in
    a process pool.  Records keep row-major axis order either way, and a
    failed point is a record with an ``error`` field, never an abort.
    """
    started = time.perf_counter()
    points = spec.grid_points()
    if workers is None:
        workers = _worker_count()
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(_evaluate_point, itertools.repeat(spec), points)
            )
    else:
        records = [_evaluate_point(spec, inputs) for inputs in points]
    metadata = {
        "spec_hash": spec.digest(),
        "solver": spec.solver,
        "symmetry": spec.symmetry,
        "package_version": __version__,
        "points": len(records),
        "failures": sum(1 for r in records if "error" in r),
        "runtime_seconds": time.perf_counter() - started,
    }
    return SweepResult(spec=spec, records=tuple(records), metadata=metadata)


@dataclass(frozen=True)
class MaximumSearchResult:
    """Located excitation maximum of one symmetry over a search box."""

    symmetry: str
    rho: float
    target_linear: float
    probability: float
    evaluations: int
    trace: tuple[tuple[float, float, float], ...]
    box: tuple[tuple[float, float], tuple[float, float]]

    @property
    def attained(self) -> bool:
        """Whether the refined maximum reaches complete excitation.

        False signals a mis-specified search box or a solver problem
        rather than raising, so sweeps over symmetries can report.
        """
        return self.probability >= 0.99


def find_maximum(
    symmetry_name: str,
    rho_bounds: tuple[float, float] = (0.02, 3.0),
    p1lin_bounds: tuple[float, float] = (0.2, 8.0),
    coarse: int = 40,
    tolerance: float = 1e-4,
) -> MaximumSearchResult:
    """Locate the excitation-probability maximum over (rho, P1lin).

    A coarse log-spaced scan seeds a compass (pattern) search whose
    steps halve until both fall below ``tolerance``.  Pattern search is
    used instead of gradients because the objective comes from an
    adaptive integrator whose noise floor makes finite differences
    unreliable.
    """
    if not (rho_bounds[0] < rho_bounds[1]) or not (p1lin_bounds[0] < p1lin_bounds[1]):
        raise ValueError("search box must be nonempty")
    if not (rho_bounds[0] > 0.0 and p1lin_bounds[0] > 0.0):
        raise ValueError("search box must have positive lower edges")

    evaluations = 0

    def objective(rho: float, p1lin: float) -> float:
        nonlocal evaluations
        evaluations += 1
        model = normalize_amplitude_nonrecoil(
            symmetry(symmetry_name), rho, 1.0, 1.0, p1lin
        )
        run = integrate(
            two_level_system(model, 1.0, 1.0),
            tolerance=_SWEEP_TOLERANCE,
            tail_check=False,
        )
        return float(run.probabilities[1])

    rho_values = np.geomspace(rho_bounds[0], rho_bounds[1], coarse)
    p1lin_values = np.geomspace(p1lin_bounds[0], p1lin_bounds[1], coarse)
    best = (-1.0, rho_values[0], p1lin_values[0])
    for rho in rho_values:
        for p1lin in p1lin_values:
            value = objective(rho, p1lin)
            if value > best[0]:
                best = (value, float(rho), float(p1lin))

    value, rho, p1lin = best
    trace = [(rho, p1lin, value)]
    step_rho = float(np.diff(rho_values).max())
    step_p1 = float(np.diff(p1lin_values).max())
    while step_rho >= tolerance or step_p1 >= tolerance:
        moved = False
        for d_rho, d_p1 in ((step_rho, 0.0), (-step_rho, 0.0),
                            (0.0, step_p1), (0.0, -step_p1)):
            cand_rho = min(max(rho + d_rho, rho_bounds[0]), rho_bounds[1])
            cand_p1 = min(max(p1lin + d_p1, p1lin_bounds[0]), p1lin_bounds[1])
            if cand_rho == rho and cand_p1 == p1lin:
                continue
            candidate = objective(cand_rho, cand_p1)
            if candidate > value:
                rho, p1lin, value = cand_rho, cand_p1, candidate
                trace.append((rho, p1lin, value))
                moved = True
                break
        if not moved:
            step_rho *= 0.5
            step_p1 *= 0.5
    return MaximumSearchResult(
        symmetry=symmetry_name,
        rho=rho,
        target_linear=p1lin,
        probability=value,
        evaluations=evaluations,
        trace=tuple(trace),
        box=(tuple(rho_bounds), tuple(p1lin_bounds)),
    )


def fock_decomposition_sweep(
    energy_ratios,
    target_linear: float = 1.0,
    rho: float = 0.2,
    truncation: int | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Recoil Fock occupations per incident energy, with the nonrecoil
    reference attached to every record.

    The nonrecoil limit of coherent driving is Poissonian with mean
    equal to the linear probability, so the reference columns are the
    same for every energy.
    """
    ratios = tuple(float(r) for r in energy_ratios)
    if len(set(ratios)) < 2:
        raise ValueError("need at least two distinct energy ratios")
    spec = SweepSpec(
        solver="boson-recoil",
        axes=(
            Axis("energy_ratio", min(ratios), max(ratios), max(2, len(ratios))),
        ),
        symmetry="p_x",
        rho=rho,
        target_linear=target_linear,
        grid_overrides={} if truncation is None else {"truncation": truncation},
    )
    started = time.perf_counter()
    if workers is None:
        workers = _worker_count()
    points = [{"rho": rho, "p1lin": target_linear, "energy_ratio": r} for r in ratios]
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(_evaluate_point, itertools.repeat(spec), points)
            )
    else:
        records = [_evaluate_point(spec, inputs) for inputs in points]

    levels = max(
        (
            sum(1 for key in record if key.startswith("p_"))
            for record in records
            if "error" not in record
        ),
        default=_level_columns(target_linear),
    )
    reference = poisson_occupations(target_linear, levels)
    for record in records:
        for n in range(levels):
            record.setdefault(f"p_{n}", 0.0)
            record[f"p_{n}_nonrecoil"] = float(reference[n])
        record["mean_nonrecoil"] = target_linear
    metadata = {
        "spec_hash": spec.digest(),
        "solver": spec.solver,
        "symmetry": spec.symmetry,
        "package_version": __version__,
        "points": len(records),
        "failures": sum(1 for r in records if "error" in r),
        "level_columns": levels,
        "runtime_seconds": time.perf_counter() - started,
    }
    return SweepResult(spec=spec, records=tuple(records), metadata=metadata)


def fig1_dataset(points: int = 500, p1lin_max: float = 10.0) -> SweepResult:
    """Point-like curves against the linear probability."""
    spec = SweepSpec(
        solver="pointlike",
        axes=(Axis("p1lin", 0.0, p1lin_max, points),),
    )
    return run_sweep(spec)


def fig2_dataset(
    symmetry_name: str, rho_count: int = 60, p1lin_count: int = 60
) -> SweepResult:
    """Nonrecoil excitation probability over impact parameter and coupling."""
    spec = SweepSpec(
        solver="nonrecoil",
        axes=(
            Axis("rho", 0.01, 3.0, rho_count, scale="log"),
            Axis("p1lin", 0.05, 8.0, p1lin_count, scale="log"),
        ),
        symmetry=symmetry_name,
    )
    return run_sweep(spec)


def fig3a_dataset(
    ratio_count: int = 60,
    p1lin_count: int = 40,
    rho: float = 0.2,
    ratio_bounds: tuple[float, float] = (1.05, 10.0),
) -> SweepResult:
    """Recoil excitation probability over incident energy and coupling."""
    spec = SweepSpec(
        solver="recoil",
        axes=(
            Axis("energy_ratio", ratio_bounds[0], ratio_bounds[1], ratio_count),
            Axis("p1lin", 0.05, 8.0, p1lin_count, scale="log"),
        ),
        symmetry="p_x",
        rho=rho,
    )
    return run_sweep(spec)


def fig3b_dataset(
    ratio_count: int = 40,
    target_linear: float = 1.0,
    rho: float = 0.2,
    ratio_bounds: tuple[float, float] = (1.05, 10.0),
) -> SweepResult:
    """Recoil Fock decomposition along the incident-energy axis."""
    ratios = np.linspace(ratio_bounds[0], ratio_bounds[1], ratio_count)
    return fock_decomposition_sweep(ratios, target_linear=target_linear, rho=rho)
