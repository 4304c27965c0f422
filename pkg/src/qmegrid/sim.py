"""Split-step driver: unitary Cannon step, then the sparse dissipator, repeated.

Also holds run configuration, trajectory records and report writers. Config
files are JSON objects with the keys of :class:`RunConfig`; see the README.
"""

from __future__ import annotations

import gc
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Sequence

import numpy as np

from . import oracle
from .cannon import DistributedMatrix, build_propagators, unitary_step
from .dissipator import apply_all_channels, count_flops, plan_for_model
from .grid import SUPPORTED_SIDES, GridRuntime, TimingReport
from .model import ModelParams, build_channels, build_hamiltonian
from .subspace import BasisState, Subspace, tcm_subspace

log = logging.getLogger(__name__)

Mode = Literal["distributed", "oracle", "both"]

TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-12
DISSIPATOR_TRACE_TOL = 1e-14
ENERGY_TOL = 1e-12
POPULATION_EPS = 1e-9
AGREEMENT_TOL = 1e-10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    n_at: int = 5
    g_over_E: float = 0.1
    gamma_dt: float = 0.01
    gamma_prime_dt: float = 0.0
    dt: float = 0.02
    steps: int = 1000
    k_max: int = 10
    grid_side: int = 1
    mode: Mode = "distributed"
    energy: float = 1.0
    executor: Literal["serial", "threads"] = "serial"
    seed: int = 0
    output_dir: str | None = None
    strict: bool = False

    def validate(self) -> None:
        if self.n_at < 1:
            raise ConfigError(f"n_at must be >= 1, got {self.n_at}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")
        if self.grid_side not in SUPPORTED_SIDES:
            raise ConfigError(f"grid_side must be one of {SUPPORTED_SIDES}, got {self.grid_side}")
        if self.grid_side > 3**self.n_at:
            raise ConfigError(f"grid_side {self.grid_side} exceeds the basis dimension {3**self.n_at}; "
                              "use fewer processors or more atoms")
        if self.mode not in ("distributed", "oracle", "both"):
            raise ConfigError(f"mode must be distributed, oracle or both, got {self.mode!r}")
        if not 0 <= self.gamma_dt < 1:
            raise ConfigError(f"gamma_dt must lie in [0, 1), got {self.gamma_dt}")
        if self.gamma_prime_dt < 0 or (self.gamma_prime_dt > 0 and not self.gamma_prime_dt < self.gamma_dt):
            raise ConfigError(f"gamma_prime_dt must lie in [0, gamma_dt), got {self.gamma_prime_dt}")
        if self.g_over_E < 0 or self.energy < 0:
            raise ConfigError("g_over_E and energy must be non-negative")

    def params(self) -> ModelParams:
        return ModelParams.from_ratios(self.n_at, self.g_over_E, self.gamma_dt, self.gamma_prime_dt,
                                       self.dt, self.energy)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))

    def to_mapping(self) -> dict[str, Any]:
        return asdict(self)


def fig5_preset(**overrides: Any) -> RunConfig:
    """Five atoms, all excited, leaking photons until the ground state dominates."""
    # coupling near critical damping so the cascade finishes within 1200 steps
    base = RunConfig(n_at=5, g_over_E=0.3, gamma_dt=0.02, gamma_prime_dt=0.0, dt=0.02, steps=1200)
    return replace(base, **overrides)


def load_config(path: str | Path, **overrides: Any) -> RunConfig:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(data)


@dataclass
class TrajectoryRecord:
    n_at: int
    times: list[float] = field(default_factory=list)
    populations: list[list[float]] = field(default_factory=list)
    traces: list[float] = field(default_factory=list)
    hermiticity: list[float] = field(default_factory=list)

    def append(self, t: float, pops: Sequence[float], trace: float, herm: float) -> None:
        self.times.append(float(t))
        self.populations.append([float(x) for x in pops])
        self.traces.append(float(trace))
        self.hermiticity.append(float(herm))

    def __len__(self) -> int:
        return len(self.times)

    def population_array(self) -> np.ndarray:
        return np.array(self.populations, dtype=float)

    def energies(self) -> np.ndarray:
        pops = self.population_array()
        return pops @ np.arange(pops.shape[1])

    def to_text(self) -> str:
        header = ["step", "time", *[f"P_{n}" for n in range(self.n_at + 1)], "trace", "hermiticity_defect"]
        lines = ["\t".join(header)]
        for k, (t, pops, tr, h) in enumerate(zip(self.times, self.populations, self.traces, self.hermiticity)):
            lines.append("\t".join([str(k), f"{t:.17g}", *(f"{p:.17g}" for p in pops), f"{tr:.17g}", f"{h:.17g}"]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> TrajectoryRecord:
        rows = [ln.split("\t") for ln in text.splitlines() if ln.strip()]
        header, body = rows[0], rows[1:]
        n_pops = sum(1 for h in header if h.startswith("P_"))
        rec = cls(n_at=n_pops - 1)
        for row in body:
            vals = [float(x) for x in row[1:]]
            rec.append(vals[0], vals[1:1 + n_pops], vals[1 + n_pops], vals[2 + n_pops])
        return rec

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path: str | Path) -> TrajectoryRecord:
        return cls.from_text(Path(path).read_text())


@dataclass
class SimulationResult:
    config: RunConfig
    trajectory: TrajectoryRecord
    timing: dict[str, TimingReport] = field(default_factory=dict)
    oracle_trajectory: TrajectoryRecord | None = None
    states: list[np.ndarray] = field(default_factory=list)
    oracle_states: list[np.ndarray] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    events: dict[str, int] = field(default_factory=dict)
    wall_time: float = 0.0
    final_state: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class ProblemSetup:
    space: Subspace
    params: ModelParams
    hamiltonian: np.ndarray
    channels: list
    rho0: np.ndarray
    excitations: np.ndarray


def setup_problem(config: RunConfig) -> ProblemSetup:
    space = tcm_subspace(config.n_at, influx=config.gamma_prime_dt > 0)
    params = config.params()
    h = build_hamiltonian(params, space)
    channels = build_channels(params, space)
    rho0 = np.zeros((space.dim, space.dim), dtype=complex)
    k0 = space.index[BasisState.all_excited(config.n_at)]
    rho0[k0, k0] = 1.0
    return ProblemSetup(space, params, h, channels, rho0, np.array(space.excitations()))


def _observe(rho: np.ndarray, excitations: np.ndarray, n_at: int) -> tuple[np.ndarray, float, float]:
    diag = np.real(np.diagonal(rho))
    pops = np.array([diag[excitations == k].sum() for k in range(n_at + 1)])
    trace = float(np.real(np.trace(rho)))
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    return pops, trace, herm


def _diag_trace(rho: DistributedMatrix) -> float:
    return float(sum(np.real(np.trace(rho.blocks[(b, b)])) for b in range(rho.part.grid_side)))


class _InvariantMonitor:
    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.violations: list[str] = []
        self._last_energy: float | None = None
        self._last_ground: float | None = None

    def _flag(self, msg: str) -> None:
        if len(self.violations) < 50:
            self.violations.append(msg)
        log.warning(msg)

    def check(self, step: int, pops: np.ndarray, trace: float, herm: float, label: str) -> None:
        if abs(trace - 1) > TRACE_TOL:
            self._flag(f"{label} step {step}: |Tr rho - 1| = {abs(trace - 1):.3e} > {TRACE_TOL}")
        if herm > HERMITICITY_TOL:
            self._flag(f"{label} step {step}: Hermiticity defect {herm:.3e} > {HERMITICITY_TOL}")
        if np.any(pops < -POPULATION_EPS) or np.any(pops > 1 + POPULATION_EPS):
            self._flag(f"{label} step {step}: sector population outside [0, 1]: {pops}")
        if self.config.gamma_prime_dt == 0:
            energy = float(pops @ np.arange(pops.size))
            if self._last_energy is not None and energy > self._last_energy + ENERGY_TOL:
                self._flag(f"{label} step {step}: energy rose from {self._last_energy:.15g} to {energy:.15g}")
            if self.config.gamma_dt > 0 and self._last_ground is not None and pops[0] < self._last_ground - ENERGY_TOL:
                self._flag(f"{label} step {step}: ground population fell")
            self._last_energy, self._last_ground = energy, float(pops[0])

    def check_dissipator_trace(self, step: int, before: float, after: float) -> None:
        if abs(after - before) > DISSIPATOR_TRACE_TOL:
            self._flag(f"step {step}: dissipator changed the trace by {after - before:.3e}")


@dataclass
class _Outcome:
    trajectory: TrajectoryRecord
    states: list[np.ndarray]
    final_state: np.ndarray
    violations: list[str]
    timing: dict[str, TimingReport] = field(default_factory=dict)
    events: dict[str, int] = field(default_factory=dict)


def _run_distributed(config: RunConfig, prob: ProblemSetup, keep_states: bool, grid: GridRuntime | None = None,
                     on_step: Callable[[int, np.ndarray], None] | None = None) -> _Outcome:
    grid = grid or GridRuntime(config.grid_side, executor=config.executor)
    monitor = _InvariantMonitor(config)
    try:
        props = build_propagators(prob.hamiltonian, config.dt, config.k_max, grid, hbar=prob.params.hbar,
                                  strict=config.strict)
        rho = DistributedMatrix.from_dense(prob.rho0, grid)
        plan = plan_for_model(prob.channels, config.dt / prob.params.hbar, rho.part)
        log.info("distributed run: N=%d M=%d p=%d, dissipator flops/step=%d", prob.space.dim, len(prob.channels),
                 grid.p, count_flops(plan, prob.space.dim))
        traj = TrajectoryRecord(config.n_at)
        states: list[np.ndarray] = []
        for step in range(config.steps + 1):
            if step:
                rho = unitary_step(rho, props, grid)
                before = _diag_trace(rho)
                rho = apply_all_channels(rho, plan, grid)
                monitor.check_dissipator_trace(step, before, _diag_trace(rho))
            dense = rho.to_dense()
            pops, trace, herm = _observe(dense, prob.excitations, config.n_at)
            monitor.check(step, pops, trace, herm, "distributed")
            traj.append(step * config.dt, pops, trace, herm)
            if keep_states:
                states.append(dense)
            if on_step is not None:
                on_step(step, dense)
        timing = {ph: grid.collect_timing(ph) for ph in ("propagators", "unitary", "dissipator")}
        timing["all"] = grid.collect_timing()
        return _Outcome(traj, states, dense, monitor.violations, timing, grid.event_summary())
    finally:
        grid.close()


class _OracleTracker:
    """Follows the dense reference one step at a time and records its observables."""

    def __init__(self, config: RunConfig, prob: ProblemSetup, keep_states: bool) -> None:
        self.config = config
        self.prob = prob
        self.keep_states = keep_states
        self.monitor = _InvariantMonitor(config)
        self.trajectory = TrajectoryRecord(config.n_at)
        self.states: list[np.ndarray] = []
        self.final: np.ndarray | None = None
        self.max_deviation = 0.0
        self._iter = oracle.iterate_oracle(prob.rho0, prob.hamiltonian, prob.channels, config.dt, config.steps,
                                           config.k_max, hbar=prob.params.hbar)

    def advance(self, step: int) -> np.ndarray:
        rho = next(self._iter)
        pops, trace, herm = _observe(rho, self.prob.excitations, self.config.n_at)
        self.monitor.check(step, pops, trace, herm, "oracle")
        self.trajectory.append(step * self.config.dt, pops, trace, herm)
        if self.keep_states:
            self.states.append(rho)
        self.final = rho
        return rho

    def compare(self, step: int, dense: np.ndarray) -> None:
        ref = self.advance(step)
        self.max_deviation = max(self.max_deviation, float(np.max(np.abs(dense - ref))))

    def run(self) -> _Outcome:
        for step in range(self.config.steps + 1):
            self.advance(step)
        return _Outcome(self.trajectory, self.states, self.final, self.monitor.violations)


def run_simulation(config: RunConfig, keep_states: bool = False, grid: GridRuntime | None = None) -> SimulationResult:
    """Run the configured model; invariant failures are collected in ``violations``."""
    config.validate()
    prob = setup_problem(config)
    t0 = time.perf_counter()
    if config.mode == "oracle":
        out = _OracleTracker(config, prob, keep_states).run()
        result = SimulationResult(config, out.trajectory, states=out.states, violations=out.violations,
                                  final_state=out.final_state)
    else:
        tracker = _OracleTracker(config, prob, keep_states) if config.mode == "both" else None
        out = _run_distributed(config, prob, keep_states, grid, tracker.compare if tracker else None)
        result = SimulationResult(config, out.trajectory, out.timing, states=out.states, violations=out.violations,
                                  events=out.events, final_state=out.final_state)
        if tracker is not None:
            result.oracle_trajectory = tracker.trajectory
            result.oracle_states = tracker.states
            result.violations += tracker.monitor.violations
            if tracker.max_deviation > AGREEMENT_TOL:
                result.violations.append(f"distributed and oracle states differ by {tracker.max_deviation:.3e} "
                                         f"> {AGREEMENT_TOL}")
    result.wall_time = time.perf_counter() - t0
    return result


@dataclass
class ComparisonReport:
    max_deviation: dict[str, float]
    first_exceeding: dict[str, int | None]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_deviation.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.worst <= self.tolerance

    def to_text(self) -> str:
        lines = [f"tolerance\t{self.tolerance:.3e}"]
        for name, dev in self.max_deviation.items():
            first = self.first_exceeding[name]
            lines.append(f"{name}\t{dev:.6e}\t{'-' if first is None else first}")
        lines.append(f"result\t{'ok' if self.ok else 'MISMATCH'}")
        return "\n".join(lines) + "\n"


def compare_runs(a: TrajectoryRecord, b: TrajectoryRecord, tol: float = AGREEMENT_TOL) -> ComparisonReport:
    if len(a) != len(b) or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise ValueError(f"trajectories use different time grids ({len(a)} vs {len(b)} points)")
    if a.n_at != b.n_at:
        raise ValueError(f"trajectories have different atom counts ({a.n_at} vs {b.n_at})")
    series = {f"P_{n}": (a.population_array()[:, n], b.population_array()[:, n]) for n in range(a.n_at + 1)}
    series["trace"] = (np.array(a.traces), np.array(b.traces))
    series["hermiticity_defect"] = (np.array(a.hermiticity), np.array(b.hermiticity))
    max_dev, first = {}, {}
    for name, (x, y) in series.items():
        diff = np.abs(x - y)
        max_dev[name] = float(diff.max()) if diff.size else 0.0
        over = np.nonzero(diff > tol)[0]
        first[name] = int(over[0]) if over.size else None
    return ComparisonReport(max_dev, first, tol)


def timing_document(timing: Mapping[str, TimingReport]) -> dict[str, Any]:
    overall = timing.get("all")
    doc: dict[str, Any] = {"phases": {name: rep.to_dict() for name, rep in timing.items() if name != "all"}}
    if overall is not None:
        doc.update(overall.to_dict())
    return doc


def emit_reports(result: SimulationResult, out_dir: str | Path) -> dict[str, Path]:
    """Write ``trajectory.tsv``, ``timing.json`` and ``run.json`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {"trajectory": out / "trajectory.tsv", "run": out / "run.json"}
    result.trajectory.write(paths["trajectory"])
    if result.timing:
        paths["timing"] = out / "timing.json"
        paths["timing"].write_text(json.dumps(timing_document(result.timing), indent=2) + "\n")
    if result.oracle_trajectory is not None:
        paths["oracle"] = out / "oracle_trajectory.tsv"
        result.oracle_trajectory.write(paths["oracle"])
    summary = {
        "config": result.config.to_mapping(),
        "violations": result.violations,
        "comm_events": result.events,
        "final_populations": result.trajectory.populations[-1],
    }
    paths["run"].write_text(json.dumps(summary, indent=2) + "\n")
    return paths


@dataclass
class BenchRow:
    grid_side: int
    workers: int
    unitary: TimingReport
    dissipator: TimingReport
    unitary_shift_events: int

    def cells(self) -> list[str]:
        u, d = self.unitary, self.dissipator
        return [str(self.grid_side), str(self.workers),
                f"{u.max_total:.6e}", f"{u.mean_mac:.6e}", f"{u.max_mac:.6e}", f"{u.mean_comm:.6e}", str(u.comm_events),
                str(self.unitary_shift_events),
                f"{d.max_total:.6e}", f"{d.mean_mac:.6e}", f"{d.mean_comm:.6e}", str(d.comm_events)]


BENCH_HEADER = ["grid_side", "workers", "unitary_wall", "unitary_mac_mean", "unitary_mac_max", "unitary_comm_mean",
                "unitary_events", "unitary_shift_events", "dissipator_wall", "dissipator_mac_mean",
                "dissipator_comm_mean", "dissipator_events"]


def bench(config: RunConfig, grid_sides: Sequence[int]) -> list[BenchRow]:
    """Run the same model on several grid sizes and tabulate per-phase timing."""
    rows = []
    for side in grid_sides:
        cfg = replace(config, grid_side=side, mode="distributed")
        grid = GridRuntime(side, executor=cfg.executor)
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            res = run_simulation(cfg, grid=grid)
        finally:
            if gc_was_enabled:
                gc.enable()
        if res.violations:
            raise RuntimeError(f"grid side {side}: invariant violations: {res.violations[:3]}")
        shifts = sum(1 for e in grid.events if e.phase == "unitary" and e.kind == "shift")
        rows.append(BenchRow(side, side * side, res.timing["unitary"], res.timing["dissipator"], shifts))
    return rows


def bench_table(rows: Sequence[BenchRow]) -> str:
    lines = ["\t".join(BENCH_HEADER)]
    lines += ["\t".join(r.cells()) for r in rows]
    return "\n".join(lines) + "\n"
