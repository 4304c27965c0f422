"""Block-distributed Lindblad solver for the Tavis-Cummings photon-leak model."""

from .cannon import DistributedMatrix, PropagatorPair, build_propagators, cannon_chain, cannon_multiply, unitary_step
from .dissipator import ChannelUpdatePlan, PlanEntry, apply_all_channels, apply_channel, build_plan, count_flops
from .grid import GridConfig, GridRuntime, TimingReport
from .model import Channel, ModelParams, build_channels, build_hamiltonian
from .sim import RunConfig, TrajectoryRecord, compare_runs, emit_reports, run_simulation
from .subspace import BasisState, Subspace, excitation_number, generate_subspace, memory_ratio, tcm_subspace

__version__ = "0.1.0"

__all__ = [
    "BasisState", "Channel", "ChannelUpdatePlan", "DistributedMatrix", "GridConfig", "GridRuntime", "ModelParams",
    "PlanEntry", "PropagatorPair", "RunConfig", "Subspace", "TimingReport", "TrajectoryRecord", "apply_all_channels",
    "apply_channel", "build_channels", "build_hamiltonian", "build_plan", "build_propagators", "cannon_chain",
    "cannon_multiply", "compare_runs", "count_flops", "emit_reports", "excitation_number", "generate_subspace",
    "memory_ratio", "run_simulation", "tcm_subspace", "unitary_step",
]
