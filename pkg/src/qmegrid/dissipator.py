"""Sparse non-unitary update for elementary jump channels ``|j><i|``.

For one channel with step-scaled rates ``r = gamma*dt`` and ``r' = gamma'*dt``,
reading every value from the pre-update snapshot ``old``::

    rho[j, j] += r  * old[i, i]          rho[i, :] -= r/2  * old[i, :]
                                         rho[:, i] -= r/2  * old[:, i]
    rho[i, i] += r' * old[j, j]          rho[j, :] -= r'/2 * old[j, :]
                                         rho[:, j] -= r'/2 * old[:, j]

All channels of a step read the same snapshot, so their contributions add
and the result does not depend on channel order. Row and column sweeps touch
only the worker's own block; the two diagonal gains are the only values that
may have to cross workers, and only between diagonal workers.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cannon import DistributedMatrix
from .grid import Coord, GridError, GridRuntime
from .model import Channel
from .tensor import BlockPartition


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class PlanEntry:
    i: int
    j: int
    rate: float
    rate_prime: float = 0.0


@dataclass(frozen=True)
class Transfer:
    """One diagonal gain ``rho[dst, dst] += coef * old[src, src]``."""

    channel: int
    src: int
    dst: int
    coef: float


@dataclass
class _WorkerPlan:
    row_idx: np.ndarray
    row_coef: np.ndarray
    col_idx: np.ndarray
    col_coef: np.ndarray
    # diagonal workers only
    local_src: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    local_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    local_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outgoing: dict[Coord, np.ndarray] = field(default_factory=dict)
    incoming: dict[Coord, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


@dataclass
class ChannelUpdatePlan:
    part: BlockPartition
    entries: list[PlanEntry]
    transfers: list[Transfer]
    workers: dict[Coord, _WorkerPlan]

    @property
    def n_channels(self) -> int:
        return len(self.entries)

    def cross_transfers(self) -> list[Transfer]:
        return [t for t in self.transfers if _diag_owner(self.part, t.src) != _diag_owner(self.part, t.dst)]


def _diag_owner(part: BlockPartition, index: int) -> Coord:
    b = part.owner_block(index)
    return (b, b)


def _validate(entry: PlanEntry, n: int) -> None:
    if entry.i == entry.j:
        raise PlanError(f"channel source and target coincide ({entry.i})")
    for idx in (entry.i, entry.j):
        if not 0 <= idx < n:
            raise PlanError(f"channel index {idx} outside 0..{n - 1}")
    if not 0 <= entry.rate < 1:
        raise PlanError(f"gamma*dt = {entry.rate} outside [0, 1)")
    if entry.rate_prime < 0 or (entry.rate_prime > 0 and not entry.rate_prime < entry.rate):
        raise PlanError(f"gamma'*dt = {entry.rate_prime} must lie in [0, gamma*dt = {entry.rate})")


def plan_entries(channels: Sequence[Channel], dt: float) -> list[PlanEntry]:
    return [PlanEntry(ch.i, ch.j, ch.gamma * dt, ch.gamma_prime * dt) for ch in channels]


def build_plan(entries: Sequence[PlanEntry], part: BlockPartition) -> ChannelUpdatePlan:
    """Split channel work into per-worker row/column sweeps and diagonal transfers."""
    n = part.global_dim
    for e in entries:
        _validate(e, n)

    # global (index, half-rate) pairs for every row/column sweep
    sweeps: list[tuple[int, float]] = []
    transfers: list[Transfer] = []
    for k, e in enumerate(entries):
        sweeps.append((e.i, e.rate / 2))
        transfers.append(Transfer(k, e.i, e.j, e.rate))
        if e.rate_prime > 0:
            sweeps.append((e.j, e.rate_prime / 2))
            transfers.append(Transfer(k, e.j, e.i, e.rate_prime))

    by_block: dict[int, list[tuple[int, float]]] = defaultdict(list)
    for idx, coef in sweeps:
        block, local = part.local_index(idx)
        by_block[block].append((local, coef))

    def arrays(block: int) -> tuple[np.ndarray, np.ndarray]:
        # channels sharing a row read the same snapshot, so their factors add
        pairs = by_block.get(block, [])
        idx = np.array([p[0] for p in pairs], dtype=int)
        coef = np.array([p[1] for p in pairs], dtype=float)
        rows = np.unique(idx)
        summed = np.zeros(part.extents[block])
        np.add.at(summed, idx, coef)
        return rows, summed[rows]

    workers: dict[Coord, _WorkerPlan] = {}
    for a, b in part.coords():
        ri, rc = arrays(a)
        ci, cc = arrays(b)
        workers[(a, b)] = _WorkerPlan(ri, rc, ci, cc)

    local: dict[Coord, list[tuple[int, int, float]]] = defaultdict(list)
    outgoing: dict[Coord, dict[Coord, list[int]]] = defaultdict(lambda: defaultdict(list))
    incoming: dict[Coord, dict[Coord, list[tuple[int, float]]]] = defaultdict(lambda: defaultdict(list))
    for t in transfers:
        s_block, s_loc = part.local_index(t.src)
        d_block, d_loc = part.local_index(t.dst)
        src, dst = (s_block, s_block), (d_block, d_block)
        if src == dst:
            local[src].append((s_loc, d_loc, t.coef))
        else:
            outgoing[src][dst].append(s_loc)
            incoming[dst][src].append((d_loc, t.coef))
    for c, items in local.items():
        w = workers[c]
        w.local_src = np.array([x[0] for x in items], dtype=int)
        w.local_dst = np.array([x[1] for x in items], dtype=int)
        w.local_coef = np.array([x[2] for x in items], dtype=float)
    for c, per_dst in outgoing.items():
        workers[c].outgoing = {d: np.array(per_dst[d], dtype=int) for d in sorted(per_dst)}
    for c, per_src in incoming.items():
        workers[c].incoming = {
            s: (np.array([x[0] for x in per_src[s]], dtype=int), np.array([x[1] for x in per_src[s]], dtype=float))
            for s in sorted(per_src)
        }
    return ChannelUpdatePlan(part, list(entries), transfers, workers)


def plan_for_model(channels: Sequence[Channel], dt: float, part: BlockPartition) -> ChannelUpdatePlan:
    return build_plan(plan_entries(channels, dt), part)


def apply_all_channels(rho: DistributedMatrix, plan: ChannelUpdatePlan, grid: GridRuntime) -> DistributedMatrix:
    """One first-order step of every channel against a single snapshot of ``rho``."""
    if rho.part != plan.part:
        raise GridError(f"plan was built for {plan.part}, matrix uses {rho.part}")
    if rho.part.grid_side != grid.grid_side:
        raise GridError(f"matrix is split for grid side {rho.part.grid_side}, runtime has {grid.grid_side}")
    old: dict[Coord, np.ndarray] = {}
    new: dict[Coord, np.ndarray] = {}

    def snapshot_and_send(c: Coord) -> None:
        old[c] = rho.blocks[c]
        w = plan.workers[c]
        diag = np.diagonal(old[c])
        for dst, src_locals in w.outgoing.items():
            # all point values bound for one diagonal worker travel in one message
            grid.send(c, dst, diag[src_locals], kind="point")

    def update(c: Coord) -> None:
        w = plan.workers[c]
        o = old[c]
        with grid.mac(c):
            blk = o.copy()
            if w.row_idx.size:
                blk[w.row_idx, :] -= w.row_coef[:, None] * o[w.row_idx, :]
            if w.col_idx.size:
                blk[:, w.col_idx] -= o[:, w.col_idx] * w.col_coef[None, :]
            if w.local_src.size:
                np.add.at(blk, (w.local_dst, w.local_dst), w.local_coef * o[w.local_src, w.local_src])
        for src, (dst_locals, coefs) in w.incoming.items():
            values = grid.recv(c, src)
            with grid.mac(c):
                np.add.at(blk, (dst_locals, dst_locals), coefs * values)
        new[c] = blk

    with grid.in_phase("dissipator"):
        grid.run(snapshot_and_send)
        grid.run(update)
    return DistributedMatrix(rho.part, new)


def apply_channel(rho: DistributedMatrix, entry: PlanEntry, grid: GridRuntime) -> DistributedMatrix:
    return apply_all_channels(rho, build_plan([entry], rho.part), grid)


def count_flops(plan: ChannelUpdatePlan | int, n: int) -> int:
    """Scalar multiply-add count: two point updates and four length-``n`` sweeps per channel."""
    m = plan if isinstance(plan, int) else plan.n_channels
    return m * (4 * n + 2)


def cross_processor_channels(entries: Sequence[PlanEntry], part: BlockPartition,
                             order: Sequence[int] | None = None) -> list[int]:
    """Indices of channels whose forward point transfer crosses workers.

    ``order`` optionally relabels basis index ``k`` to position ``order[k]``,
    for evaluating alternative state orderings.
    """
    pos = (lambda k: k) if order is None else (lambda k: int(order[k]))
    return [k for k, e in enumerate(entries) if part.owner_block(pos(e.i)) != part.owner_block(pos(e.j))]
