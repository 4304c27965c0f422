"""Logical ``p_x x p_x`` processor grid with in-process message passing.

Workers are addressed by grid coordinate ``(row, col)``; block ``(i, j)`` of a
partitioned matrix lives on worker ``(i, j)``. Work is issued in lockstep
steps: :meth:`GridRuntime.run` calls a function once per worker and returns
only when all of them have finished, which is the barrier between steps.
Messages travel through per-pair FIFO mailboxes and are copied on send, so a
receiver never aliases the sender's memory.

Every worker keeps its own clocks, bucketed by the current phase label:
``mac`` (local multiply-accumulate), ``comm`` (send/receive) and ``total``
(everything the worker did inside :meth:`GridRuntime.run`).
"""

from __future__ import annotations

import json
import time
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Literal, Mapping

import numpy as np

from .tensor import BlockPartition

Coord = tuple[int, int]
SUPPORTED_SIDES = (1, 2, 4, 8, 16)


class GridError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridConfig:
    grid_side: int

    def __post_init__(self) -> None:
        if self.grid_side < 1:
            raise GridError(f"grid side must be >= 1, got {self.grid_side}")

    @property
    def worker_count(self) -> int:
        return self.grid_side**2

    def coords(self) -> list[Coord]:
        return [(i, j) for i in range(self.grid_side) for j in range(self.grid_side)]


@dataclass(frozen=True)
class CommEvent:
    phase: str
    kind: str
    src: Coord
    dst: Coord
    size: int


@dataclass
class ProcessorTiming:
    coord: Coord
    mac_time: float = 0.0
    comm_time: float = 0.0
    total_time: float = 0.0


@dataclass
class TimingReport:
    grid_side: int
    phase: str
    records: list[ProcessorTiming]
    comm_events: int = 0

    @property
    def max_total(self) -> float:
        """Parallel wall time: the slowest worker's total."""
        return max((r.total_time for r in self.records), default=0.0)

    @property
    def mean_mac(self) -> float:
        return float(np.mean([r.mac_time for r in self.records])) if self.records else 0.0

    @property
    def max_mac(self) -> float:
        return max((r.mac_time for r in self.records), default=0.0)

    @property
    def mean_comm(self) -> float:
        return float(np.mean([r.comm_time for r in self.records])) if self.records else 0.0

    def record(self, coord: Coord) -> ProcessorTiming:
        for r in self.records:
            if r.coord == coord:
                return r
        raise KeyError(coord)

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid_side": self.grid_side,
            "phase": self.phase,
            "comm_events": self.comm_events,
            "aggregate": {
                "max_total_time": self.max_total,
                "mean_mac_time": self.mean_mac,
                "mean_comm_time": self.mean_comm,
            },
            "processors": [
                {"row": r.coord[0], "col": r.coord[1], "mac_time": r.mac_time,
                 "comm_time": r.comm_time, "total_time": r.total_time}
                for r in self.records
            ],
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TimingReport:
        records = [ProcessorTiming((p["row"], p["col"]), p["mac_time"], p["comm_time"], p["total_time"])
                   for p in data["processors"]]
        return cls(data["grid_side"], data["phase"], records, data.get("comm_events", 0))

    @classmethod
    def from_text(cls, text: str) -> TimingReport:
        return cls.from_dict(json.loads(text))


@dataclass
class _Clock:
    mac: float = 0.0
    comm: float = 0.0
    total: float = 0.0


Placement = dict[Coord, tuple[Any, np.ndarray]]


def _copy_payload(payload: Any) -> tuple[Any, int]:
    """Deep-copy array content of a message and count its entries."""
    if isinstance(payload, np.ndarray):
        return payload.copy(), int(payload.size)
    if isinstance(payload, tuple):
        parts = [_copy_payload(x) for x in payload]
        return tuple(x for x, _ in parts), sum(n for _, n in parts)
    return payload, 0


@dataclass
class GridRuntime:
    """In-process message-passing grid.

    ``executor="threads"`` runs the workers of each step on a thread pool;
    ``"serial"`` runs them one after another in row-major order. Results are
    identical either way because each worker's arithmetic only touches its
    own data and mailboxes are FIFO per sender/receiver pair.
    """

    grid_side: int
    executor: Literal["serial", "threads"] = "serial"
    config: GridConfig = field(init=False)
    events: list[CommEvent] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        self.config = GridConfig(self.grid_side)
        if self.executor not in ("serial", "threads"):
            raise GridError(f"unknown executor {self.executor!r}")
        self._mailboxes: dict[tuple[Coord, Coord], deque] = defaultdict(deque)
        self._clocks: dict[str, dict[Coord, _Clock]] = defaultdict(lambda: {c: _Clock() for c in self.coords()})
        self._phase = "idle"
        self._pool: ThreadPoolExecutor | None = None

    # -- topology -----------------------------------------------------------

    @property
    def p(self) -> int:
        return self.config.worker_count

    def coords(self) -> list[Coord]:
        return self.config.coords()

    def diagonal_owner(self, part: BlockPartition, index: int) -> Coord:
        """Worker holding global diagonal element ``(index, index)``."""
        self._check_partition(part)
        b = part.owner_block(index)
        return (b, b)

    def _check_partition(self, part: BlockPartition) -> None:
        if part.grid_side != self.grid_side:
            raise GridError(f"partition has grid side {part.grid_side}, runtime has {self.grid_side}")

    # -- phases, execution, clocks ------------------------------------------

    @property
    def phase(self) -> str:
        return self._phase

    @contextmanager
    def in_phase(self, name: str) -> Iterator[None]:
        previous, self._phase = self._phase, name
        try:
            yield
        finally:
            self._phase = previous

    def run(self, fn: Callable[[Coord], Any], coords: list[Coord] | None = None) -> dict[Coord, Any]:
        """Run ``fn`` once per worker and wait for all of them (one lockstep step)."""
        coords = self.coords() if coords is None else coords
        clocks = self._clocks[self._phase]

        def timed(c: Coord) -> Any:
            t0 = time.perf_counter()
            try:
                return fn(c)
            finally:
                clocks[c].total += time.perf_counter() - t0

        if self.executor == "threads" and len(coords) > 1:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=self.p, thread_name_prefix="qmegrid-worker")
            return dict(zip(coords, self._pool.map(timed, coords)))
        return {c: timed(c) for c in coords}

    @contextmanager
    def mac(self, coord: Coord) -> Iterator[None]:
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self._clocks[self._phase][coord].mac += time.perf_counter() - t0

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def reset(self) -> None:
        """Drop all clocks, events and undelivered messages."""
        self._clocks.clear()
        self.events.clear()
        self._mailboxes.clear()

    # -- messaging ----------------------------------------------------------

    def send(self, src: Coord, dst: Coord, payload: Any, kind: str = "block") -> None:
        t0 = time.perf_counter()
        data, size = _copy_payload(payload)
        self._mailboxes[(src, dst)].append(data)
        self.events.append(CommEvent(self._phase, kind, src, dst, size))
        self._clocks[self._phase][src].comm += time.perf_counter() - t0

    def recv(self, dst: Coord, src: Coord) -> Any:
        t0 = time.perf_counter()
        box = self._mailboxes.get((src, dst))
        if not box:
            raise GridError(f"worker {dst} expected a message from {src} but none was sent")
        data = box.popleft()
        self._clocks[self._phase][dst].comm += time.perf_counter() - t0
        return data

    def pending_messages(self) -> int:
        return sum(len(box) for box in self._mailboxes.values())

    # -- block movement -----------------------------------------------------

    def _move(self, place: Placement, dest: Callable[[Coord], Coord], kind: str) -> Placement:
        """Send every block to ``dest(coord)``; blocks that stay put are not messaged."""
        missing = set(self.coords()) - set(place)
        if missing:
            raise GridError(f"no block placed on workers {sorted(missing)}")
        sources = {dest(c): c for c in place}

        def send_phase(c: Coord) -> None:
            d = dest(c)
            if d != c:
                self.send(c, d, place[c], kind)

        def recv_phase(c: Coord) -> tuple[Any, np.ndarray]:
            s = sources[c]
            return place[c] if s == c else self.recv(c, s)

        self.run(send_phase)
        return self.run(recv_phase)

    def initial_align(self, a_place: Placement, b_place: Placement) -> tuple[Placement, Placement]:
        """Skew for Cannon: row ``i`` of A moves left by ``i``, column ``j`` of B moves up by ``j``."""
        p = self.grid_side
        a = self._move(a_place, lambda c: (c[0], (c[1] - c[0]) % p), "align")
        b = self._move(b_place, lambda c: ((c[0] - c[1]) % p, c[1]), "align")
        return a, b

    def cyclic_shift(self, direction: Literal["left", "up"], place: Placement) -> Placement:
        p = self.grid_side
        if direction == "left":
            return self._move(place, lambda c: (c[0], (c[1] - 1) % p), "shift")
        if direction == "up":
            return self._move(place, lambda c: ((c[0] - 1) % p, c[1]), "shift")
        raise GridError(f"unknown shift direction {direction!r}")

    def point_transfer(self, part: BlockPartition, src_index: tuple[int, int], dst_index: tuple[int, int],
                       value: complex) -> complex:
        """Deliver a diagonal element's value to the owner of another diagonal element.

        A message (and comm event) is generated only when the two owners differ.
        """
        for idx in (src_index, dst_index):
            if idx[0] != idx[1]:
                raise GridError(f"point transfers connect diagonal elements, got {idx}")
        src = self.diagonal_owner(part, src_index[0])
        dst = self.diagonal_owner(part, dst_index[0])
        if src == dst:
            return value
        self.send(src, dst, np.asarray([value]), kind="point")
        return complex(self.recv(dst, src)[0])

    # -- reporting ----------------------------------------------------------

    def phase_events(self, phase: str | None = None) -> list[CommEvent]:
        return [e for e in self.events if phase is None or e.phase == phase]

    def collect_timing(self, phase: str | None = None) -> TimingReport:
        """Per-worker clocks for one phase, or summed over all phases."""
        phases = list(self._clocks) if phase is None else [phase]
        records = []
        for c in self.coords():
            rec = ProcessorTiming(c)
            for ph in phases:
                clock = self._clocks[ph][c] if ph in self._clocks else _Clock()
                rec.mac_time += clock.mac
                rec.comm_time += clock.comm
                rec.total_time += clock.total
            records.append(rec)
        return TimingReport(self.grid_side, phase or "all", records, len(self.phase_events(phase)))

    def event_summary(self) -> dict[str, Any]:
        by_kind: dict[str, int] = defaultdict(int)
        for e in self.events:
            by_kind[f"{e.phase}/{e.kind}"] += 1
        return dict(by_kind)

