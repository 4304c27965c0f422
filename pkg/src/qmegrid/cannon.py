"""Block-distributed matrices, Cannon multiplication and Taylor propagators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import Coord, GridError, GridRuntime
from .tensor import DTYPE, BlockPartition, ShapeError, as_matrix, is_hermitian, partition, reassemble

NORM_GUARD = 0.1


class PropagatorWarning(UserWarning):
    pass


@dataclass
class DistributedMatrix:
    """Square matrix whose block ``(i, j)`` is held by worker ``(i, j)``."""

    part: BlockPartition
    blocks: dict[Coord, np.ndarray]

    @classmethod
    def from_dense(cls, m, grid: GridRuntime) -> DistributedMatrix:
        m = as_matrix(m)
        blocks = partition(m, grid.grid_side)
        return cls(BlockPartition(m.shape[0], grid.grid_side), blocks)

    @classmethod
    def identity(cls, n: int, grid: GridRuntime) -> DistributedMatrix:
        part = BlockPartition(n, grid.grid_side)
        ext = part.extents
        blocks = {(i, j): (np.eye(ext[i], dtype=DTYPE) if i == j else np.zeros((ext[i], ext[j]), dtype=DTYPE))
                  for i, j in part.coords()}
        return cls(part, blocks)

    @property
    def dim(self) -> int:
        return self.part.global_dim

    def to_dense(self) -> np.ndarray:
        return reassemble(self.blocks, self.part)

    def copy(self) -> DistributedMatrix:
        return DistributedMatrix(self.part, {c: b.copy() for c, b in self.blocks.items()})

    def check_compatible(self, other: DistributedMatrix) -> None:
        if self.part != other.part:
            raise ShapeError(f"partition mismatch: {self.part} vs {other.part}")


def _check_grid(m: DistributedMatrix, grid: GridRuntime) -> None:
    if m.part.grid_side != grid.grid_side:
        raise GridError(f"matrix is split for grid side {m.part.grid_side}, runtime has {grid.grid_side}")


def scale(m: DistributedMatrix, factor: complex, grid: GridRuntime) -> DistributedMatrix:
    _check_grid(m, grid)
    out: dict[Coord, np.ndarray] = {}

    def work(c: Coord) -> None:
        with grid.mac(c):
            out[c] = m.blocks[c] * factor

    grid.run(work)
    return DistributedMatrix(m.part, out)


def axpy(y: DistributedMatrix, alpha: complex, x: DistributedMatrix, grid: GridRuntime) -> None:
    """In place ``y += alpha * x``, blockwise on each worker."""
    y.check_compatible(x)
    _check_grid(y, grid)

    def work(c: Coord) -> None:
        with grid.mac(c):
            y.blocks[c] += alpha * x.blocks[c]

    grid.run(work)


def cannon_multiply(a: DistributedMatrix, b: DistributedMatrix, grid: GridRuntime) -> DistributedMatrix:
    """``a @ b`` by Cannon's algorithm: skew, then ``p_x`` multiply-accumulate rounds with cyclic shifts."""
    a.check_compatible(b)
    _check_grid(a, grid)
    p = grid.grid_side
    part = a.part
    dims = part.block_dims

    a_place = {c: (("A", *c), a.blocks[c]) for c in part.coords()}
    b_place = {c: (("B", *c), b.blocks[c]) for c in part.coords()}
    a_place, b_place = grid.initial_align(a_place, b_place)

    acc = {c: np.zeros(dims[c], dtype=DTYPE) for c in part.coords()}

    def multiply_accumulate(c: Coord) -> None:
        with grid.mac(c):
            acc[c] += a_place[c][1] @ b_place[c][1]

    for step in range(p):
        grid.run(multiply_accumulate)
        if step < p - 1:
            a_place = grid.cyclic_shift("left", a_place)
            b_place = grid.cyclic_shift("up", b_place)
    return DistributedMatrix(part, acc)


def cannon_chain(matrices: list[DistributedMatrix], grid: GridRuntime) -> DistributedMatrix:
    """Right-nested product ``M1 (M2 (... Mk))``."""
    if not matrices:
        raise ValueError("cannon_chain needs at least one matrix")
    result = matrices[-1]
    for m in reversed(matrices[:-1]):
        result = cannon_multiply(m, result, grid)
    return result


def cannon_power(m: DistributedMatrix, k: int, grid: GridRuntime) -> DistributedMatrix:
    if k < 1:
        raise ValueError(f"power must be >= 1, got {k}")
    return cannon_chain([m] * k, grid)


@dataclass
class PropagatorPair:
    L: DistributedMatrix
    R: DistributedMatrix
    k_max: int
    dt: float


def _taylor_series(h: DistributedMatrix, coeff: complex, k_max: int, grid: GridRuntime) -> DistributedMatrix:
    # powers built incrementally: k_max - 1 distributed multiplies in total
    base = scale(h, coeff, grid)
    series = DistributedMatrix.identity(h.dim, grid)
    axpy(series, 1.0, base, grid)
    power = base
    for k in range(2, k_max + 1):
        power = cannon_multiply(power, base, grid)
        axpy(series, 1.0 / math.factorial(k), power, grid)
    return series


def build_propagators(h, dt: float, k_max: int, grid: GridRuntime, hbar: float = 1.0,
                      strict: bool = False) -> PropagatorPair:
    """Truncated Taylor series for ``exp(-i H dt / hbar)`` (``L``) and ``exp(+i H dt / hbar)`` (``R``).

    Args:
        h: Hamiltonian, dense or already distributed on ``grid``.
        dt: Time step.
        k_max: Highest retained order.
        grid: Runtime that executes the distributed multiplies.
        hbar: Reduced Planck constant in the caller's units.
        strict: Raise instead of warn on a non-Hermitian ``h``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    hd = h if isinstance(h, DistributedMatrix) else DistributedMatrix.from_dense(h, grid)
    dense = hd.to_dense()
    if not is_hermitian(dense, tol=1e-12):
        msg = "Hamiltonian is not Hermitian; R will not be the adjoint of L"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, PropagatorWarning, stacklevel=2)
    h_max = float(np.max(np.abs(dense))) if dense.size else 0.0
    if h_max * dt / hbar > NORM_GUARD:
        warnings.warn(f"max|H| dt / hbar = {h_max * dt / hbar:.3g} exceeds {NORM_GUARD}; "
                      "Taylor truncation quality degrades", PropagatorWarning, stacklevel=2)

    with grid.in_phase("propagators"):
        left = _taylor_series(hd, -1j * dt / hbar, k_max, grid)
        right = _taylor_series(hd, 1j * dt / hbar, k_max, grid)
    return PropagatorPair(left, right, k_max, dt)


def unitary_step(rho: DistributedMatrix, props: PropagatorPair, grid: GridRuntime) -> DistributedMatrix:
    """``L rho R`` as two Cannon multiplies (``L (rho R)``)."""
    rho.check_compatible(props.L)
    with grid.in_phase("unitary"):
        return cannon_chain([props.L, rho, props.R], grid)
