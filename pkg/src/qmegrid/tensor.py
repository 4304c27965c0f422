"""Dense complex matrices and their block partition over a square grid.

Matrices are plain ``numpy`` arrays of dtype ``complex128`` in row-major
order. Block extents follow a fixed remainder rule so that the same matrix
always lands on the same processors: for ``N`` rows split ``p`` ways, the
first ``N mod p`` blocks get ``ceil(N / p)`` rows and the rest ``floor(N / p)``.

Serialized text format (``write_matrix`` / ``read_matrix``)::

    qmegrid-matrix 1
    <rows> <cols>
    <re> <im> <re> <im> ...      # one line per row, row-major

Values are written with 17 significant digits so a round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

DTYPE = np.complex128
MATRIX_MAGIC = "qmegrid-matrix 1"

BlockCoord = tuple[int, int]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class PartitionError(ValueError):
    """A block set does not tile its partition."""


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=DTYPE)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def mat_add(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot add matrices of shapes {a.shape} and {b.shape}")
    return a + b


def mat_mul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply matrices of shapes {a.shape} and {b.shape}")
    return a @ b


def dagger(m) -> np.ndarray:
    return as_matrix(m).conj().T


def hermiticity_defect(m) -> float:
    """Largest elementwise magnitude of ``m - m^dagger``."""
    m = as_matrix(m)
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(m - m.conj().T)))


def is_hermitian(m, tol: float = 1e-12) -> bool:
    m = as_matrix(m)
    return m.shape[0] == m.shape[1] and hermiticity_defect(m) <= tol


def split_extents(n: int, parts: int) -> list[int]:
    """Extents of ``parts`` consecutive segments covering ``n`` items."""
    if parts < 1:
        raise PartitionError(f"grid side must be >= 1, got {parts}")
    if parts > n:
        raise PartitionError(f"grid side {parts} exceeds matrix dimension {n}")
    base, extra = divmod(n, parts)
    return [base + 1 if k < extra else base for k in range(parts)]


@dataclass(frozen=True)
class BlockPartition:
    """Square split of an ``N x N`` matrix into ``grid_side**2`` blocks."""

    global_dim: int
    grid_side: int

    def __post_init__(self) -> None:
        if self.global_dim < 1:
            raise PartitionError(f"dimension must be positive, got {self.global_dim}")
        split_extents(self.global_dim, self.grid_side)

    @property
    def extents(self) -> list[int]:
        return split_extents(self.global_dim, self.grid_side)

    @property
    def offsets(self) -> list[int]:
        return [0, *np.cumsum(self.extents).tolist()]

    @property
    def block_dims(self) -> dict[BlockCoord, tuple[int, int]]:
        ext = self.extents
        return {(i, j): (ext[i], ext[j]) for i in range(self.grid_side) for j in range(self.grid_side)}

    def coords(self) -> list[BlockCoord]:
        return [(i, j) for i in range(self.grid_side) for j in range(self.grid_side)]

    def span(self, block: int) -> slice:
        off = self.offsets
        return slice(off[block], off[block + 1])

    def owner_block(self, index: int) -> int:
        """Block row (or column) holding global row (or column) ``index``."""
        if not 0 <= index < self.global_dim:
            raise IndexError(f"index {index} outside 0..{self.global_dim - 1}")
        return int(np.searchsorted(self.offsets, index, side="right") - 1)

    def local_index(self, index: int) -> tuple[int, int]:
        block = self.owner_block(index)
        return block, index - self.offsets[block]


def partition(m, grid_side: int) -> dict[BlockCoord, np.ndarray]:
    """Split a square matrix into ``grid_side x grid_side`` blocks keyed by block coordinate."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"partition needs a square matrix, got shape {m.shape}")
    part = BlockPartition(m.shape[0], grid_side)
    return {(i, j): m[part.span(i), part.span(j)].copy() for i, j in part.coords()}


def reassemble(blocks: Mapping[BlockCoord, np.ndarray] | Iterable[tuple[BlockCoord, np.ndarray]],
               part: BlockPartition) -> np.ndarray:
    """Inverse of :func:`partition`.

    ``blocks`` may be a mapping or an iterable of ``(coord, block)`` pairs; the
    latter form is checked for duplicate coordinates.
    """
    items = list(blocks.items()) if isinstance(blocks, Mapping) else list(blocks)
    seen: set[BlockCoord] = set()
    for coord, _ in items:
        if coord in seen:
            raise PartitionError(f"duplicate block coordinate {coord}")
        seen.add(coord)
    expected = set(part.coords())
    if seen != expected:
        missing = sorted(expected - seen)
        extra = sorted(seen - expected)
        raise PartitionError(f"block set does not tile the partition (missing {missing}, unexpected {extra})")

    out = np.empty((part.global_dim, part.global_dim), dtype=DTYPE)
    dims = part.block_dims
    for (i, j), block in items:
        block = np.asarray(block, dtype=DTYPE)
        if block.shape != dims[(i, j)]:
            raise PartitionError(f"block {(i, j)} has shape {block.shape}, expected {dims[(i, j)]}")
        out[part.span(i), part.span(j)] = block
    return out


def format_matrix(m) -> str:
    m = as_matrix(m)
    lines = [MATRIX_MAGIC, f"{m.shape[0]} {m.shape[1]}"]
    for row in m:
        lines.append(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != MATRIX_MAGIC:
        raise ValueError("not a qmegrid matrix file (bad header)")
    rows, cols = (int(x) for x in lines[1].split())
    body = lines[2:]
    if len(body) != rows:
        raise ValueError(f"header declares {rows} rows, found {len(body)}")
    out = np.empty((rows, cols), dtype=DTYPE)
    for r, line in enumerate(body):
        vals = [float(x) for x in line.split()]
        if len(vals) != 2 * cols:
            raise ValueError(f"row {r} has {len(vals) // 2} entries, expected {cols}")
        out[r] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    return out


def write_matrix(path: str | Path, m) -> None:
    Path(path).write_text(format_matrix(m))


def read_matrix(path: str | Path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())
