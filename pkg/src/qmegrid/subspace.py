"""Reachable-state basis construction.

A basis state assigns each atom a two-bit letter ``(p, l)``: ``p`` free
photons (0 or 1) and electron level ``l`` (0 ground, 1 excited). Atom 0 is the
most significant letter of the encoded word, so for one atom the ascending
order is ``|00>, |01>, |10>, |11>``.

The subspace is the closure of an initial state under per-atom rewrite
rules. A rule may be marked as the reverse of another rule; it then only
walks back along edges already produced by that rule, which is how an influx
channel pairs with its loss channel.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

Letter = tuple[int, int]
ALPHABET: frozenset[Letter] = frozenset({(0, 0), (0, 1), (1, 0), (1, 1)})


class MoveError(ValueError):
    """A rewrite rule leaves the per-atom alphabet."""


@dataclass(frozen=True, order=True)
class BasisState:
    letters: tuple[Letter, ...]

    def __post_init__(self) -> None:
        for letter in self.letters:
            if tuple(letter) not in ALPHABET:
                raise MoveError(f"letter {letter} is outside the (photon, level) alphabet")

    @property
    def n_at(self) -> int:
        return len(self.letters)

    @property
    def word(self) -> int:
        w = 0
        for p, l in self.letters:
            w = (w << 2) | (p << 1) | l
        return w

    @classmethod
    def from_word(cls, word: int, n_at: int) -> BasisState:
        if not 0 <= word < 4**n_at:
            raise ValueError(f"word {word} does not fit {n_at} atoms")
        letters = []
        for shift in range(2 * (n_at - 1), -1, -2):
            bits = (word >> shift) & 0b11
            letters.append((bits >> 1, bits & 1))
        return cls(tuple(letters))

    @classmethod
    def all_excited(cls, n_at: int) -> BasisState:
        """Every atom excited, no photons."""
        return cls(((0, 1),) * n_at)

    def replace(self, atom: int, letter: Letter) -> BasisState:
        letters = list(self.letters)
        letters[atom] = letter
        return BasisState(tuple(letters))

    def label(self) -> str:
        return "|" + "".join(f"{p}{l}" for p, l in self.letters) + ">"


def excitation_number(state: BasisState) -> int:
    return sum(p + l for p, l in state.letters)


@dataclass(frozen=True)
class Move:
    """Per-atom rewrite ``src -> dst``.

    With ``reverses`` set, the move only undoes edges produced by the named
    move instead of firing wherever ``src`` appears.
    """

    name: str
    src: Letter
    dst: Letter
    reverses: str | None = None

    def __post_init__(self) -> None:
        for letter in (self.src, self.dst):
            if tuple(letter) not in ALPHABET:
                raise MoveError(f"move {self.name!r} uses letter {letter} outside the alphabet")


def tcm_moves(influx: bool = False) -> list[Move]:
    """Photon exchange and photon loss at every atom; influx undoes losses."""
    moves = [
        Move("emit", (0, 1), (1, 0)),
        Move("absorb", (1, 0), (0, 1)),
        Move("loss", (1, 0), (0, 0)),
        Move("loss", (1, 1), (0, 1)),
    ]
    if influx:
        moves += [
            Move("influx", (0, 0), (1, 0), reverses="loss"),
            Move("influx", (0, 1), (1, 1), reverses="loss"),
        ]
    return moves


@dataclass(frozen=True)
class Subspace:
    n_at: int
    states: tuple[BasisState, ...]
    index: dict[BasisState, int] = field(repr=False, compare=False)

    @classmethod
    def from_states(cls, n_at: int, states: Iterable[BasisState]) -> Subspace:
        ordered = tuple(sorted(set(states), key=lambda s: s.word))
        return cls(n_at, ordered, {s: k for k, s in enumerate(ordered)})

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def full_dim(self) -> int:
        return 4**self.n_at

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, state: BasisState) -> bool:
        return state in self.index

    def words(self) -> list[int]:
        return [s.word for s in self.states]

    def excitations(self) -> list[int]:
        return [excitation_number(s) for s in self.states]

    def export(self) -> str:
        """One line per state: index, encoded word in binary, label, excitation."""
        width = 2 * self.n_at
        lines = [f"# n_at={self.n_at} dim={self.dim} full_dim={self.full_dim}"]
        for k, s in enumerate(self.states):
            lines.append(f"{k}\t{s.word:0{width}b}\t{s.label()}\t{excitation_number(s)}")
        return "\n".join(lines) + "\n"


def _forward_targets(state: BasisState, move: Move) -> list[BasisState]:
    return [state.replace(a, move.dst) for a, letter in enumerate(state.letters) if letter == move.src]


def generate_subspace(n_at: int, initial: BasisState, moves: Sequence[Move]) -> Subspace:
    """Breadth-first closure of ``{initial}`` under ``moves``."""
    if n_at < 1:
        raise ValueError(f"n_at must be >= 1, got {n_at}")
    if initial.n_at != n_at:
        raise ValueError(f"initial state has {initial.n_at} atoms, expected {n_at}")
    free = [m for m in moves if m.reverses is None]
    reverse = [m for m in moves if m.reverses is not None]
    known = {m.name for m in free}
    for m in reverse:
        if m.reverses not in known:
            raise MoveError(f"move {m.name!r} reverses unknown move {m.reverses!r}")

    # A reverse move only walks an existing edge back to its source, and every
    # edge source is already in the set, so reverse moves never add states.
    seen = {initial}
    queue = deque([initial])
    while queue:
        state = queue.popleft()
        for move in free:
            for nxt in _forward_targets(state, move):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
    return Subspace.from_states(n_at, seen)


def tcm_subspace(n_at: int, influx: bool = False) -> Subspace:
    return generate_subspace(n_at, BasisState.all_excited(n_at), tcm_moves(influx))


def dimension_ratio(reduced_dim: int, full_dim: int) -> float:
    _check_dims(reduced_dim, full_dim)
    return reduced_dim / full_dim


def memory_ratio(reduced_dim: int, full_dim: int) -> float:
    """Dense-matrix memory of the reduced basis relative to the full one."""
    _check_dims(reduced_dim, full_dim)
    return (reduced_dim / full_dim) ** 2


def _check_dims(reduced_dim: int, full_dim: int) -> None:
    if reduced_dim < 1 or full_dim < 1:
        raise ValueError("dimensions must be positive")
    if reduced_dim > full_dim:
        raise ValueError(f"reduced dimension {reduced_dim} exceeds full dimension {full_dim}")
