"""Tavis-Cummings Hamiltonian (rotating-wave form) and photon-leak channels.

Each atom carries its own single photon mode. Internal units take hbar = 1;
energies are in units of the excitation energy E = hbar*omega unless the caller
picks otherwise, and rates gamma are stored as energies (rate times hbar).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .subspace import BasisState, Subspace, excitation_number
from .tensor import DTYPE


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    n_at: int
    hbar_omega: float = 1.0
    g: float = 0.1
    gamma: float = 0.5
    gamma_prime: float = 0.0
    hbar: float = 1.0

    def __post_init__(self) -> None:
        if self.n_at < 1:
            raise ModelError(f"n_at must be >= 1, got {self.n_at}")
        if self.hbar_omega < 0 or self.g < 0:
            raise ModelError("hbar_omega and g must be non-negative")
        if self.hbar <= 0:
            raise ModelError("hbar must be positive")
        if self.gamma < 0 or self.gamma_prime < 0:
            raise ModelError("rates must be non-negative")
        if self.gamma_prime > 0 and not self.gamma_prime < self.gamma:
            raise ModelError(f"influx rate {self.gamma_prime} must be below dissipation rate {self.gamma}")

    @classmethod
    def from_ratios(cls, n_at: int, g_over_E: float, gamma_dt: float, gamma_prime_dt: float,
                    dt: float, energy: float = 1.0) -> ModelParams:
        """Build from the dimensionless groups used in run configs (hbar = 1)."""
        if dt <= 0:
            raise ModelError(f"dt must be positive, got {dt}")
        return cls(n_at=n_at, hbar_omega=energy, g=g_over_E * energy,
                   gamma=gamma_dt / dt, gamma_prime=gamma_prime_dt / dt)


@dataclass(frozen=True)
class Channel:
    """Jump ``|j><i|`` (source ``i`` to target ``j``) with its reverse influx."""

    i: int
    j: int
    gamma: float
    gamma_prime: float = 0.0
    atom: int = -1

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise ModelError(f"channel source and target coincide ({self.i})")
        if self.i < 0 or self.j < 0:
            raise ModelError(f"negative channel index ({self.i}, {self.j})")


def _partner(letter: tuple[int, int]) -> tuple[int, int] | None:
    if letter == (0, 1):
        return (1, 0)
    if letter == (1, 0):
        return (0, 1)
    return None


def build_hamiltonian(params: ModelParams, space: Subspace) -> np.ndarray:
    """Dense RWA Hamiltonian on ``space``.

    Diagonal: ``hbar_omega`` times the excitation number. Off-diagonal ``g``
    between states that differ at one atom by ``(0,1) <-> (1,0)``.
    """
    if space.n_at != params.n_at:
        raise ModelError(f"subspace has {space.n_at} atoms, model has {params.n_at}")
    n = space.dim
    h = np.zeros((n, n), dtype=DTYPE)
    for r, state in enumerate(space.states):
        if (1, 1) in state.letters:
            raise ModelError(f"state {state.label()} has a photon on an excited atom; "
                             "the one-photon truncation cannot represent its coupling")
        h[r, r] = params.hbar_omega * excitation_number(state)
        for atom, letter in enumerate(state.letters):
            other = _partner(letter)
            if other is None:
                continue
            c = space.index.get(state.replace(atom, other))
            if c is not None:
                h[r, c] = params.g
    if not np.array_equal(h, h.conj().T):
        raise ModelError("subspace is not closed under photon exchange; Hamiltonian is not Hermitian")
    return h


def build_channels(params: ModelParams, space: Subspace,
                   overrides: Mapping[tuple[int, int], tuple[float, float]] | None = None) -> list[Channel]:
    """One photon-loss channel per (state, atom) with a photon at that atom.

    ``overrides`` maps ``(i, j)`` to a per-channel ``(gamma, gamma_prime)``.
    """
    if space.n_at != params.n_at:
        raise ModelError(f"subspace has {space.n_at} atoms, model has {params.n_at}")
    overrides = dict(overrides or {})
    channels = []
    for i, state in enumerate(space.states):
        for atom, (p, l) in enumerate(state.letters):
            if p != 1:
                continue
            target: BasisState = state.replace(atom, (0, l))
            j = space.index.get(target)
            if j is None:
                raise ModelError(f"loss target {target.label()} of {state.label()} is not in the subspace")
            gamma, gamma_prime = overrides.pop((i, j), (params.gamma, params.gamma_prime))
            channels.append(Channel(i, j, gamma, gamma_prime, atom))
    if overrides:
        raise ModelError(f"rate overrides name unknown channels: {sorted(overrides)}")
    return channels
