"""Single-worker dense reference solver.

Nothing here reuses the distributed path: the propagator is a plain Taylor
loop, jump operators are materialized as dense matrices and the dissipator is
evaluated with full matrix products. The full tensor-product constructions
(Hamiltonian, loss operators, reachability) work directly on 4**n_at integer
words and serve as checks for the subspace and model builders.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .model import Channel

ORACLE_CAP = 256


class OracleCapError(ValueError):
    pass


def taylor_exp(h: np.ndarray, dt: float, k_max: int, sign: float = -1.0, hbar: float = 1.0) -> np.ndarray:
    """``sum_k (sign * i * H dt / hbar)^k / k!`` for ``k <= k_max``, term by term."""
    n = h.shape[0]
    x = (sign * 1j * dt / hbar) * np.asarray(h, dtype=complex)
    term = np.eye(n, dtype=complex)
    total = term.copy()
    for k in range(1, k_max + 1):
        term = term @ x / k
        total = total + term
    return total


def jump_operator(n: int, i: int, j: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=complex)
    a[j, i] = 1.0
    return a


def dense_dissipator(rho: np.ndarray, channels: Sequence[Channel]) -> np.ndarray:
    """``sum_k gamma_k D[A_k] rho + gamma'_k D[A_k^dagger] rho`` with explicit matrix products."""
    n = rho.shape[0]
    out = np.zeros_like(rho, dtype=complex)
    for ch in channels:
        a = jump_operator(n, ch.i, ch.j)
        ad = a.conj().T
        ada = ad @ a
        aad = a @ ad
        out += ch.gamma * (a @ rho @ ad - 0.5 * (rho @ ada + ada @ rho))
        if ch.gamma_prime:
            out += ch.gamma_prime * (ad @ rho @ a - 0.5 * (rho @ aad + aad @ rho))
    return out


def dense_step(rho: np.ndarray, h: np.ndarray, channels: Sequence[Channel], dt: float, k_max: int,
               hbar: float = 1.0, cap: int = ORACLE_CAP) -> np.ndarray:
    """Unitary Taylor step followed by one Euler step of the dissipator."""
    n = rho.shape[0]
    if n > cap:
        raise OracleCapError(f"dimension {n} exceeds oracle cap {cap}")
    u = taylor_exp(h, dt, k_max, -1.0, hbar)
    rho_t = u @ rho @ u.conj().T
    return rho_t + (dt / hbar) * dense_dissipator(rho_t, channels)


def dense_dissipator_step(rho: np.ndarray, channels: Sequence[Channel], dt: float, hbar: float = 1.0) -> np.ndarray:
    return rho + (dt / hbar) * dense_dissipator(rho, channels)


@dataclass
class OracleResult:
    times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    traces: list[float] = field(default_factory=list)
    hermiticity: list[float] = field(default_factory=list)
    populations: list[np.ndarray] = field(default_factory=list)
    final: np.ndarray | None = None


def sector_populations(rho: np.ndarray, excitations: Sequence[int]) -> np.ndarray:
    exc = np.asarray(excitations)
    diag = np.real(np.diagonal(rho))
    return np.array([diag[exc == k].sum() for k in range(int(exc.max()) + 1)])


def iterate_oracle(rho0: np.ndarray, h: np.ndarray, channels: Sequence[Channel], dt: float, steps: int,
                   k_max: int, hbar: float = 1.0, cap: int = ORACLE_CAP) -> Iterator[np.ndarray]:
    """Yield the dense state at steps ``0..steps``."""
    rho = np.array(rho0, dtype=complex)
    if rho.shape[0] > cap:
        raise OracleCapError(f"dimension {rho.shape[0]} exceeds oracle cap {cap}")
    u = taylor_exp(h, dt, k_max, -1.0, hbar)
    ud = u.conj().T
    yield rho
    for _ in range(steps):
        rho_t = u @ rho @ ud
        rho = rho_t + (dt / hbar) * dense_dissipator(rho_t, channels)
        yield rho


def run_oracle(rho0: np.ndarray, h: np.ndarray, channels: Sequence[Channel], dt: float, steps: int,
               k_max: int, excitations: Sequence[int], hbar: float = 1.0, keep_snapshots: bool = True,
               cap: int = ORACLE_CAP) -> OracleResult:
    res = OracleResult()
    for step, rho in enumerate(iterate_oracle(rho0, h, channels, dt, steps, k_max, hbar, cap)):
        res.times.append(step * dt)
        if keep_snapshots:
            res.snapshots.append(rho)
        res.traces.append(float(np.real(np.trace(rho))))
        res.hermiticity.append(float(np.max(np.abs(rho - rho.conj().T))))
        res.populations.append(sector_populations(rho, excitations))
        res.final = rho
    return res


# -- full tensor-product space -------------------------------------------------

_A = np.array([[0, 1], [0, 0]], dtype=complex)  # annihilation on a 2-level (0/1) mode
_I2 = np.eye(2, dtype=complex)


def _embed(local: np.ndarray, atom: int, n_at: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for k in range(n_at):
        out = np.kron(out, local if k == atom else np.eye(4, dtype=complex))
    return out


def full_space_operators(n_at: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-atom photon annihilators ``a_i`` and lowering operators ``sigma_i`` on the 4**n_at space.

    Each atom's local space is photon (x) level, so local index ``2p + l``
    matches the encoded word of that atom.
    """
    a_loc = np.kron(_A, _I2)
    s_loc = np.kron(_I2, _A)
    return ([_embed(a_loc, k, n_at) for k in range(n_at)], [_embed(s_loc, k, n_at) for k in range(n_at)])


def full_space_hamiltonian(n_at: int, hbar_omega: float, g: float) -> np.ndarray:
    a, s = full_space_operators(n_at)
    h = np.zeros((4**n_at, 4**n_at), dtype=complex)
    for ai, si in zip(a, s):
        h += hbar_omega * ai.conj().T @ ai + hbar_omega * si.conj().T @ si
        h += g * (ai.conj().T @ si + ai @ si.conj().T)
    return h


def project(op: np.ndarray, words: Sequence[int]) -> np.ndarray:
    idx = np.asarray(words)
    return op[np.ix_(idx, idx)]


def brute_force_reachable(n_at: int, initial_word: int, loss: bool = True) -> list[int]:
    """Words reachable from ``initial_word`` over the whole 4**n_at space.

    Edges are the nonzero off-diagonal actions of the coupling terms
    ``a_i^dagger sigma_i`` and ``a_i sigma_i^dagger`` and, with ``loss``, of
    ``a_i``; computed on integer words with the one-photon truncation.
    """
    total = 4**n_at

    def neighbours(w: int) -> list[int]:
        out = []
        for atom in range(n_at):
            shift = 2 * (n_at - 1 - atom)
            p, l = (w >> (shift + 1)) & 1, (w >> shift) & 1
            base = w & ~(0b11 << shift)
            if p == 0 and l == 1:
                out.append(base | (0b10 << shift))
            if p == 1 and l == 0:
                out.append(base | (0b01 << shift))
            if loss and p == 1:
                out.append(base | (l << shift))
        return out

    adjacency = [neighbours(w) for w in range(total)]
    seen = {initial_word}
    queue = deque([initial_word])
    while queue:
        w = queue.popleft()
        for nxt in adjacency[w]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return sorted(seen)
