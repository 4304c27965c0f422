from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density
from qmegrid.cannon import DistributedMatrix
from qmegrid.dissipator import (PlanEntry, PlanError, apply_all_channels, apply_channel, build_plan, count_flops,
                                cross_processor_channels, plan_for_model)
from qmegrid.grid import GridError, GridRuntime
from qmegrid.model import Channel, ModelParams, build_channels
from qmegrid.oracle import dense_dissipator_step
from qmegrid.subspace import tcm_subspace
from qmegrid.tensor import BlockPartition


def run_plan(rho: np.ndarray, entries, p: int = 1) -> tuple[np.ndarray, GridRuntime]:
    g = GridRuntime(p)
    dm = DistributedMatrix.from_dense(rho, g)
    out = apply_all_channels(dm, build_plan(entries, dm.part), g)
    return out.to_dense(), g


def as_channels(entries) -> list[Channel]:
    # dt = 1 so rates equal step-scaled rates
    return [Channel(e.i, e.j, e.rate, e.rate_prime) for e in entries]


class TestApplyChannel:
    def test_full_decay_example(self):
        g = GridRuntime(1)
        rho = DistributedMatrix.from_dense([[1, 0], [0, 0]], g)
        out = apply_channel(rho, PlanEntry(0, 1, 0.1), g).to_dense()
        assert np.allclose(out, [[0.9, 0], [0, 0.1]], atol=1e-15, rtol=0)

    def test_zero_rates(self, rng):
        rho = random_density(rng, 3)
        out, _ = run_plan(rho, [PlanEntry(0, 2, 0.0, 0.0)])
        assert np.array_equal(out, rho)

    def test_loss_and_influx_example(self):
        rho = np.full((2, 2), 0.5, dtype=complex)
        entry = PlanEntry(0, 1, 0.2, 0.1)
        expected = np.array([[0.45, 0.425], [0.425, 0.55]])
        out, _ = run_plan(rho, [entry])
        assert np.max(np.abs(out - expected)) <= 1e-15
        assert np.max(np.abs(dense_dissipator_step(rho, as_channels([entry]), 1.0) - expected)) <= 1e-15
        assert abs(np.trace(out).real - 1) <= 1e-15

    @pytest.mark.parametrize("bad,match", [
        (PlanEntry(1, 1, 0.1), "coincide"),
        (PlanEntry(0, 5, 0.1), "outside"),
        (PlanEntry(0, 1, 1.0), r"gamma\*dt"),
        (PlanEntry(0, 1, 0.1, 0.1), "gamma'"),
        (PlanEntry(0, 1, 0.1, -0.01), "gamma'"),
    ])
    def test_invalid_entries(self, bad, match):
        with pytest.raises(PlanError, match=match):
            build_plan([bad], BlockPartition(2, 1))


class TestApplyAllChannels:
    def test_no_channels(self, rng):
        rho = random_density(rng, 5)
        out, g = run_plan(rho, [], p=2)
        assert np.array_equal(out, rho)
        assert g.events == []

    def test_singleton_matches_apply_channel(self):
        space = tcm_subspace(1)
        chans = build_channels(ModelParams(1, gamma=0.5), space)
        rho = np.eye(3, dtype=complex) / 3
        g = GridRuntime(1)
        dm = DistributedMatrix.from_dense(rho, g)
        a = apply_all_channels(dm, plan_for_model(chans, 0.02, dm.part), g).to_dense()
        b = apply_channel(dm, PlanEntry(chans[0].i, chans[0].j, chans[0].gamma * 0.02), g).to_dense()
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("p", [1, 2, 4])
    @pytest.mark.parametrize("influx", [False, True])
    def test_three_atoms_against_dense(self, rng, p, influx):
        space = tcm_subspace(3, influx=influx)
        params = ModelParams(3, gamma=0.5, gamma_prime=0.2 if influx else 0.0)
        chans = build_channels(params, space)
        rho = random_density(rng, space.dim)
        dt = 0.03
        g = GridRuntime(p)
        dm = DistributedMatrix.from_dense(rho, g)
        out = apply_all_channels(dm, plan_for_model(chans, dt, dm.part), g).to_dense()
        assert np.max(np.abs(out - dense_dissipator_step(rho, chans, dt))) <= 1e-12

    def test_order_independence(self, rng):
        chans = build_channels(ModelParams(3, gamma=0.5, gamma_prime=0.1), tcm_subspace(3))
        rho = random_density(rng, 27)
        entries = [PlanEntry(c.i, c.j, c.gamma * 0.05, c.gamma_prime * 0.05) for c in chans]
        ref, _ = run_plan(rho, entries, p=2)
        for seed in range(3):
            order = np.random.default_rng(seed).permutation(len(entries))
            out, _ = run_plan(rho, [entries[k] for k in order], p=2)
            assert np.max(np.abs(out - ref)) <= 1e-15

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(2, 12), p=st.sampled_from([1, 2, 3]), seed=st.integers(0, 2**31 - 1),
           m=st.integers(1, 20))
    def test_trace_and_hermiticity_preserved(self, n, p, seed, m):
        if p > n:
            return
        r = np.random.default_rng(seed)
        entries = []
        for _ in range(m):
            i, j = r.choice(n, size=2, replace=False)
            rate = r.uniform(0, 0.05)
            entries.append(PlanEntry(int(i), int(j), rate, rate * r.uniform(0, 0.9)))
        rho = random_density(r, n)
        out, _ = run_plan(rho, entries, p)
        assert abs(np.trace(out) - np.trace(rho)) <= 1e-14
        assert np.max(np.abs(out - out.conj().T)) <= 1e-14
        assert np.max(np.abs(out - dense_dissipator_step(rho, as_channels(entries), 1.0))) <= 1e-14

    def test_partition_mismatch(self):
        g = GridRuntime(2)
        dm = DistributedMatrix.from_dense(np.eye(4), g)
        plan = build_plan([PlanEntry(0, 1, 0.1)], BlockPartition(4, 1))
        with pytest.raises(GridError):
            apply_all_channels(dm, plan, g)


class TestLocality:
    def test_only_point_events_between_diagonal_workers(self, rng):
        space = tcm_subspace(4)
        chans = build_channels(ModelParams(4, gamma=0.5, gamma_prime=0.1), tcm_subspace(4, influx=True))
        g = GridRuntime(4)
        dm = DistributedMatrix.from_dense(random_density(rng, space.dim), g)
        plan = plan_for_model(chans, 0.01, dm.part)
        apply_all_channels(dm, plan, g)
        events = g.phase_events("dissipator")
        assert events
        assert {e.kind for e in events} == {"point"}
        assert all(e.src[0] == e.src[1] and e.dst[0] == e.dst[1] and e.src != e.dst for e in events)
        assert sum(e.size for e in events) == len(plan.cross_transfers())

    def test_local_channels_send_nothing(self, rng):
        # every channel stays inside the first diagonal block
        entries = [PlanEntry(0, 1, 0.1), PlanEntry(2, 1, 0.05, 0.01)]
        _, g = run_plan(random_density(rng, 8), entries, p=2)
        assert g.events == []

    def test_cross_processor_channels_by_ownership(self):
        entries = [PlanEntry(k + 1, k, 0.1) for k in range(5)] + [PlanEntry(5, 0, 0.1)]
        assert cross_processor_channels(entries, BlockPartition(6, 3)) == [1, 3, 5]
        assert cross_processor_channels(entries, BlockPartition(6, 2)) == [2, 5]
        assert cross_processor_channels(entries, BlockPartition(6, 1)) == []

    def test_reordering_hook(self):
        entries = [PlanEntry(0, 5, 0.1)]
        part = BlockPartition(6, 2)
        assert cross_processor_channels(entries, part) == [0]
        assert cross_processor_channels(entries, part, order=[0, 5, 2, 3, 4, 1]) == []


class TestCountFlops:
    def test_hand_count(self):
        assert count_flops(1, 2) == 10

    def test_no_channels(self):
        assert count_flops(0, 100) == 0

    @given(m=st.integers(1, 10**6), n=st.integers(1, 10**6))
    def test_linear_in_channels(self, m, n):
        assert count_flops(2 * m, n) == 2 * count_flops(m, n)

    def test_doubling_dimension(self):
        # the two point updates do not scale with N, so doubling N doubles the sweep count only
        assert count_flops(7, 20) - 2 * 7 == 2 * (count_flops(7, 10) - 2 * 7)

    def test_from_plan(self):
        plan = build_plan([PlanEntry(0, 1, 0.1), PlanEntry(2, 1, 0.1)], BlockPartition(3, 1))
        assert count_flops(plan, 3) == 2 * 14
