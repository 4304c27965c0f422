from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from qmegrid.sim import (AGREEMENT_TOL, BENCH_HEADER, ConfigError, RunConfig, TrajectoryRecord, bench, bench_table,
                         compare_runs, emit_reports, fig5_preset, load_config, run_simulation, setup_problem)

SMALL = RunConfig(n_at=2, steps=40, g_over_E=0.2, gamma_dt=0.02, grid_side=2)


@pytest.fixture(scope="module")
def small_result():
    return run_simulation(SMALL)


class TestRunConfig:
    @pytest.mark.parametrize("field,value,match", [
        ("steps", 0, "steps"),
        ("dt", 0.0, "dt"),
        ("grid_side", 3, "grid_side"),
        ("grid_side", 4, "exceeds"),
        ("gamma_dt", 1.0, "gamma_dt"),
        ("gamma_prime_dt", 0.02, "gamma_prime_dt"),
        ("mode", "fast", "mode"),
        ("n_at", 0, "n_at"),
        ("k_max", 0, "k_max"),
    ])
    def test_validation(self, field, value, match):
        with pytest.raises(ConfigError, match=match):
            changes = {"n_at": 1} if match == "exceeds" else {}
            changes[field] = value
            replace(SMALL, **changes).validate()

    def test_run_rejects_invalid(self):
        with pytest.raises(ConfigError):
            run_simulation(replace(SMALL, steps=0))

    def test_params(self):
        p = RunConfig(dt=0.02, gamma_dt=0.01, g_over_E=0.1).params()
        assert p.gamma == pytest.approx(0.5) and p.g == pytest.approx(0.1)

    def test_load_config_with_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"n_at": 3, "steps": 10, "grid_side": 2}))
        cfg = load_config(path, steps=20, dt=None)
        assert (cfg.n_at, cfg.steps, cfg.grid_side, cfg.dt) == (3, 20, 2, 0.02)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"n_atoms": 3}))
        with pytest.raises(ConfigError, match="n_atoms"):
            load_config(path)

    def test_non_object(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_mapping_round_trip(self):
        assert RunConfig.from_mapping(SMALL.to_mapping()) == SMALL

    def test_fig5_preset(self):
        cfg = fig5_preset(steps=10)
        assert (cfg.n_at, cfg.gamma_prime_dt, cfg.steps) == (5, 0.0, 10)
        assert cfg.energy * cfg.dt == pytest.approx(0.02)


class TestSetup:
    def test_initial_state(self):
        prob = setup_problem(RunConfig(n_at=3))
        assert prob.rho0.shape == (27, 27)
        assert np.trace(prob.rho0) == 1
        k = int(np.argmax(np.diag(prob.rho0).real))
        assert prob.space.states[k].label() == "|010101>"
        assert prob.excitations[k] == 3


class TestTrajectoryRecord:
    def test_round_trip_exact(self, small_result, tmp_path):
        path = tmp_path / "t.tsv"
        small_result.trajectory.write(path)
        back = TrajectoryRecord.read(path)
        assert back == small_result.trajectory

    def test_header(self, small_result):
        header = small_result.trajectory.to_text().splitlines()[0].split("\t")
        assert header == ["step", "time", "P_0", "P_1", "P_2", "trace", "hermiticity_defect"]

    def test_populations_sum_to_trace(self, small_result):
        traj = small_result.trajectory
        assert np.allclose(traj.population_array().sum(axis=1), traj.traces, atol=1e-13, rtol=0)

    def test_energies(self):
        rec = TrajectoryRecord(2)
        rec.append(0.0, [0.25, 0.25, 0.5], 1.0, 0.0)
        assert rec.energies()[0] == pytest.approx(1.25)


class TestRunSimulation:
    def test_starts_fully_excited(self, small_result):
        assert small_result.trajectory.populations[0] == [0.0, 0.0, 1.0]
        assert len(small_result.trajectory) == SMALL.steps + 1

    def test_no_violations(self, small_result):
        assert small_result.ok, small_result.violations

    def test_invariants(self, small_result):
        traj = small_result.trajectory
        pops = traj.population_array()
        assert np.all(np.abs(np.array(traj.traces) - 1) <= 1e-9)
        assert max(traj.hermiticity) <= 1e-12
        assert np.all(np.diff(traj.energies()) <= 1e-12)
        assert np.all(np.diff(pops[:, 0]) >= -1e-12)
        assert np.all((pops >= -1e-9) & (pops <= 1 + 1e-9))

    def test_both_mode_agrees(self):
        res = run_simulation(replace(SMALL, mode="both"), keep_states=True)
        assert res.ok, res.violations
        assert res.oracle_trajectory is not None
        worst = max(np.max(np.abs(a - b)) for a, b in zip(res.states, res.oracle_states))
        assert worst <= AGREEMENT_TOL

    def test_oracle_mode(self, small_result):
        res = run_simulation(replace(SMALL, mode="oracle"))
        assert res.timing == {}
        assert compare_runs(res.trajectory, small_result.trajectory).worst <= 1e-10

    def test_influx_run(self):
        res = run_simulation(replace(SMALL, gamma_prime_dt=0.005, mode="both"))
        assert res.ok, res.violations
        assert res.trajectory.population_array()[-1, 0] < 1

    def test_timing_phases(self, small_result):
        assert set(small_result.timing) == {"propagators", "unitary", "dissipator", "all"}
        assert all(len(rep.records) == 4 for rep in small_result.timing.values())

    def test_deterministic(self):
        a, b = run_simulation(SMALL), run_simulation(SMALL)
        assert a.trajectory.to_text() == b.trajectory.to_text()
        assert np.array_equal(a.final_state, b.final_state)


class TestCompareRuns:
    def test_identical(self, small_result):
        rep = compare_runs(small_result.trajectory, small_result.trajectory)
        assert rep.worst == 0.0 and rep.ok
        assert all(v is None for v in rep.first_exceeding.values())

    def test_grid_independence(self):
        base = replace(SMALL, n_at=3, steps=30)
        a = run_simulation(replace(base, grid_side=2))
        b = run_simulation(replace(base, grid_side=4))
        assert compare_runs(a.trajectory, b.trajectory).worst <= 1e-10

    def test_reports_first_exceeding_step(self, small_result):
        other = TrajectoryRecord.from_text(small_result.trajectory.to_text())
        other.populations[7][1] += 1e-6
        rep = compare_runs(small_result.trajectory, other)
        assert not rep.ok
        assert rep.first_exceeding["P_1"] == 7
        assert "MISMATCH" in rep.to_text()

    def test_mismatched_time_grid(self, small_result):
        short = TrajectoryRecord.from_text("\n".join(small_result.trajectory.to_text().splitlines()[:5]))
        with pytest.raises(ValueError, match="time grids"):
            compare_runs(small_result.trajectory, short)


class TestEmitReports:
    def test_files(self, small_result, tmp_path):
        paths = emit_reports(small_result, tmp_path / "out")
        assert set(paths) == {"trajectory", "run", "timing"}
        timing = json.loads(paths["timing"].read_text())
        assert len(timing["processors"]) == 4
        assert set(timing["phases"]) == {"propagators", "unitary", "dissipator"}
        run = json.loads(paths["run"].read_text())
        assert run["violations"] == [] and run["config"]["n_at"] == 2
        assert TrajectoryRecord.read(paths["trajectory"]) == small_result.trajectory

    def test_identical_outputs_for_identical_configs(self, tmp_path):
        for name in ("a", "b"):
            emit_reports(run_simulation(SMALL), tmp_path / name)
        for fname in ("trajectory.tsv", "run.json"):
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()

    def test_unwritable(self, small_result, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_reports(small_result, blocker / "sub")


class TestBench:
    def test_rows(self):
        rows = bench(replace(SMALL, n_at=3, steps=3), [1, 2, 4])
        assert [r.workers for r in rows] == [1, 4, 16]
        assert [r.unitary_shift_events for r in rows] == [0, 2 * 4 * 1 * 2 * 3, 2 * 16 * 3 * 2 * 3]
        table = bench_table(rows).splitlines()
        assert table[0].split("\t") == BENCH_HEADER
        assert len(table) == 4
