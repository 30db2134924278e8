import numpy as np
import pandas as pd
import pytest

import stages.simulation_stage as simulation_stage
from config.network_config import build_network
from core.composition import RelationBound
from core.sim import PairedRun, TrajectoryLog
from core.system import BoxUnion
from stages.base_stage import RunContext
from stages.simulation_stage import SimulationStage
from utils.helpers import DataValidator, ReportWriter

SAFE = BoxUnion.from_bounds([0.0, 0.0], [30.0, 15.0])


def _frame(rows, modes):
    frame = pd.DataFrame(rows, columns=['x_1_1', 'x_1_2'])
    frame.insert(0, 'time', range(1, len(rows) + 1))
    frame['mode_1'] = modes
    frame['counter_1'] = 0
    return frame


def test_trajectory_inside_safe_box():
    check = DataValidator.validate_trajectory(_frame([[10, 10], [29, 14]], [2, 2]), SAFE, [np.eye(2)], [2],
                                              red_limit=2)
    assert check['is_valid'] is True
    assert check['unsafe_times'] == []


@pytest.mark.parametrize('row', [[20.0, 25.0], [-5.0, 3.0]])
def test_trajectory_outside_safe_box(row):
    """Each component has its own bounds, lower bounds included"""
    check = DataValidator.validate_trajectory(_frame([[10, 10], row], [2, 2]), SAFE, [np.eye(2)], [2])
    assert check['is_valid'] is False
    assert check['is_safe'] is False
    assert check['unsafe_times'] == [2]


def test_red_runs_count_the_applied_modes():
    # in force: 1, 1, 1 (initial mode, then the first two logged modes)
    frame = _frame([[1, 1]] * 3, [1, 1, 2])
    assert DataValidator.validate_trajectory(frame, SAFE, [np.eye(2)], [1], red_limit=2)['longest_red_run'] == 3
    assert DataValidator.validate_trajectory(frame, SAFE, [np.eye(2)], [2], red_limit=2)['is_valid'] is True


def _log(second_row):
    log = TrajectoryLog([2, 2, 2], initial_modes=(2, 2, 2))
    log.append(1, [np.array([10.0, 10.0])] * 3, (2, 2, 2), (0, 0, 0))
    log.append(2, [np.array([10.0, 10.0]), np.array(second_row), np.array([10.0, 10.0])], (2, 2, 2), (0, 0, 0))
    return log


@pytest.fixture
def sim_context(traffic_cfg, tmp_path):
    def make(artifacts=None):
        ctx = RunContext('simulate', traffic_cfg, tmp_path / 'traffic.cfg', ReportWriter(tmp_path))
        ctx.artifacts.update(network=build_network(traffic_cfg), controllers=[object()] * 3)
        ctx.artifacts.update(artifacts or {})
        return ctx
    return make


def test_stage_accepts_safe_run(monkeypatch, sim_context):
    monkeypatch.setattr(simulation_stage, 'simulate_closed_loop', lambda *args, **kwargs: _log([12.0, 14.0]))
    result = SimulationStage().run(sim_context())
    assert result['success'] is True
    assert result['results']['trajectory_check']['is_valid'] is True


def test_stage_fails_when_run_leaves_safe_set(monkeypatch, sim_context, tmp_path):
    monkeypatch.setattr(simulation_stage, 'simulate_closed_loop', lambda *args, **kwargs: _log([20.0, 25.0]))
    result = SimulationStage().run(sim_context())
    assert result['success'] is False
    assert result['exit_code'] == 1
    assert result['error']['error_type'] == 'InvariantViolation'
    assert result['error']['details']['unsafe_times'] == [2]
    assert (tmp_path / 'simulation.json').exists()


def test_stage_fails_when_mismatch_exceeds_bound(monkeypatch, sim_context):
    monkeypatch.setattr(simulation_stage, 'simulate_closed_loop', lambda *args, **kwargs: _log([12.0, 14.0]))
    monkeypatch.setattr(simulation_stage, 'paired_runs',
                        lambda *args, **kwargs: PairedRun(np.zeros((2, 6)), np.zeros((2, 6)), 0.0, 1))
    monkeypatch.setattr(simulation_stage, 'check_mismatch_bound', lambda *args, **kwargs: 5.0)
    bound = RelationBound(psi=0.99, phi=1.0, eps_hat=1.0, rho=0.5)
    result = SimulationStage().run(sim_context({'models': [object()] * 3, 'bound': bound}))
    assert result['exit_code'] == 1
    assert 'exceeds the bound' in result['error']['error_message']
