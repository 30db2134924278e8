import numpy as np
import pytest

from core.errors import DwellTimeViolation, InputError
from core.system import BoxUnion, ModeDynamics, SwitchedSubsystem
from core.transition import (
    AugState, check_run_equivalence, direct_output_run, generate_run, next_mode_counter, successor_concrete,
)


def _dwell_signal(rng, length, m, k_d):
    """Random mode sequence whose switches are at least k_d steps apart"""
    seq = [int(rng.integers(1, m + 1))]
    since = 0
    for _ in range(length - 1):
        since += 1
        if m > 1 and since >= k_d and rng.random() < 0.4:
            seq.append(int(rng.choice([p for p in range(1, m + 1) if p != seq[-1]])))
            since = 0
        else:
            seq.append(seq[-1])
    return seq


def test_counter_increments_until_dwell_expires():
    assert next_mode_counter(1, 0, 1, 3) == (1, 1)
    assert next_mode_counter(1, 1, 1, 3) == (1, 2)
    assert next_mode_counter(1, 2, 1, 3) == (1, 2)
    assert next_mode_counter(1, 2, 2, 3) == (2, 0)


def test_early_switch_is_rejected():
    with pytest.raises(DwellTimeViolation):
        next_mode_counter(1, 0, 2, 3)


def test_dwell_time_one_switches_freely():
    assert next_mode_counter(1, 0, 2, 1) == (2, 0)
    assert next_mode_counter(2, 0, 2, 1) == (2, 0)


def test_successor_concrete_uses_current_mode(traffic_sub):
    s = AugState([10.0, 10.0], 1, 0)
    nxt = successor_concrete(traffic_sub, s, 2, [0.0])
    np.testing.assert_allclose(nxt.x, traffic_sub.step(1, [10.0, 10.0], [0.0]))
    assert (nxt.p, nxt.l) == (2, 0)


def test_successor_rejects_counter_out_of_range(fullnet_sub):
    with pytest.raises(InputError):
        successor_concrete(fullnet_sub, AugState([0.5, 0.5], 1, 3), 1, [0.0, 0.0])


def test_generate_run_counters(fullnet_sub):
    states, outputs = generate_run(fullnet_sub, [0.5, 0.5], [1, 1, 1, 2, 2], w_seq=[[0.0, 0.0]] * 4)
    assert [s.p for s in states] == [1, 1, 1, 2, 2]
    assert [s.l for s in states] == [0, 1, 2, 0, 1]
    assert len(outputs) == 5


@pytest.mark.parametrize('seed', range(5))
def test_run_equivalence_traffic(traffic_sub, seed):
    rng = np.random.default_rng(seed)
    seq = _dwell_signal(rng, 40, 2, traffic_sub.dwell_time)
    w = rng.uniform(0, 60, size=(40, 1))
    assert check_run_equivalence(traffic_sub, rng.uniform(0, 60, size=2), seq, w)


@pytest.mark.parametrize('seed', range(5))
def test_run_equivalence_with_dwell_time(fullnet_sub, seed):
    rng = np.random.default_rng(100 + seed)
    seq = _dwell_signal(rng, 40, 2, fullnet_sub.dwell_time)
    w = rng.uniform(0, 0.06, size=(40, 2))
    assert check_run_equivalence(fullnet_sub, rng.uniform(0, 1, size=2), seq, w)


def test_run_equivalence_rejects_fast_switching(fullnet_sub):
    with pytest.raises(DwellTimeViolation):
        check_run_equivalence(fullnet_sub, [0.5, 0.5], [1, 2, 1], [[0.0, 0.0]] * 2)


def test_direct_run_holds_last_mode(traffic_sub):
    outputs = direct_output_run(traffic_sub, [0.0, 0.0], [2], [[0.0]] * 3, horizon=3)
    np.testing.assert_allclose(outputs[1], [12.0, 0.0])
    assert len(outputs) == 4


def _random_subsystem(rng):
    """Affine switched subsystem with random dimensions, dwell time and mode data"""
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 4))
    q = int(rng.integers(0, 3))
    modes = [ModeDynamics(rng.uniform(-1, 1, size=(n, n)) / n, rng.uniform(-1, 1, size=(n, q)),
                          rng.uniform(-1, 1, size=n), label=p) for p in range(1, m + 1)]
    inputs = BoxUnion.from_bounds([-1.0] * q, [1.0] * q) if q else None
    C1 = rng.uniform(-1, 1, size=(int(rng.integers(1, n + 1)), n))
    C2 = rng.uniform(-1, 1, size=(int(rng.integers(0, 3)), n))
    return SwitchedSubsystem(BoxUnion.from_bounds([-10.0] * n, [10.0] * n), inputs, modes, C1, C2,
                             dwell_time=int(rng.integers(1, 5)), name='random')


@pytest.mark.parametrize('seed', range(100))
def test_run_equivalence_random_systems(seed):
    rng = np.random.default_rng(seed)
    sub = _random_subsystem(rng)
    seq = _dwell_signal(rng, 51, sub.m, sub.dwell_time)
    w = rng.uniform(-1, 1, size=(50, sub.input_dim))
    assert check_run_equivalence(sub, rng.uniform(-10, 10, size=sub.n), seq, w)
