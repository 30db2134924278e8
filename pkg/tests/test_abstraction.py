import struct

import numpy as np
import pytest

from config.network_config import build_subsystems, with_overrides
from core.abstraction import (
    BALL_SLACK, MODEL_MAGIC, abstract_successors, build_symbolic_model, load, persist,
)
from core.errors import FormatError, ParameterError
from core.transition import next_mode_counter


def test_model_shape(small_model):
    assert small_model.n_grid == 49
    assert small_model.n_inputs == 7
    assert small_model.n_modes == 2
    assert small_model.n_states == 49 * 2 * 1


def test_successors_match_brute_force(small_net, small_model):
    """Every stored successor set equals the grid points within eta of the image"""
    sub = small_net.subsystems[0]
    points = small_model.grid.points
    rng = np.random.default_rng(3)
    for _ in range(60):
        x_idx = int(rng.integers(small_model.n_grid))
        w_idx = int(rng.integers(small_model.n_inputs))
        p = int(rng.integers(1, 3))
        image = sub.step_batch(p, points[x_idx][None, :], small_model.internal_inputs[w_idx][None, :])[0]
        close = np.max(np.abs(points - image), axis=1) <= small_model.eta + BALL_SLACK
        expected = np.nonzero(close)[0]
        np.testing.assert_array_equal(np.sort(small_model.targets_of(p, x_idx, w_idx)), expected)


@pytest.mark.slow
def test_full_link_successors_match_brute_force(traffic_sub, traffic_model):
    """10^4 sampled (state, mode, input) triples on the [0, 60]^2 link"""
    assert (traffic_model.n_grid, traffic_model.n_inputs) == (3721, 61)
    points = traffic_model.grid.points
    rng = np.random.default_rng(11)
    xs = rng.integers(traffic_model.n_grid, size=10_000)
    ws = rng.integers(traffic_model.n_inputs, size=10_000)
    ps = rng.integers(1, 3, size=10_000)
    for x_idx, w_idx, p in zip(xs, ws, ps):
        image = traffic_sub.step_batch(int(p), points[x_idx][None, :], traffic_model.internal_inputs[w_idx][None, :])[0]
        expected = np.nonzero(np.max(np.abs(points - image), axis=1) <= traffic_model.eta + BALL_SLACK)[0]
        np.testing.assert_array_equal(np.sort(traffic_model.targets_of(int(p), int(x_idx), int(w_idx))), expected)


def test_successor_tuples_carry_mode_and_counter(small_model):
    succ = small_model.successors(10, 1, 0, 2, 3)
    assert succ
    assert all((p, l) == next_mode_counter(1, 0, 2, 1) for _, p, l in succ)


def test_abstract_successors_within_eta(small_net, small_model):
    sub = small_net.subsystems[0]
    x_hat, w_hat = np.array([3.0, 2.0]), np.array([4.0])
    pts = abstract_successors(sub, small_model.grid, x_hat, 1, w_hat)
    image = sub.step(1, x_hat, w_hat)
    assert len(pts)
    assert np.all(np.max(np.abs(pts - image), axis=1) <= 1.0 + BALL_SLACK)


def test_green_light_leaves_small_set(small_model):
    """Adding twelve vehicles per step overflows a six-vehicle cell, so mode 2 has no successors"""
    assert not small_model.successor_counts(2).any()
    assert small_model.blocked_mask()[1].all()
    assert not small_model.blocked_mask()[0].any()


def test_select_inputs(small_model):
    keep = small_model.internal_inputs[:, 0] <= 2.0
    sub_model = small_model.select_inputs(keep)
    assert sub_model.n_inputs == 3
    np.testing.assert_array_equal(sub_model.targets_of(1, 5, 2), small_model.targets_of(1, 5, 2))


def test_input_override_must_lie_in_input_set(small_net):
    sub = small_net.subsystems[0]
    with pytest.raises(ParameterError):
        build_symbolic_model(sub, 1.0, 1.0, internal_input_override=np.array([[7.0]]))
    model = build_symbolic_model(sub, 1.0, 1.0, internal_input_override=np.array([[2.0], [1.0], [2.0]]))
    np.testing.assert_array_equal(model.internal_inputs, [[1.0], [2.0]])


def test_varpi_out_of_range(small_net):
    with pytest.raises(ParameterError):
        build_symbolic_model(small_net.subsystems[0], 1.0, 10.0)


def test_persist_and_load(tmp_path, small_model):
    path = tmp_path / 'link.symmodel'
    persist(small_model, path)
    loaded = load(path, name='link')
    assert loaded == small_model
    assert loaded.digest() == small_model.digest()
    assert path.read_bytes()[:8] == MODEL_MAGIC


def test_persist_is_deterministic(tmp_path, small_model):
    persist(small_model, tmp_path / 'a.symmodel')
    persist(small_model, tmp_path / 'b.symmodel')
    assert (tmp_path / 'a.symmodel').read_bytes() == (tmp_path / 'b.symmodel').read_bytes()


def test_load_rejects_damaged_files(tmp_path, small_model):
    path = tmp_path / 'link.symmodel'
    persist(small_model, path)
    raw = path.read_bytes()

    bad = tmp_path / 'bad.symmodel'
    bad.write_bytes(b'NOTMODEL' + raw[8:])
    with pytest.raises(FormatError):
        load(bad)

    bad.write_bytes(raw[:8] + struct.pack('<H', 99) + raw[10:])
    with pytest.raises(FormatError, match='version'):
        load(bad)

    bad.write_bytes(raw[:-10])
    with pytest.raises(FormatError):
        load(bad)

    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    bad.write_bytes(bytes(flipped))
    with pytest.raises(FormatError):
        load(bad)

    with pytest.raises(FormatError):
        load(tmp_path / 'missing.symmodel')


@pytest.mark.slow
def test_worker_count_does_not_change_model(small_cfg):
    cfg = with_overrides(small_cfg, {'subsystem.state_upper': [50.0, 50.0], 'subsystem.input_upper': [50.0]})
    sub = build_subsystems(cfg)[0]
    override = np.array([[5.0], [20.0]])
    serial = build_symbolic_model(sub, 1.0, 1.0, override, workers=1)
    parallel = build_symbolic_model(sub, 1.0, 1.0, override, workers=2)
    assert serial == parallel
