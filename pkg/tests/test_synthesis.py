import numpy as np
import pandas as pd
import pytest

from core.errors import FormatError, InputError, ParameterError, RefinementError, SynthesisInfeasible
from core.synthesis import (
    SafetySpec, build_spec_product, export_domain_csv, load_controller, refine_controller,
    restrict_internal_inputs, safety_fixed_point, save_controller, verify_invariance,
)
from core.system import BoxUnion


def test_product_shape(toggle_product):
    assert toggle_product.shape == (9, 2, 2, 3)
    assert toggle_product.fair


def test_allowed_inputs_respect_dwell_and_fairness(toggle_product):
    # inside the dwell time only the current mode may be kept
    assert [u for u, *_ in toggle_product.allowed_inputs(2, 0, 0)] == [2]
    assert [u for u, *_ in toggle_product.allowed_inputs(2, 1, 0)] == [1, 2]
    # a red run at its limit must turn green
    assert [u for u, *_ in toggle_product.allowed_inputs(1, 1, 2)] == [2]
    assert toggle_product.allowed_inputs(1, 0, 2) == []


def test_controller_domain_is_invariant(toggle_product, toggle_ctrl):
    assert toggle_ctrl.size > 0
    assert verify_invariance(toggle_ctrl, toggle_product)


def test_domain_lies_in_safe_set(toggle_model, toggle_ctrl):
    pos = np.nonzero(toggle_ctrl.domain)[0]
    outputs = toggle_model.external_outputs(pos)
    assert outputs.max() <= 3.0
    assert outputs.min() >= 0.0


def test_every_domain_state_has_a_move(toggle_ctrl):
    assert np.all(toggle_ctrl.moves[toggle_ctrl.domain] != 0)
    assert not np.any(toggle_ctrl.moves[~toggle_ctrl.domain])


def test_fairness_limit_forbids_red(toggle_ctrl):
    """At the red-run limit the controller never offers the red mode"""
    red_bit = 1
    at_limit = toggle_ctrl.moves[:, 0, :, 2]
    assert not np.any(at_limit & red_bit)


def test_known_domain_states(toggle_ctrl):
    grid = toggle_ctrl.model.grid
    zero = int(grid.index_of(np.array([0])))
    three = int(grid.index_of(np.array([6])))
    assert toggle_ctrl.domain[zero, 1, 0, 0]
    assert toggle_ctrl.allowed(zero, 2, 1, 0) == [1, 2]
    # keeping green at 3 pushes a successor to 3.5
    assert not toggle_ctrl.domain[three, 1, 1, 0]


def test_shrink_deflates_initial_set(toggle_product):
    full = toggle_product.initial_set(0.0)
    shrunk = toggle_product.initial_set(0.5)
    assert shrunk.sum() < full.sum()
    assert np.all(~shrunk | full)
    outputs = toggle_product.model.external_outputs()[:, 0]
    assert not shrunk[outputs < 0.5].any()
    assert not shrunk[outputs > 2.5].any()


def test_empty_after_shrinking(toggle_product):
    with pytest.raises(SynthesisInfeasible):
        safety_fixed_point(toggle_product, shrink=2.0)
    with pytest.raises(ParameterError):
        toggle_product.initial_set(-1.0)


def test_unwinnable_game(toggle_model):
    """A red-run limit of one forces green, and green always overshoots [0, 1]"""
    spec = SafetySpec(BoxUnion.from_bounds([0.0], [1.0]), fairness_limit=1, red_mode=1)
    with pytest.raises(SynthesisInfeasible):
        safety_fixed_point(build_spec_product(toggle_model, spec))


def test_without_fairness_red_forever_is_safe(toggle_model):
    spec = SafetySpec(BoxUnion.from_bounds([0.0], [1.0]))
    ctrl = safety_fixed_point(build_spec_product(toggle_model, spec))
    assert ctrl.domain.shape[-1] == 1
    assert ctrl.contains_outputs([0.0], [1.0], p=1, l=1)


def test_spec_validation(toggle_model):
    with pytest.raises(ParameterError):
        SafetySpec(BoxUnion.from_bounds([0.0], [1.0]), fairness_limit=0)
    with pytest.raises(InputError):
        build_spec_product(toggle_model, SafetySpec(BoxUnion.from_bounds([0.0, 0.0], [1.0, 1.0])))
    with pytest.raises(InputError):
        build_spec_product(toggle_model, SafetySpec(BoxUnion.from_bounds([0.0], [1.0]), fairness_limit=1,
                                                    red_mode=3))


def test_refine_controller(toggle_ctrl):
    assert refine_controller(toggle_ctrl, [0.1], 2, 0, 0) == toggle_ctrl.allowed(0, 2, 0, 0)
    with pytest.raises(RefinementError):
        refine_controller(toggle_ctrl, [3.9], 2, 1, 0)
    with pytest.raises(RefinementError):
        refine_controller(toggle_ctrl, [9.0], 1, 0, 1)


def test_refine_controller_tie_tries_both_grid_points(toggle_ctrl):
    # -0.25 is equidistant from -0.5 (off the grid) and 0.0 (in the domain)
    assert refine_controller(toggle_ctrl, [-0.25], 1, 0, 1) == refine_controller(toggle_ctrl, [0.0], 1, 0, 1)
    with pytest.raises(RefinementError):
        refine_controller(toggle_ctrl, [-0.3], 1, 0, 1)


def test_controller_file_round_trip(tmp_path, toggle_model, toggle_spec, toggle_ctrl):
    path = tmp_path / 'toggle.ctrl'
    save_controller(toggle_ctrl, path, eps_hat=0.25)
    loaded = load_controller(path, toggle_model, toggle_spec)
    assert loaded == toggle_ctrl
    assert loaded.meta['model_digest'] == toggle_model.digest()
    assert path.read_text().startswith('# symnet-controller ')


def test_controller_needs_matching_model(tmp_path, small_model, toggle_spec, toggle_ctrl):
    path = tmp_path / 'toggle.ctrl'
    save_controller(toggle_ctrl, path)
    with pytest.raises(FormatError):
        load_controller(path, small_model, toggle_spec)
    path.write_text('not a controller\n')
    with pytest.raises(FormatError):
        load_controller(path, toggle_ctrl.model, toggle_spec)


def test_domain_export(tmp_path, toggle_ctrl):
    path = tmp_path / 'toggle_domain.csv'
    export_domain_csv(toggle_ctrl, path)
    frame = pd.read_csv(path, dtype={'allowed': str})
    assert list(frame.columns) == ['x_1', 'mode', 'counter', 'fairness', 'allowed']
    assert len(frame) == toggle_ctrl.size
    assert set(frame['allowed']) <= {'1', '2', '1|2'}


def test_assumed_outputs_restrict_inputs(small_model):
    kept = restrict_internal_inputs(small_model, BoxUnion.from_bounds([0.0], [2.0]), [[1.0]])
    np.testing.assert_array_equal(kept.internal_inputs[:, 0], [0.0, 1.0, 2.0])
    ring_row = [[0.0, 0.0, 1.0]]
    assumed = BoxUnion.from_bounds([0.0, 0.0, 0.0], [6.0, 6.0, 3.0])
    assert restrict_internal_inputs(small_model, assumed, ring_row).n_inputs == 4
    with pytest.raises(InputError):
        restrict_internal_inputs(small_model, assumed, [[1.0]])
