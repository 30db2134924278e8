import dataclasses
import math

import numpy as np
import pytest

from core.certificates import (
    DEFAULT_THETA_GRID, StorageCertificate, compute_mu, construct_Qtilde, derive_augmented_storage, gamma_bound,
    lmi_margin, min_dwell_time, output_alpha, qtilde_margins, scan_theta, validate_storage_mc,
    verify_certificate, verify_delta_p_affine,
)
from core.errors import CertificateError, InvariantViolation, ParameterError, UnsupportedCertificateError
from core.matcert import SymMatrix
from core.system import BoxUnion, PowerK


def test_traffic_config_values(traffic_cert):
    assert traffic_cert.kappa == [0.98, 0.98]
    assert traffic_cert.Q[0].array[1, 1] == pytest.approx(-0.6785)
    assert traffic_cert.storage_kind == 'common'


def test_traffic_lmi_feasible(traffic_sub, traffic_cert):
    for p in (1, 2):
        theta = scan_theta(traffic_sub.mode(p), traffic_sub.C2, traffic_cert.Z[0], traffic_cert.Q[0], 0.98)
        assert theta is not None
        assert lmi_margin(traffic_sub.mode(p), traffic_sub.C2, traffic_cert.Z[0], traffic_cert.Q[0],
                          0.98, theta) >= -1e-9


def test_traffic_certificate_verified(traffic_sub, traffic_cert):
    report = verify_certificate(traffic_sub, traffic_cert, DEFAULT_THETA_GRID)
    assert report.verified
    assert report.dwell_min == 1
    assert report.mu_computed == 1.0
    assert list(report.to_frame().columns) == ['mode', 'theta', 'lmi_margin', 'feasible']


def test_small_decay_rate_fails_lmi(traffic_sub, traffic_cert):
    assert not verify_delta_p_affine(traffic_sub.mode(1), traffic_sub.C2, traffic_cert.Z[0], traffic_cert.Q[0],
                                     0.1, 1.05)


def test_lmi_parameter_ranges(traffic_sub, traffic_cert):
    args = (traffic_sub.mode(1), traffic_sub.C2, traffic_cert.Z[0], traffic_cert.Q[0])
    with pytest.raises(ParameterError):
        verify_delta_p_affine(*args, 0.98, 1.0)
    with pytest.raises(ParameterError):
        verify_delta_p_affine(*args, 1.0, 1.05)


def test_wrong_supply_rate_size(traffic_sub, traffic_cert):
    with pytest.raises(CertificateError):
        lmi_margin(traffic_sub.mode(1), traffic_sub.C2, traffic_cert.Z[0], SymMatrix.identity(3), 0.98, 1.05)


def test_gamma_bound_on_traffic_set():
    g = gamma_bound(SymMatrix.identity(2), BoxUnion.from_bounds([0, 0], [60, 60]))
    assert g.quad == pytest.approx(2.0)
    assert g.lin == pytest.approx(240.0)
    assert g(1.0) == pytest.approx(242.0)


def test_gamma_bound_dominates_storage_difference():
    Z = SymMatrix([[0.3030, 0.0087], [0.0087, 0.4938]])
    S = BoxUnion.from_bounds([0, 0], [1, 1])
    g = gamma_bound(Z, S)
    rng = np.random.default_rng(0)
    x, y, z = (S.sample(rng, 500) for _ in range(3))
    lhs = Z.quad(x - y)
    rhs = Z.quad(x - z) + g(np.max(np.abs(y - z), axis=1))
    assert np.all(lhs <= rhs + 1e-12)


def test_compute_mu():
    assert compute_mu([SymMatrix.identity(2)] * 2) == 1.0
    assert compute_mu([SymMatrix.identity(2) * 2.0, SymMatrix.identity(2)]) == pytest.approx(2.0)


def test_compute_mu_fullnet(fullnet_cert):
    assert 1.50 <= compute_mu(fullnet_cert.Z) <= 1.64


def test_min_dwell_time():
    assert min_dwell_time(1.63, 0.7, 1.01) == 3
    assert min_dwell_time(1.0, 0.7, 2.0) == 1
    with pytest.raises(ParameterError):
        min_dwell_time(0.5, 0.7, 2.0)


def test_qtilde_fullnet(fullnet_cert):
    Qt = construct_Qtilde(fullnet_cert.Q, 0.7, 1.01, 3)
    margins = qtilde_margins(Qt, fullnet_cert.Q, 0.7, 1.01, 3)
    assert len(margins) == 2
    assert min(margins) >= -1e-9


def test_qtilde_without_dwell_is_zero(fullnet_cert):
    Qt = construct_Qtilde(fullnet_cert.Q, 0.7, 1.01, 1)
    assert Qt == SymMatrix.zeros(4)


def test_augmented_storage_invariants(traffic_sub, traffic_cert):
    fn = derive_augmented_storage(traffic_cert, 1.0, 1, traffic_sub.lipschitz_ell)
    with pytest.raises(InvariantViolation):
        dataclasses.replace(fn, sigma=1.0)
    with pytest.raises(InvariantViolation):
        dataclasses.replace(fn, eps_offset=-1.0)


def test_output_alpha():
    alpha = output_alpha([PowerK(1.0, 2.0)], PowerK(1.0, 1.0))
    assert (alpha.coeff, alpha.exponent) == pytest.approx((1.0, 2.0))
    worst = output_alpha([PowerK(0.3, 2.0), PowerK(0.4, 2.0)], PowerK(1.0, 1.0))
    assert worst.coeff == pytest.approx(0.3)
    with pytest.raises(UnsupportedCertificateError):
        output_alpha([PowerK(1.0, 2.0), PowerK(1.0, 3.0)], PowerK(1.0, 1.0))


def test_common_augmented_storage(traffic_sub, traffic_cert):
    fn = derive_augmented_storage(traffic_cert, 1.0, traffic_sub.dwell_time, traffic_sub.lipschitz_ell)
    assert fn.common
    assert fn.sigma == 0.98
    assert fn.eps_offset == pytest.approx(242.0)
    assert fn.R == traffic_cert.Q[0]
    assert (fn.alpha.coeff, fn.alpha.exponent) == pytest.approx((1.0, 2.0))
    assert fn.value([3.0, 4.0], [0.0, 0.0], 0) == pytest.approx(25.0)


def test_multiple_augmented_storage(fullnet_sub, fullnet_cert):
    fn = derive_augmented_storage(fullnet_cert, 0.1, 3, fullnet_sub.lipschitz_ell)
    assert not fn.common
    assert fn.sigma == pytest.approx(0.7 ** (0.01 / 1.01))
    assert fn.counter_base == pytest.approx(0.7 ** (-1 / 1.01))
    assert fn.R is not None and fn.R.dim == 4
    total = fullnet_cert.gamma[0](0.1) + fullnet_cert.gamma[1](0.1)
    assert fn.eps_offset == pytest.approx(0.7 ** (-3 / 1.01) * total)
    delta = np.array([0.2, -0.1])
    assert fn.value(delta, [0.0, 0.0], 2) == pytest.approx(fn.counter_base ** 2 * fn.Z_sum.quad(delta))


def test_multiple_storage_needs_dwell_time(fullnet_sub, fullnet_cert):
    with pytest.raises(CertificateError):
        derive_augmented_storage(fullnet_cert, 0.1, 2, fullnet_sub.lipschitz_ell)


def test_common_reduction_needs_common_data(fullnet_sub, fullnet_cert):
    with pytest.raises(CertificateError):
        derive_augmented_storage(fullnet_cert, 0.1, 3, fullnet_sub.lipschitz_ell, common=True)


def test_gamma_required(traffic_sub, traffic_cert):
    bare = dataclasses.replace(traffic_cert, gamma=None)
    with pytest.raises(CertificateError):
        derive_augmented_storage(bare, 1.0, 1, traffic_sub.lipschitz_ell)


@pytest.mark.parametrize('kwargs', [
    {'kappa': [1.0]},
    {'Z': [SymMatrix([[1.0, 0.0], [0.0, -1.0]])]},
    {'mu': 0.5},
    {'theta': [1.0]},
])
def test_certificate_validation(kwargs):
    data = {'Z': [SymMatrix.identity(2)], 'Q': [None], 'kappa': [0.5], 'alpha_lower': [PowerK(1.0, 2.0)]}
    data.update(kwargs)
    with pytest.raises(CertificateError):
        StorageCertificate(**data)


def test_fullnet_certificate_not_verified(fullnet_sub, fullnet_cert):
    report = verify_certificate(fullnet_sub, fullnet_cert)
    assert report.storage_kind == 'multiple'
    assert report.dwell_min == 3
    assert not report.lmi_ok
    assert not report.verified
    assert report.to_dict()['verified'] is False


def test_storage_mc_passes(small_net, small_model, small_aug_fn):
    worst = validate_storage_mc(small_net.subsystems[0], small_model, small_aug_fn, samples=4000, seed=1)
    assert worst <= 1e-9


@pytest.mark.slow
def test_storage_mc_full_link(traffic_sub, traffic_model, traffic_aug_fn):
    worst = validate_storage_mc(traffic_sub, traffic_model, traffic_aug_fn, samples=10_000, seed=5)
    assert worst <= 1e-9


def test_storage_mc_catches_missing_offset(small_net, small_model, small_aug_fn):
    """Dropping the quantization offset and most of the decay makes sampled violations positive"""
    broken = dataclasses.replace(small_aug_fn, sigma=0.1, eps_offset=0.0)
    worst = validate_storage_mc(small_net.subsystems[0], small_model, broken, samples=4000, seed=1)
    assert worst > 0
    assert math.isfinite(worst)
