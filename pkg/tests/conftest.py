from pathlib import Path

import numpy as np
import pytest

from config.network_config import build_certificate, build_network, build_subsystems, load_config
from core.abstraction import build_symbolic_model
from core.certificates import derive_augmented_storage
from core.system import BoxUnion, ModeDynamics, SwitchedSubsystem
from core.synthesis import SafetySpec, build_spec_product, safety_fixed_point

CONFIG_DIR = Path(__file__).resolve().parent.parent / 'configs'
TRAFFIC_CFG = CONFIG_DIR / 'traffic.cfg'
FULLNET_CFG = CONFIG_DIR / 'fullnet.cfg'

# Links of the traffic ring cut down to [0, 6]^2 so models build in milliseconds
SMALL_TRAFFIC = {'subsystem.state_upper': '[6, 6]', 'subsystem.input_upper': '[6]'}


@pytest.fixture(scope='session')
def traffic_cfg():
    return load_config(TRAFFIC_CFG)


@pytest.fixture(scope='session')
def fullnet_cfg():
    return load_config(FULLNET_CFG)


@pytest.fixture(scope='session')
def traffic_sub(traffic_cfg):
    return build_subsystems(traffic_cfg)[0]


@pytest.fixture(scope='session')
def fullnet_sub(fullnet_cfg):
    return build_subsystems(fullnet_cfg)[0]


@pytest.fixture
def traffic_cert(traffic_cfg, traffic_sub):
    return build_certificate(traffic_cfg, traffic_sub)


@pytest.fixture
def fullnet_cert(fullnet_cfg, fullnet_sub):
    return build_certificate(fullnet_cfg, fullnet_sub)


@pytest.fixture(scope='session')
def small_cfg():
    return load_config(TRAFFIC_CFG, overrides=SMALL_TRAFFIC)


@pytest.fixture(scope='session')
def small_net(small_cfg):
    return build_network(small_cfg)


@pytest.fixture(scope='session')
def small_model(small_net):
    return build_symbolic_model(small_net.subsystems[0], 1.0, 1.0)


@pytest.fixture(scope='session')
def small_models(small_net, small_model):
    return [small_model] * small_net.N


@pytest.fixture(scope='session')
def small_aug_fn(small_cfg, small_net):
    sub = small_net.subsystems[0]
    cert = build_certificate(small_cfg, sub)
    return derive_augmented_storage(cert, 1.0, sub.dwell_time, sub.lipschitz_ell)


@pytest.fixture(scope='session')
def toggle_sub():
    """Scalar two-mode system: mode 1 halves the state, mode 2 halves it and adds 1.5"""
    modes = [
        ModeDynamics([[0.5]], np.zeros((1, 0)), [0.0], label=1),
        ModeDynamics([[0.5]], np.zeros((1, 0)), [1.5], label=2),
    ]
    return SwitchedSubsystem(BoxUnion.from_bounds([0.0], [4.0]), None, modes, [[1.0]], np.zeros((0, 1)),
                             dwell_time=2, name='toggle')


@pytest.fixture(scope='session')
def toggle_model(toggle_sub):
    return build_symbolic_model(toggle_sub, 0.5, 0.5)


@pytest.fixture(scope='session')
def toggle_spec():
    return SafetySpec(BoxUnion.from_bounds([0.0], [3.0]), fairness_limit=2, red_mode=1)


@pytest.fixture(scope='session')
def toggle_product(toggle_model, toggle_spec):
    return build_spec_product(toggle_model, toggle_spec)


@pytest.fixture(scope='session')
def toggle_ctrl(toggle_product):
    return safety_fixed_point(toggle_product)


@pytest.fixture(scope='session')
def traffic_model(traffic_sub):
    return build_symbolic_model(traffic_sub, 1.0, 1.0)


@pytest.fixture(scope='session')
def traffic_aug_fn(traffic_cfg, traffic_sub):
    cert = build_certificate(traffic_cfg, traffic_sub)
    return derive_augmented_storage(cert, 1.0, traffic_sub.dwell_time, traffic_sub.lipschitz_ell)
