"""
Network configuration files.

The format is INI-style: named sections of ``key = value`` lines whose values
are numbers, words (``ring``, ``auto``, ``fair``, ``true``) or JSON numeric
array literals. The grammar is documented in docs/config_format.md; this
module is the only place that reads or writes it.

Subsystems are described once (``[subsystem]`` plus ``[mode K]`` sections) and
replicated ``[network] count`` times.
"""

import configparser
import json
import logging
import re
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationError, model_validator

from config.settings import Config
from core.certificates import StorageCertificate
from core.composition import NetworkSpec
from core.errors import ConfigError, SymnetError
from core.matcert import SymMatrix
from core.synthesis import SafetySpec
from core.system import BoxUnion, ModeDynamics, PowerK, SwitchedSubsystem

logger = logging.getLogger(__name__)

COMMANDS = ('check-cert', 'abstract', 'compose-check', 'synthesize', 'simulate', 'report')

_MODE_SECTION = re.compile(r'^mode (\d+)$')
_CERT_MODE_SECTION = re.compile(r'^certificate mode (\d+)$')
_SYMMETRY_TOL = 1e-12


def _rectangular(rows: List[List[float]]) -> List[List[float]]:
    if rows and len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows differ in length")
    return rows


Matrix = Annotated[List[List[float]], AfterValidator(_rectangular)]
Vector = List[float]


def _shape(mat: Optional[List[List[float]]]) -> Tuple[int, int]:
    if not mat:
        return (0, 0)
    return (len(mat), len(mat[0]))


class _Block(BaseModel):
    model_config = ConfigDict(extra='forbid', allow_inf_nan=False)


class NetworkBlock(_Block):
    name: str = 'network'
    count: int = Field(1, ge=1)
    topology: Literal['ring', 'full', 'none'] = 'none'
    gain: float = 1.0
    coupling: Optional[List[Tuple[int, int, float]]] = None
    weights: Optional[Vector] = None


class SubsystemBlock(_Block):
    state_lower: Vector
    state_upper: Vector
    input_lower: Optional[Vector] = None
    input_upper: Optional[Vector] = None
    C1: Matrix
    C2: Optional[Matrix] = None
    dwell_time: int = Field(1, ge=1)
    ell: Optional[Tuple[float, float]] = None


class ModeBlock(_Block):
    A: Matrix
    D: Optional[Matrix] = None
    B: Optional[Vector] = None


class CertificateModeBlock(_Block):
    Z: Optional[Matrix] = None
    Q: Optional[Matrix] = None
    kappa: Optional[float] = None
    alpha: Optional[Tuple[float, float]] = None
    theta: Optional[float] = None


class CertificateBlock(CertificateModeBlock):
    epsilon: float = 2.0
    mu: Optional[float] = None


class AbstractionBlock(_Block):
    eta: float = Field(gt=0)
    varpi: Optional[float] = Field(None, gt=0)
    inputs: Literal['grid', 'routed'] = 'grid'
    mc_samples: int = Field(0, ge=0)


class SpecBlock(_Block):
    safe_lower: Vector
    safe_upper: Vector
    fairness: Optional[int] = Field(None, ge=1)
    red_mode: int = Field(Config.RED_MODE, ge=1)
    psi: float = Field(Config.DEFAULT_PSI, gt=0, lt=1)
    shrink: Union[float, Literal['auto']] = 'auto'
    assume_lower: Optional[Vector] = None
    assume_upper: Optional[Vector] = None


class SimulationBlock(_Block):
    x0: Union[Vector, List[Vector]]
    horizon: int = Field(ge=1)
    seed: int = Config.DEFAULT_SEED
    policy: Literal['lex', 'random', 'fair'] = Config.DEFAULT_POLICY
    paired_steps: int = Field(0, ge=0)


class NetworkConfig(_Block):
    """Validated content of a network configuration file"""

    network: NetworkBlock = NetworkBlock()
    subsystem: SubsystemBlock
    modes: List[ModeBlock]
    certificate: Optional[CertificateBlock] = None
    certificate_modes: Dict[int, CertificateModeBlock] = {}
    abstraction: Optional[AbstractionBlock] = None
    spec: Optional[SpecBlock] = None
    simulation: Optional[SimulationBlock] = None

    @property
    def n(self) -> int:
        return len(self.subsystem.state_lower)

    @property
    def wdim(self) -> int:
        return len(self.subsystem.input_lower or [])

    @property
    def y1dim(self) -> int:
        return _shape(self.subsystem.C1)[0]

    @property
    def y2dim(self) -> int:
        return _shape(self.subsystem.C2)[0]

    @model_validator(mode='after')
    def _check_dimensions(self) -> 'NetworkConfig':
        sub, n = self.subsystem, self.n
        if len(sub.state_upper) != n:
            raise ValueError(f"subsystem.state_upper: has {len(sub.state_upper)} entries, state_lower has {n}")
        if (sub.input_lower is None) != (sub.input_upper is None):
            raise ValueError("subsystem.input_upper: input_lower and input_upper must be given together")
        if sub.input_lower is not None and len(sub.input_upper) != len(sub.input_lower):
            raise ValueError("subsystem.input_upper: dimension differs from input_lower")
        for key in ('C1', 'C2'):
            rows, cols = _shape(getattr(sub, key))
            if rows and cols != n:
                raise ValueError(f"subsystem.{key}: has {cols} columns, state dimension is {n}")
        if not self.modes:
            raise ValueError("mode 1: at least one [mode K] section is required")
        for k, mode in enumerate(self.modes, start=1):
            if _shape(mode.A) != (n, n):
                raise ValueError(f"mode {k}.A: expected {n}x{n}, got {_shape(mode.A)[0]}x{_shape(mode.A)[1]}")
            if self.wdim and _shape(mode.D) != (n, self.wdim):
                raise ValueError(f"mode {k}.D: expected {n}x{self.wdim}")
            if not self.wdim and mode.D:
                raise ValueError(f"mode {k}.D: given but the subsystem has no internal input")
            if mode.B is not None and len(mode.B) != n:
                raise ValueError(f"mode {k}.B: expected {n} entries")
        for k in self.certificate_modes:
            if not 1 <= k <= len(self.modes):
                raise ValueError(f"certificate mode {k}: no matching [mode {k}] section")
        if self.spec is not None:
            spec = self.spec
            if len(spec.safe_lower) != self.y1dim or len(spec.safe_upper) != self.y1dim:
                raise ValueError(f"spec.safe_lower: safe box must have the external output dimension {self.y1dim}")
            if (spec.assume_lower is None) != (spec.assume_upper is None):
                raise ValueError("spec.assume_upper: assume_lower and assume_upper must be given together")
            if spec.assume_lower is not None and (len(spec.assume_lower) != self.y2dim
                                                  or len(spec.assume_upper) != self.y2dim):
                raise ValueError(f"spec.assume_lower: assumed box must have the internal output dimension {self.y2dim}")
            if spec.fairness is not None and spec.red_mode > len(self.modes):
                raise ValueError(f"spec.red_mode: mode {spec.red_mode} does not exist")
        if self.simulation is not None:
            x0 = self.simulation.x0
            rows = x0 if x0 and isinstance(x0[0], list) else [x0]
            if any(len(r) != n for r in rows):
                raise ValueError(f"simulation.x0: every initial state needs {n} entries")
            if len(rows) not in (1, self.network.count):
                raise ValueError(f"simulation.x0: give one state or {self.network.count} states")
        if self.network.weights is not None and len(self.network.weights) != self.network.count:
            raise ValueError(f"network.weights: expected {self.network.count} entries")
        return self

    def require(self, command: str) -> None:
        """Fail unless every block the command reads is present"""
        needed = {
            'check-cert': ('certificate',),
            'abstract': ('abstraction',),
            'compose-check': ('certificate', 'abstraction'),
            'synthesize': ('abstraction', 'spec'),
            'simulate': ('abstraction', 'spec', 'simulation'),
            'report': (),
        }
        if command not in needed:
            raise ConfigError(f"unknown command {command!r}")
        for block in needed[command]:
            if getattr(self, block) is None:
                raise ConfigError(f"[{block}] section is required for {command}", section=block)
        if command != 'check-cert' and self.abstraction is not None and self.abstraction.varpi is None \
                and self.abstraction.inputs == 'grid' and self.wdim:
            raise ConfigError("abstraction.varpi: required when inputs = grid", section='abstraction', key='varpi')


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _loc_name(loc: Sequence[Any]) -> str:
    loc = list(loc)
    if not loc:
        return 'config'
    if loc[0] == 'modes' and len(loc) > 1:
        return f"mode {loc[1] + 1}" + ''.join(f".{part}" for part in loc[2:3])
    if loc[0] == 'certificate_modes' and len(loc) > 1:
        return f"certificate mode {loc[1]}" + ''.join(f".{part}" for part in loc[2:3])
    return '.'.join(str(part) for part in loc[:2])


def _read_sections(text: str, source: str, overrides: Optional[Dict[str, str]]) -> Dict[str, Dict[str, Any]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition('.')
        if not section or not key:
            raise ConfigError(f"override {dotted!r} must look like section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))
    return {name: {k: _parse_value(v) for k, v in parser.items(name)} for name in parser.sections()}


def _assemble(sections: Dict[str, Dict[str, Any]]) -> Dict[str, Any]:
    data: Dict[str, Any] = {'certificate_modes': {}}
    modes: Dict[int, Dict[str, Any]] = {}
    for name, values in sections.items():
        mode_match = _MODE_SECTION.match(name)
        cert_match = _CERT_MODE_SECTION.match(name)
        if mode_match:
            modes[int(mode_match.group(1))] = values
        elif cert_match:
            data['certificate_modes'][int(cert_match.group(1))] = values
        elif name in ('network', 'subsystem', 'certificate', 'abstraction', 'spec', 'simulation'):
            data[name] = values
        else:
            raise ConfigError(f"unknown section [{name}]", section=name)
    if modes and sorted(modes) != list(range(1, len(modes) + 1)):
        raise ConfigError(f"mode sections must be numbered 1..{len(modes)}, got {sorted(modes)}")
    data['modes'] = [modes[k] for k in sorted(modes)]
    return data


def parse_config(text: str, source: str = '<config>', overrides: Optional[Dict[str, str]] = None) -> NetworkConfig:
    data = _assemble(_read_sections(text, source, overrides))
    try:
        return NetworkConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        msg = err['msg'].removeprefix('Value error, ')
        where = _loc_name(err['loc'])
        if where == 'config' and ':' in msg:
            where, _, msg = msg.partition(': ')
        raise ConfigError(f"{source}: {where}: {msg}", location=where) from exc


def with_overrides(cfg: NetworkConfig, updates: Dict[str, Any]) -> NetworkConfig:
    """Copy of cfg with ``section.key`` fields replaced; the result is validated again"""
    data = cfg.model_dump()
    for dotted, value in updates.items():
        section, _, key = dotted.partition('.')
        if data.get(section) is None:
            raise ConfigError(f"{dotted}: the config has no [{section}] section to override", section=section)
        data[section][key] = value
    try:
        return NetworkConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(f"{_loc_name(err['loc'])}: {err['msg']}", location=_loc_name(err['loc'])) from exc


def load_config(path, overrides: Optional[Dict[str, str]] = None) -> NetworkConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, source=str(path), overrides=overrides)
    logger.info("loaded %s: %d x %d-state subsystem(s), %d modes", path, cfg.network.count, cfg.n, len(cfg.modes))
    return cfg


def _format_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, tuple):
        value = list(value)
    if isinstance(value, list):
        return json.dumps([list(v) if isinstance(v, tuple) else v for v in value])
    return json.dumps(value)


def _write_block(lines: List[str], name: str, block: Optional[BaseModel]) -> None:
    if block is None:
        return
    lines.append(f"[{name}]")
    for key, value in block.model_dump(exclude_none=True).items():
        lines.append(f"{key} = {_format_value(value)}")
    lines.append('')


def serialize_config(cfg: NetworkConfig) -> str:
    lines: List[str] = []
    _write_block(lines, 'network', cfg.network)
    _write_block(lines, 'subsystem', cfg.subsystem)
    for k, mode in enumerate(cfg.modes, start=1):
        _write_block(lines, f'mode {k}', mode)
    _write_block(lines, 'certificate', cfg.certificate)
    for k in sorted(cfg.certificate_modes):
        _write_block(lines, f'certificate mode {k}', cfg.certificate_modes[k])
    _write_block(lines, 'abstraction', cfg.abstraction)
    _write_block(lines, 'spec', cfg.spec)
    _write_block(lines, 'simulation', cfg.simulation)
    return '\n'.join(lines)


# ---------------------------------------------------------------------------
# Builders from a validated config to library objects

def _box(lower, upper, where: str) -> BoxUnion:
    try:
        return BoxUnion.from_bounds(lower, upper)
    except SymnetError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_subsystems(cfg: NetworkConfig) -> List[SwitchedSubsystem]:
    sub = cfg.subsystem
    state_set = _box(sub.state_lower, sub.state_upper, 'subsystem.state_lower')
    input_set = _box(sub.input_lower, sub.input_upper, 'subsystem.input_lower') if cfg.wdim else None
    modes = [ModeDynamics(np.asarray(m.A, dtype=float),
                          np.asarray(m.D, dtype=float) if m.D else np.zeros((cfg.n, 0)),
                          np.asarray(m.B, dtype=float) if m.B is not None else np.zeros(cfg.n),
                          label=k)
             for k, m in enumerate(cfg.modes, start=1)]
    ell = PowerK(*sub.ell) if sub.ell is not None else None
    C2 = np.asarray(sub.C2, dtype=float) if sub.C2 else np.zeros((0, cfg.n))
    return [SwitchedSubsystem(state_set, input_set, modes, np.asarray(sub.C1, dtype=float), C2,
                              dwell_time=sub.dwell_time, lipschitz_ell=ell,
                              name=f"{cfg.network.name}_{i + 1}")
            for i in range(cfg.network.count)]


def build_coupling(cfg: NetworkConfig) -> np.ndarray:
    N, wd, yd = cfg.network.count, cfg.wdim, cfg.y2dim
    M = np.zeros((N * wd, N * yd))
    net = cfg.network
    if net.coupling is not None:
        for row, col, value in net.coupling:
            if not (1 <= row <= N * wd and 1 <= col <= N * yd):
                raise ConfigError(f"network.coupling: entry ({row}, {col}) outside the {N * wd}x{N * yd} matrix",
                                  section='network', key='coupling')
            M[row - 1, col - 1] = value
        return M
    if net.topology == 'none' or not (wd and yd):
        return M
    if wd != yd:
        raise ConfigError(f"network.topology: {net.topology} needs equal internal input and output dimensions "
                          f"({wd} vs {yd}); give explicit coupling triples", section='network', key='topology')
    block = net.gain * np.eye(wd)
    for i in range(N):
        sources = [(i - 1) % N] if net.topology == 'ring' else [j for j in range(N) if j != i]
        for j in sources:
            M[i * wd:(i + 1) * wd, j * yd:(j + 1) * yd] = block
    return M


def build_network(cfg: NetworkConfig, subsystems: Optional[Sequence[SwitchedSubsystem]] = None,
                  check_well_defined: bool = True) -> NetworkSpec:
    subsystems = subsystems if subsystems is not None else build_subsystems(cfg)
    return NetworkSpec(subsystems, build_coupling(cfg), cfg.network.weights,
                       check_well_defined=check_well_defined)


def _symmetric(mat, where: str) -> SymMatrix:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{where}: must be a square matrix")
    if np.max(np.abs(arr - arr.T)) > _SYMMETRY_TOL:
        logger.warning("%s is not symmetric (max asymmetry %.3g); using (A + A^T)/2",
                       where, float(np.max(np.abs(arr - arr.T))))
    return SymMatrix(arr)


def _resolve(cfg: NetworkConfig, k: int, key: str) -> Any:
    mode_block = cfg.certificate_modes.get(k)
    value = getattr(mode_block, key) if mode_block is not None else None
    return value if value is not None else getattr(cfg.certificate, key)


def build_certificate(cfg: NetworkConfig, sub: SwitchedSubsystem) -> StorageCertificate:
    if cfg.certificate is None:
        raise ConfigError("[certificate] section is missing", section='certificate')
    qdim = cfg.wdim + cfg.y2dim
    Z, Q, kappa, alpha, theta = [], [], [], [], []
    for k in range(1, len(cfg.modes) + 1):
        where = f"certificate mode {k}"
        z = _resolve(cfg, k, 'Z')
        if z is None:
            raise ConfigError(f"{where}.Z: missing and no default in [certificate]")
        if _shape(z) != (cfg.n, cfg.n):
            raise ConfigError(f"{where}.Z: expected {cfg.n}x{cfg.n}")
        Z.append(_symmetric(z, f"{where}.Z"))
        q = _resolve(cfg, k, 'Q')
        if qdim and q is None:
            raise ConfigError(f"{where}.Q: missing and no default in [certificate]")
        if q is not None and _shape(q) != (qdim, qdim):
            raise ConfigError(f"{where}.Q: expected {qdim}x{qdim} ordered [w; y2]")
        Q.append(_symmetric(q, f"{where}.Q") if qdim else None)
        kap = _resolve(cfg, k, 'kappa')
        if kap is None:
            raise ConfigError(f"{where}.kappa: missing and no default in [certificate]")
        kappa.append(float(kap))
        a = _resolve(cfg, k, 'alpha')
        if a is None:
            raise ConfigError(f"{where}.alpha: missing and no default in [certificate]")
        alpha.append(PowerK(*a))
        theta.append(_resolve(cfg, k, 'theta'))
    try:
        cert = StorageCertificate(Z=Z, Q=Q, kappa=kappa, alpha_lower=alpha,
                                  epsilon_exp=cfg.certificate.epsilon, mu=cfg.certificate.mu,
                                  theta=theta if any(t is not None for t in theta) else None)
    except SymnetError as exc:
        exc.details.setdefault('section', 'certificate')
        raise
    return cert.with_gamma(sub.state_set)


def build_safety_spec(cfg: NetworkConfig) -> SafetySpec:
    if cfg.spec is None:
        raise ConfigError("[spec] section is missing", section='spec')
    safe = _box(cfg.spec.safe_lower, cfg.spec.safe_upper, 'spec.safe_lower')
    return SafetySpec(safe, fairness_limit=cfg.spec.fairness, red_mode=cfg.spec.red_mode)


def assumed_input_set(cfg: NetworkConfig) -> Optional[BoxUnion]:
    """Assumed internal outputs of the whole network (one assumed box per subsystem)"""
    spec = cfg.spec
    if spec is None or spec.assume_lower is None:
        return None
    N = cfg.network.count
    return _box(list(spec.assume_lower) * N, list(spec.assume_upper) * N, 'spec.assume_lower')


def initial_states(cfg: NetworkConfig) -> List[np.ndarray]:
    if cfg.simulation is None:
        raise ConfigError("[simulation] section is missing", section='simulation')
    x0 = cfg.simulation.x0
    rows = x0 if x0 and isinstance(x0[0], list) else [x0] * cfg.network.count
    return [np.asarray(r, dtype=float) for r in rows]
