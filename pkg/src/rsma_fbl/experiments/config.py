"""Scenario files.

A scenario is an INI file with four sections::

    [scenario]   scenario_id, snr_db, output_path
    [channel]    kind = underloaded | overloaded | random, plus its parameters
    [sweep]      blocklengths, r_th_bits, schemes
    [bler]       rsma, sdma, noma
    [solver]     tol, max_newton, sca_tol, max_sca_iter, restarts, seed   (optional)

Lists are comma separated. ``blocklengths`` also accepts ``start:stop:step``
(stop inclusive). ``r_th_bits`` is either one value applied to every
blocklength or one value per blocklength.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..fbl_rate import FblParams
from ..model import ChannelSet, structured_channels_overloaded, structured_channels_underloaded, random_channels
from ..schemes import NOMA, RSMA, SDMA, default_bler_map
from ..sca import SolveOptions

CHANNEL_KINDS = ("underloaded", "overloaded", "random")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Underloaded4x2:
    theta_deg: float
    gamma: float
    kind = "underloaded"

    def draw(self, index: int, base_seed: int) -> ChannelSet:
        return structured_channels_underloaded(math.radians(self.theta_deg), self.gamma)

    @property
    def num_draws(self) -> int:
        return 1


@dataclass(frozen=True)
class Overloaded2x4:
    theta1_deg: float
    gamma1: float
    kind = "overloaded"

    def draw(self, index: int, base_seed: int) -> ChannelSet:
        return structured_channels_overloaded(math.radians(self.theta1_deg), self.gamma1)

    @property
    def num_draws(self) -> int:
        return 1


@dataclass(frozen=True)
class RandomChannels:
    num_tx: int
    num_users: int
    variances: tuple
    num_draws: int
    kind = "random"

    def draw(self, index: int, base_seed: int) -> ChannelSet:
        # draw d of a run seeded s uses generator seed s + d
        return random_channels(self.num_tx, self.num_users, self.variances, base_seed + index)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    channel_spec: object
    snr_db: float
    blocklengths: tuple
    qos_schedule: tuple                 # (blocklength, r_th) pairs
    bler_map: dict = field(default_factory=default_bler_map)
    schemes: tuple = (RSMA, SDMA, NOMA)
    solver_opts: SolveOptions = field(default_factory=SolveOptions)
    output_path: str = "results.csv"
    base_seed: int = 0

    def __post_init__(self):
        ls = list(self.blocklengths)
        if any(not (isinstance(b, (int, np.integer)) and b > 0) for b in ls):
            raise ConfigError(f"[sweep] blocklengths: must be positive integers, got {ls}")
        if any(b >= a for a, b in zip(ls[1:], ls)):
            raise ConfigError("[sweep] blocklengths: must be strictly increasing")
        have = {b for b, _ in self.qos_schedule}
        missing = [b for b in ls if b not in have]
        if missing:
            raise ConfigError(f"[sweep] r_th_bits: no QoS entry for blocklength(s) {missing}")
        for name, eps in self.bler_map.items():
            if not 0.0 < eps < 0.5:
                raise ConfigError(f"[bler] {name}: must lie in (0, 0.5), got {eps}")
        for s in self.schemes:
            if s not in (RSMA, SDMA, NOMA):
                raise ConfigError(f"[sweep] schemes: unknown scheme {s!r}")
            if s not in self.bler_map:
                raise ConfigError(f"[bler] {s}: missing")
        if RSMA not in self.schemes:
            raise ConfigError("[sweep] schemes: rsma is required (it is the selector curve)")
        if NOMA in self.schemes and self.num_users != 2:
            raise ConfigError(f"[sweep] schemes: noma needs exactly two users, scenario has {self.num_users}")

    @property
    def num_users(self) -> int:
        spec = self.channel_spec
        if isinstance(spec, Underloaded4x2):
            return 2
        if isinstance(spec, Overloaded2x4):
            return 4
        return spec.num_users

    @property
    def num_draws(self) -> int:
        return self.channel_spec.num_draws

    def qos_for(self, blocklength: int) -> float:
        return dict(self.qos_schedule)[blocklength]

    def fbl_params(self, blocklength: int) -> dict:
        return {s: FblParams(blocklength, eps) for s, eps in self.bler_map.items()}

    def with_overrides(self, seed: int | None = None, draws: int | None = None, out: str | None = None,
                       tol: float | None = None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, base_seed=int(seed))
        if draws is not None:
            if not isinstance(cfg.channel_spec, RandomChannels):
                raise ConfigError("--draws only applies to random channel scenarios")
            if draws < 1:
                raise ConfigError(f"--draws must be positive, got {draws}")
            cfg = replace(cfg, channel_spec=replace(cfg.channel_spec, num_draws=int(draws)))
        if out is not None:
            cfg = replace(cfg, output_path=str(out))
        if tol is not None:
            if not tol > 0:
                raise ConfigError(f"--tol must be positive, got {tol}")
            cfg = replace(cfg, solver_opts=replace(cfg.solver_opts, tol=float(tol)))
        return cfg


def _get(cp: configparser.ConfigParser, section: str, key: str, conv=str, default=None):
    if not cp.has_option(section, key):
        if default is None:
            raise ConfigError(f"[{section}] {key}: missing")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _floats(raw: str) -> list[float]:
    return [float(x) for x in raw.replace("\n", ",").split(",") if x.strip()]


def _blocklengths(raw: str) -> list[int]:
    out = []
    for part in raw.replace("\n", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            start, stop, step = (int(float(x)) for x in part.split(":"))
            if step <= 0:
                raise ValueError(f"non-positive step in {part!r}")
            out.extend(range(start, stop + 1, step))
        else:
            v = float(part)
            if v != int(v):
                raise ValueError(f"{part!r} is not an integer")
            out.append(int(v))
    return out


def _channel(cp: configparser.ConfigParser):
    kind = _get(cp, "channel", "kind").lower()
    if kind == "underloaded":
        return Underloaded4x2(_get(cp, "channel", "theta_deg", float), _get(cp, "channel", "gamma", float))
    if kind == "overloaded":
        return Overloaded2x4(_get(cp, "channel", "theta1_deg", float), _get(cp, "channel", "gamma1", float))
    if kind == "random":
        nt = _get(cp, "channel", "num_tx", int)
        k = _get(cp, "channel", "num_users", int)
        var = tuple(_get(cp, "channel", "variances", _floats))
        if len(var) != k:
            raise ConfigError(f"[channel] variances: expected {k} values, got {len(var)}")
        if nt < 1 or k < 1 or any(v <= 0 for v in var):
            raise ConfigError("[channel] num_tx, num_users and variances must be positive")
        draws = _get(cp, "channel", "num_draws", int)
        if draws < 1:
            raise ConfigError(f"[channel] num_draws: must be positive, got {draws}")
        return RandomChannels(nt, k, var, draws)
    raise ConfigError(f"[channel] kind: expected one of {CHANNEL_KINDS}, got {kind!r}")


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec in ("scenario", "channel", "sweep"):
        if not cp.has_section(sec):
            raise ConfigError(f"{source}: missing section [{sec}]")
    try:
        ls = _get(cp, "sweep", "blocklengths", _blocklengths)
        rth = _get(cp, "sweep", "r_th_bits", _floats)
        if len(rth) == 1:
            qos = tuple((b, rth[0]) for b in ls)
        elif len(rth) == len(ls):
            qos = tuple(zip(ls, rth))
        else:
            raise ConfigError(f"[sweep] r_th_bits: expected 1 or {len(ls)} values, got {len(rth)}")
        if any(r < 0 for r in rth):
            raise ConfigError("[sweep] r_th_bits: must be non-negative")
        schemes = tuple(s.strip().lower() for s in _get(cp, "sweep", "schemes", str, "rsma, sdma").split(",")
                        if s.strip())
        bler = default_bler_map()
        if cp.has_section("bler"):
            for key in cp.options("bler"):
                bler[key] = _get(cp, "bler", key, float)
        base = SolveOptions()
        opts = base
        seed = 0
        if cp.has_section("solver"):
            opts = SolveOptions(
                tol=_get(cp, "solver", "tol", float, base.tol),
                max_newton=_get(cp, "solver", "max_newton", int, base.max_newton),
                sca_tol=_get(cp, "solver", "sca_tol", float, base.sca_tol),
                max_sca_iter=_get(cp, "solver", "max_sca_iter", int, base.max_sca_iter),
                restarts=_get(cp, "solver", "restarts", int, base.restarts),
                seed=_get(cp, "solver", "restart_seed", int, base.seed),
            )
            seed = _get(cp, "solver", "seed", int, 0)
        return ScenarioConfig(
            scenario_id=_get(cp, "scenario", "scenario_id"),
            channel_spec=_channel(cp),
            snr_db=_get(cp, "scenario", "snr_db", float),
            blocklengths=tuple(ls),
            qos_schedule=qos,
            bler_map=bler,
            schemes=schemes,
            solver_opts=opts,
            output_path=_get(cp, "scenario", "output_path", str, f"{_get(cp, 'scenario', 'scenario_id')}.csv"),
            base_seed=seed,
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), source=str(p))


def template_names() -> list[str]:
    return sorted(f.stem for f in (Path(__file__).parent / "templates").glob("*.ini"))


def template_text(name: str) -> str:
    p = Path(__file__).parent / "templates" / f"{name}.ini"
    if not p.is_file():
        raise ConfigError(f"unknown template {name!r}; available: {', '.join(template_names())}")
    return p.read_text()
