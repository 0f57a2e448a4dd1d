# byzsgd/config.py

"""
Run configuration.

A run is described by an INI file with the sections [experiment], [data],
[objective], [train], [attack] and [seeds]. Missing keys fall back to
DEFAULT_CONFIG; unknown sections or keys and unparsable values raise
ConfigError. The parsed result is a frozen RunConfig of the library's own
spec dataclasses.
"""

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .attacks import AttackKind, AttackSpec
from .datagen import HeteroModelSpec
from .errors import ConfigError
from .model import DomainSpec, ObjectiveKind, ObjectiveSpec
from .seeding import replicate_seed
from .trainer import LRRule, TrainConfig, TrainMode

DEFAULT_OUT_DIR = Path("results")

DEFAULT_CONFIG: Dict[str, Dict[str, str]] = {
    "experiment": {
        "name": "run",
        "replicates": "1",
        "out": str(DEFAULT_OUT_DIR),
        "bench_eps": "0.1,0.2,0.25",
        "bench_attacks": "omniscient_shift,sign_flip,constant,gaussian_noise",
        "bench_seeds": "100",
        "bench_R": "50",
        "bench_d": "20",
        "bench_distance": "50",
        "concentration_m": "10",
        "concentration_d": "2",
        "concentration_eps_prime": "0.2",
        "concentration_seeds": "50",
        "compress_trials": "100000",
        "kappa_ns": "32,64,128,256,512,1024,2048,4096",
        "kappa_replicates": "10",
    },
    "data": {
        "d": "10",
        "R": "20",
        "n": "50",
        "noise_std": "0.1",
        "shift_radius": "0.5",
        "feature_diag": "",
        "base_param": "",
        "homogeneous": "false",
    },
    "objective": {
        "kind": ObjectiveKind.QUADRATIC.value,
        "reg_weight": "0.0",
    },
    "train": {
        "T": "200",
        "mode": TrainMode.SGD.value,
        "b": "8",
        "k": "",
        "eps": "0.1",
        "eps_prime": "0.05",
        "lr_rule": LRRule.STRONGLY_CONVEX.value,
        "lr": "",
        "domain_radius": "inf",
        "sigma0_override": "",
        "upsilon_const": repr(82.0 * math.sqrt(5.0 / 3.0)),
        "independent_coords": "false",
        "threads": "1",
    },
    "attack": {
        "kind": AttackKind.NONE.value,
        "scale": "1.0",
        "vector": "",
        "mobile": "false",
        "eps": "",
    },
    "seeds": {
        "master": "0",
        "data": "",
    },
}


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def wrapped(text: str) -> Any:
        return None if text.strip() == "" else parse(text)

    return wrapped


_PARSERS: Dict[str, Dict[str, Callable[[str], Any]]] = {
    "experiment": {
        "name": str,
        "replicates": int,
        "out": Path,
        "bench_eps": _floats,
        "bench_attacks": _names,
        "bench_seeds": int,
        "bench_R": int,
        "bench_d": int,
        "bench_distance": float,
        "concentration_m": int,
        "concentration_d": int,
        "concentration_eps_prime": float,
        "concentration_seeds": int,
        "compress_trials": int,
        "kappa_ns": _ints,
        "kappa_replicates": int,
    },
    "data": {
        "d": int,
        "R": int,
        "n": int,
        "noise_std": float,
        "shift_radius": float,
        "feature_diag": _optional(_floats),
        "base_param": _optional(_floats),
        "homogeneous": _bool,
    },
    "objective": {"kind": ObjectiveKind, "reg_weight": float},
    "train": {
        "T": int,
        "mode": TrainMode,
        "b": int,
        "k": _optional(int),
        "eps": float,
        "eps_prime": float,
        "lr_rule": LRRule,
        "lr": _optional(float),
        "domain_radius": float,
        "sigma0_override": _optional(float),
        "upsilon_const": float,
        "independent_coords": _bool,
        "threads": int,
    },
    "attack": {
        "kind": AttackKind,
        "scale": float,
        "vector": _optional(_floats),
        "mobile": _bool,
        "eps": _optional(float),
    },
    "seeds": {"master": int, "data": _optional(int)},
}


@dataclass(frozen=True)
class SeedSpec:
    """Master seed for sampling/adversary streams and the data-generation seed"""

    master: int = 0
    data: Optional[int] = None

    def __post_init__(self) -> None:
        if self.master < 0 or (self.data is not None and self.data < 0):
            raise ValueError("Seeds must be non-negative")

    @property
    def data_seed(self) -> int:
        return self.master if self.data is None else self.data

    def for_replicate(self, index: int) -> int:
        return replicate_seed(self.master, index)


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Everything a harness sub-command needs"""

    name: str
    data: HeteroModelSpec
    homogeneous: bool
    objective: ObjectiveSpec
    train: TrainConfig
    attack: AttackSpec
    seeds: SeedSpec
    out: Path = DEFAULT_OUT_DIR
    replicates: int = 1
    harness: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = self.data
        return {
            "name": self.name,
            "data": {
                "d": data.d,
                "R": data.R,
                "n": data.n,
                "noise_std": data.noise_std,
                "shift_radius": data.shift_radius,
                "feature_diag": [float(v) for v in np.diag(data.covariance)],
                "homogeneous": self.homogeneous,
            },
            "objective": {"kind": self.objective.kind.value, "reg_weight": self.objective.reg_weight},
            "train": self.train.to_dict(),
            "attack": self.attack.to_dict(),
            "seeds": {"master": self.seeds.master, "data": self.seeds.data_seed},
            "out": str(self.out),
            "replicates": self.replicates,
            "harness": {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in self.harness.items()},
        }


def _parse_sections(raw: Mapping[str, Mapping[str, str]]) -> Dict[str, Dict[str, Any]]:
    values: Dict[str, Dict[str, Any]] = {}
    for section, parsers in _PARSERS.items():
        given = raw.get(section, {})
        unknown = set(given) - set(parsers)
        if unknown:
            raise ConfigError(f"Unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        values[section] = {}
        for key, parse in parsers.items():
            text = given.get(key, DEFAULT_CONFIG[section][key])
            try:
                values[section][key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key} = {text!r}: {exc}") from exc
    return values


def _read_ini(path: Union[str, Path]) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"Malformed config file {path}: {exc}") from exc
    unknown = set(parser.sections()) - set(_PARSERS)
    if unknown:
        raise ConfigError(f"Unknown section(s): {', '.join(sorted(unknown))}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _check_consistency(
    data: HeteroModelSpec, objective: ObjectiveSpec, train: TrainConfig, attack: AttackSpec
) -> None:
    """Cross-section checks that each section's own validation cannot see"""
    if data.R < 2:
        raise ConfigError(f"[data] R = {data.R}: need at least two workers")
    if train.mode is not TrainMode.FULL_GD and train.b > data.n:
        raise ConfigError(f"[train] b = {train.b} exceeds the local dataset size [data] n = {data.n}")
    if train.mode is TrainMode.COMPRESSED_SGD and train.k is not None and train.k > data.d:
        raise ConfigError(f"[train] k = {train.k} exceeds the dimension [data] d = {data.d}")
    if objective.kind is ObjectiveKind.NONCONVEX and train.lr_rule is LRRule.STRONGLY_CONVEX:
        raise ConfigError(
            f"[objective] kind = {objective.kind.value} has mu = 0; "
            "set [train] lr_rule = nonconvex or manual"
        )
    if attack.kind is AttackKind.CONSTANT and attack.vector is not None and len(attack.vector) != data.d:
        raise ConfigError(f"[attack] vector has {len(attack.vector)} entries, expected d = {data.d}")


def build_config(raw: Mapping[str, Mapping[str, str]]) -> RunConfig:
    """Build a RunConfig from section -> key -> text values"""
    v = _parse_sections(raw)
    exp, data, obj, train, attack, seeds = (
        v["experiment"],
        v["data"],
        v["objective"],
        v["train"],
        v["attack"],
        v["seeds"],
    )
    try:
        cov = None if data["feature_diag"] is None else np.diag(data["feature_diag"])
        base = None if data["base_param"] is None else np.asarray(data["base_param"])
        hetero = HeteroModelSpec(
            d=data["d"],
            R=data["R"],
            n=data["n"],
            feature_cov=cov,
            noise_std=data["noise_std"],
            shift_radius=data["shift_radius"],
            base_param=base,
        )
        objective = ObjectiveSpec(kind=obj["kind"], reg_weight=obj["reg_weight"])
        train_cfg = TrainConfig(
            T=train["T"],
            mode=train["mode"],
            b=train["b"],
            k=train["k"],
            eps=train["eps"],
            eps_prime=train["eps_prime"],
            lr_rule=train["lr_rule"],
            lr=train["lr"],
            domain=DomainSpec(radius=train["domain_radius"]),
            sigma0_override=train["sigma0_override"],
            upsilon_const=train["upsilon_const"],
            independent_coords=train["independent_coords"],
            threads=train["threads"],
        )
        attack_spec = AttackSpec(
            kind=attack["kind"],
            scale=attack["scale"],
            vector=None if attack["vector"] is None else np.asarray(attack["vector"]),
            mobile=attack["mobile"],
            eps=train["eps"] if attack["eps"] is None else attack["eps"],
        )
        seed_spec = SeedSpec(master=seeds["master"], data=seeds["data"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if exp["replicates"] < 1:
        raise ConfigError(f"replicates must be >= 1, got {exp['replicates']}")
    _check_consistency(hetero, objective, train_cfg, attack_spec)

    harness = {k: val for k, val in exp.items() if k not in ("name", "replicates", "out")}
    return RunConfig(
        name=exp["name"],
        data=hetero,
        homogeneous=data["homogeneous"],
        objective=objective,
        train=train_cfg,
        attack=attack_spec,
        seeds=seed_spec,
        out=exp["out"],
        replicates=exp["replicates"],
        harness=harness,
    )


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Parse ``path`` (or the defaults alone when None) into a RunConfig"""
    raw = _read_ini(path) if path is not None else {}
    return build_config(raw)


def apply_overrides(
    config: RunConfig,
    seed: Optional[int] = None,
    out: Optional[Union[str, Path]] = None,
    replicates: Optional[int] = None,
    threads: Optional[int] = None,
    sigma0_sq: Optional[float] = None,
) -> RunConfig:
    """Command-line flags take precedence over file values"""
    changes: Dict[str, Any] = {}
    try:
        if seed is not None:
            changes["seeds"] = replace(config.seeds, master=seed)
        if out is not None:
            changes["out"] = Path(out)
        if replicates is not None:
            if replicates < 1:
                raise ConfigError(f"replicates must be >= 1, got {replicates}")
            changes["replicates"] = replicates
        train_changes: Dict[str, Any] = {}
        if threads is not None:
            train_changes["threads"] = threads
        if sigma0_sq is not None:
            train_changes["sigma0_override"] = sigma0_sq
        if train_changes:
            changes["train"] = replace(config.train, **train_changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return replace(config, **changes) if changes else config


def harness_value(config: RunConfig, key: str) -> Any:
    try:
        return config.harness[key]
    except KeyError:
        raise ConfigError(f"Missing harness setting {key!r}") from None


def bench_grid(config: RunConfig) -> Tuple[List[float], List[AttackKind]]:
    """eps_tilde values and attack kinds swept by rge-bench"""
    try:
        kinds = [AttackKind(name) for name in harness_value(config, "bench_attacks")]
    except ValueError as exc:
        raise ConfigError(f"bench_attacks: {exc}") from exc
    return list(harness_value(config, "bench_eps")), kinds
