"""Run configuration: an INI-style key-value file plus CLI overrides.

Example::

    [sweep]
    d_model_start = 4736
    d_model_stop = 133504
    points = 9
    seq_len = 2048

    [gpu]
    name = B100
    years = 0

    [search]
    deadline = 3 months

    [carbon]
    carbon_intensity = 127
    lifetime = 5 years

    [scenarios]
    run = default, no_emb, low_static

Custom GPUs go in ``[gpu.<NAME>]`` sections carrying every ``GpuSpec``
field; custom curves in ``[scenario.<NAME>]`` sections carrying
``ScenarioConfig`` fields.  Unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .carbon import CarbonParams, SECONDS_PER_YEAR
from .hardware import GpuSpec, HardwareError, ScalingRates, builtin_gpu
from .perf_model import PerfParams
from .scaling_laws import ScalingConstants, ScalingError, geometric_d_models
from .scenarios import AGGRESSIVE_BATCH_EXPONENT, EVICTION_MEM_FACTOR, SHARDING_COMM_FACTOR, Context, ScenarioConfig
from .search import SearchConfig


class ConfigError(ValueError):
    pass


_UNITS = {
    "s": 1.0, "sec": 1.0, "second": 1.0, "seconds": 1.0,
    "min": 60.0, "minute": 60.0, "minutes": 60.0,
    "h": 3600.0, "hour": 3600.0, "hours": 3600.0,
    "d": 86400.0, "day": 86400.0, "days": 86400.0,
    "month": 30 * 86400.0, "months": 30 * 86400.0,
    "y": SECONDS_PER_YEAR, "year": SECONDS_PER_YEAR, "years": SECONDS_PER_YEAR,
}


def parse_duration(text: str) -> float:
    """Seconds from ``"3 months"``, ``"90 days"``, ``"1.5h"`` or a bare number of seconds.

    A month is exactly 30 days and a year 365 days.
    """
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([A-Za-z]*)\s*", str(text))
    if not m:
        raise ConfigError(f"cannot parse duration {text!r}")
    value, unit = m.groups()
    try:
        number = float(value)
    except ValueError:
        raise ConfigError(f"cannot parse duration {text!r}") from None
    unit = unit.lower() or "s"
    if unit not in _UNITS:
        raise ConfigError(f"unknown duration unit {unit!r} in {text!r}")
    if number < 0:
        raise ConfigError(f"duration must be non-negative: {text!r}")
    return number * _UNITS[unit]


def _coerce(raw: str, default: Any, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if re.fullmatch(r"[0-9.eE+]+", raw.strip()) else int(raw)
        if default is None:
            value = float(raw)
            return int(value) if value.is_integer() else value
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: invalid value {raw!r}") from None


def _build(cls, section: configparser.SectionProxy, where: str, aliases: dict = None,
           base=None, provenance: Optional[dict] = None):
    aliases = aliases or {}
    known = {f.name: f for f in fields(cls)}
    base = base if base is not None else cls()
    kwargs = {}
    for key, raw in section.items():
        target, conv = aliases.get(key, (key, None))
        if target not in known:
            raise ConfigError(f"unknown key {where}.{key}")
        if conv is not None:
            kwargs[target] = conv(raw)
        else:
            kwargs[target] = _coerce(raw, getattr(base, target), f"{where}.{key}")
        if provenance is not None:
            provenance[f"{where}.{target}"] = "override"
    try:
        return replace(base, **kwargs)
    except (ValueError, HardwareError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _gpu_from_section(name: str, section: configparser.SectionProxy) -> GpuSpec:
    kwargs = {"name": name}
    required = {f.name for f in fields(GpuSpec) if f.default is MISSING} - {"name"}
    known = {f.name: f for f in fields(GpuSpec)}
    for key, raw in section.items():
        if key not in known or key == "name":
            raise ConfigError(f"unknown key gpu.{name}.{key}")
        kwargs[key] = raw.strip() if known[key].type in ("str", str) else _coerce(raw, 0.0, f"gpu.{name}.{key}")
    missing = required - set(kwargs)
    if missing:
        raise ConfigError(f"gpu.{name}: missing {', '.join(sorted(missing))}")
    try:
        return GpuSpec(**kwargs)
    except HardwareError as exc:
        raise ConfigError(f"gpu.{name}: {exc}") from None


NAMED_SCENARIOS = {
    "default": {},
    "ideal": {"ideal_mode": True},
    "no_emb": {"embodied_enabled": False},
    "low_static": {"static_swap": True},
    "median": {"median_parallelism": True},
    "batch_0.33": {"batch_exponent": AGGRESSIVE_BATCH_EXPONENT},
    "sharding": {"sharding_comm_factor": SHARDING_COMM_FACTOR},
    "eviction": {"eviction_mem_factor": EVICTION_MEM_FACTOR},
    "4Y": {"years": 4.0},
    "8Y": {"years": 8.0},
    "8Y_batch_0.33": {"years": 8.0, "batch_exponent": AGGRESSIVE_BATCH_EXPONENT},
}

DEFAULT_D_RANGE = (4736, 133504, 9)  # ~1e11 .. ~1e15 active parameters


@dataclass
class RunConfig:
    d_models: list = field(default_factory=lambda: geometric_d_models(*DEFAULT_D_RANGE))
    seq_len: int = 2048
    gpu: str = "B100"
    years: float = 0.0
    consts: ScalingConstants = ScalingConstants()
    rates: ScalingRates = ScalingRates()
    perf: PerfParams = PerfParams()
    search: SearchConfig = SearchConfig()
    carbon: CarbonParams = CarbonParams()
    custom_gpus: dict = field(default_factory=dict)
    scenario_names: list = field(default_factory=lambda: ["default"])
    custom_scenarios: dict = field(default_factory=dict)
    out_dir: str = "results"
    workers: int = 1
    provenance: dict = field(default_factory=dict)

    def context(self) -> Context:
        return Context(carbon=self.carbon, search=self.search, perf=self.perf,
                       rates=self.rates, consts=self.consts, custom_gpus=dict(self.custom_gpus))

    def base_gpu(self) -> GpuSpec:
        if self.gpu in self.custom_gpus:
            return self.custom_gpus[self.gpu]
        try:
            return builtin_gpu(self.gpu)
        except HardwareError as exc:
            raise ConfigError(f"gpu.name: {exc}") from None

    def scenarios(self) -> list[ScenarioConfig]:
        out = []
        for name in self.scenario_names:
            if name in self.custom_scenarios:
                out.append(self.custom_scenarios[name])
                continue
            if name not in NAMED_SCENARIOS:
                raise ConfigError(
                    f"scenarios.run: unknown scenario {name!r}; choose from "
                    f"{', '.join(list(NAMED_SCENARIOS) + list(self.custom_scenarios))}"
                )
            label = self.gpu if name == "default" else name
            out.append(ScenarioConfig(name=label, gpu=self.gpu, **{"years": self.years, **NAMED_SCENARIOS[name]}))
        return out

    def resolved(self) -> dict:
        """Everything that determines the numbers (not where or how fast they are written)."""
        return {
            "d_models": list(self.d_models), "seq_len": self.seq_len, "gpu": self.gpu,
            "years": self.years, "scaling": asdict(self.consts), "rates": asdict(self.rates),
            "perf": asdict(self.perf), "search": asdict(self.search), "carbon": asdict(self.carbon),
            "custom_gpus": {k: v.as_dict() for k, v in sorted(self.custom_gpus.items())},
            "scenarios": [asdict(s) for s in self.scenarios()],
        }

    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()

    def header(self) -> str:
        return f"# carbonlaw {__version__} config_sha256={self.digest()}"


_SECTIONS = {"sweep", "scaling", "gpu", "rates", "perf", "search", "carbon", "scenarios", "output"}


def _split_list(raw: str) -> list[str]:
    return [tok for tok in re.split(r"[,\s]+", raw.strip()) if tok]


def load_config(path: Optional[str | Path] = None, text: Optional[str] = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        elif text is not None:
            parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    cfg = RunConfig()
    prov = cfg.provenance

    for name in parser.sections():
        base = name.split(".", 1)[0]
        if name not in _SECTIONS and base not in ("gpu", "scenario"):
            raise ConfigError(f"unknown section [{name}]")
        if base == "scenario" and "." not in name:
            raise ConfigError("scenario sections must be named [scenario.<name>]")

    if parser.has_section("sweep"):
        sec = dict(parser["sweep"])
        allowed = {"d_models", "d_model_start", "d_model_stop", "points", "seq_len"}
        for key in sec:
            if key not in allowed:
                raise ConfigError(f"unknown key sweep.{key}")
            prov[f"sweep.{key}"] = "override"
        try:
            if "d_models" in sec:
                cfg.d_models = [int(tok) for tok in _split_list(sec["d_models"])]
            elif {"d_model_start", "d_model_stop", "points"} & set(sec):
                start = int(sec.get("d_model_start", DEFAULT_D_RANGE[0]))
                stop = int(sec.get("d_model_stop", DEFAULT_D_RANGE[1]))
                points = int(sec.get("points", DEFAULT_D_RANGE[2]))
                cfg.d_models = geometric_d_models(start, stop, points)
            if "seq_len" in sec:
                cfg.seq_len = int(sec["seq_len"])
        except (ValueError, ScalingError) as exc:
            raise ConfigError(f"[sweep] {exc}") from None

    if parser.has_section("scaling"):
        cfg.consts = _build(ScalingConstants, parser["scaling"], "scaling", provenance=prov)
    if parser.has_section("rates"):
        cfg.rates = _build(ScalingRates, parser["rates"], "rates", provenance=prov)
    if parser.has_section("perf"):
        cfg.perf = _build(PerfParams, parser["perf"], "perf", provenance=prov)
    if parser.has_section("search"):
        cfg.search = _build(SearchConfig, parser["search"], "search",
                            aliases={"deadline": ("deadline_s", parse_duration)}, provenance=prov)
    if parser.has_section("carbon"):
        cfg.carbon = _build(CarbonParams, parser["carbon"], "carbon",
                            aliases={"lifetime": ("lifetime_s", parse_duration)}, provenance=prov)

    for name in parser.sections():
        if name.startswith("gpu."):
            gname = name.split(".", 1)[1]
            cfg.custom_gpus[gname] = _gpu_from_section(gname, parser[name])
            prov[name] = "override"

    if parser.has_section("gpu"):
        for key, raw in parser["gpu"].items():
            if key == "name":
                cfg.gpu = raw.strip()
            elif key == "years":
                try:
                    cfg.years = float(raw)
                except ValueError:
                    raise ConfigError(f"gpu.years: invalid value {raw!r}") from None
                if cfg.years < 0:
                    raise ConfigError("gpu.years must be non-negative")
            else:
                raise ConfigError(f"unknown key gpu.{key}")
            prov[f"gpu.{key}"] = "override"

    for name in parser.sections():
        if name.startswith("scenario."):
            sname = name.split(".", 1)[1]
            base = ScenarioConfig(name=sname, gpu=cfg.gpu, years=cfg.years)
            cfg.custom_scenarios[sname] = _build(ScenarioConfig, parser[name], name, base=base)

    if parser.has_section("scenarios"):
        for key, raw in parser["scenarios"].items():
            if key != "run":
                raise ConfigError(f"unknown key scenarios.{key}")
            cfg.scenario_names = _split_list(raw)
            prov["scenarios.run"] = "override"

    if parser.has_section("output"):
        for key, raw in parser["output"].items():
            if key == "dir":
                cfg.out_dir = raw.strip()
            elif key == "workers":
                cfg.workers = _coerce(raw, 1, "output.workers")
            else:
                raise ConfigError(f"unknown key output.{key}")

    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Check cross-field consistency before any computation."""
    if cfg.workers < 1:
        raise ConfigError("output.workers must be >= 1")
    if not cfg.d_models:
        raise ConfigError("sweep.d_models is empty")
    if cfg.seq_len < 1:
        raise ConfigError("sweep.seq_len must be positive")
    cfg.base_gpu()
    try:
        cfg.scenarios()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
