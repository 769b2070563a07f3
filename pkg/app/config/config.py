"""
Configuration Management System
Loads JSON run configurations into typed sections, applies defaults and
environment overrides, and validates everything with path-style diagnostics
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from app.core.errors import InputValidationError

logger = logging.getLogger(__name__)


@dataclass
class SystemConfig:
    """Control system: a catalog name or per-component DSL expressions"""
    catalog: Optional[str] = None               # integrator | affine | rotator | saturating
    expressions: Optional[List[str]] = None     # One expression per state component
    n: Optional[int] = None                     # Required with expressions
    m: Optional[int] = None
    gamma1: Optional[float] = None              # Declared constants; override catalog values when set
    gamma2: Optional[float] = None
    gamma3: Optional[float] = None
    c: Optional[float] = None
    label: Optional[str] = None
    validation_radius: Optional[float] = None   # State radius the constants hold on (None = global)


@dataclass
class InstanceConfig:
    """Horizon, initial state and control budget"""
    t0: float = 0.0
    theta: float = 1.0
    x0: Optional[List[float]] = None    # Defaults to the origin
    p: float = 2.0                      # Norm exponent, > 1
    r: float = 1.0                      # Budget radius, >= 0


@dataclass
class PlanConfig:
    """
    Discretization: direct mode sets beta, N, q and sigma; epsilon mode sets
    epsilon (and optionally R_star) and derives the rest
    """
    beta: Optional[float] = None
    N: Optional[int] = None
    q: Optional[int] = None
    sigma: Optional[float] = None
    epsilon: Optional[float] = None
    R_star: Optional[float] = None      # Lipschitz parameter of the averaging step (default 1)
    omega_slope: Optional[float] = None # Analytic modulus omega(s) = slope * s instead of sampling
    grid_density: int = 64              # Omega sampler base points

    @property
    def mode(self) -> str:
        return "epsilon" if self.epsilon is not None else "direct"


@dataclass
class OracleConfig:
    """Reference RK4 integration"""
    substeps: int = 32          # RK4 steps per grid interval
    enabled: bool = True        # Build the oracle bundle during `run`


@dataclass
class CapsConfig:
    """Hard limits guarding memory and runtime"""
    words: int = 10_000_000
    steps: int = 100_000        # Time steps N in epsilon mode
    levels: int = 100_000       # Magnitude steps q in epsilon mode
    net_points: int = 1_000_000


@dataclass
class SamplingConfig:
    """Sample counts of the statistical validators"""
    validation_samples: int = 100_000
    covering_samples: int = 100_000
    growth_x_radius: Optional[float] = None     # Defaults to alpha_star
    growth_u_radius: Optional[float] = None     # Defaults to beta


@dataclass
class StudyConfig:
    """Convergence study over refining plans"""
    plans: List[Dict[str, Any]] = field(default_factory=list)   # Each with beta, N, q, sigma
    reference_plan: Optional[Dict[str, Any]] = None             # Oracle bundle reference
    reference_points: Optional[Union[List[Any], str]] = None    # Theta-slice points, inline or CSV path
    reference_substeps: int = 64
    record_wall_time: bool = False


@dataclass
class OutputConfig:
    out_dir: str = "output"
    write_words: bool = True
    write_bundle: bool = True
    distance: bool = True       # Euler vs oracle distances during `run`


@dataclass
class LoggingConfig:
    level: str = "INFO"
    file: Optional[str] = None
    progress_every: int = 0     # Log every k enumerated words (0 = off)


SECTIONS = {
    "system": SystemConfig,
    "instance": InstanceConfig,
    "plan": PlanConfig,
    "oracle": OracleConfig,
    "caps": CapsConfig,
    "sampling": SamplingConfig,
    "study": StudyConfig,
    "output": OutputConfig,
    "logging": LoggingConfig,
}


@dataclass
class RunConfig:
    """Fully validated run configuration"""
    system: SystemConfig
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    caps: CapsConfig = field(default_factory=CapsConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    seed: int = 0

    @property
    def mode(self) -> str:
        return self.plan.mode

    def with_overrides(self, out_dir: Optional[str] = None, seed: Optional[int] = None,
                       word_cap: Optional[int] = None) -> "RunConfig":
        """Copy with command-line overrides applied"""
        config = self
        if out_dir is not None:
            config = replace(config, output=replace(config.output, out_dir=out_dir))
        if seed is not None:
            config = replace(config, seed=seed)
        if word_cap is not None:
            if word_cap < 1:
                raise InputValidationError("--cap must be positive", cap=word_cap)
            config = replace(config, caps=replace(config.caps, words=word_cap))
        return config

    def to_dict(self) -> Dict[str, Any]:
        echo = asdict(self)
        echo["mode"] = self.mode
        return echo


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_integer(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


class ConfigManager:
    """
    Loads a run configuration with environment-based overrides.
    All problems are collected and reported together.
    """

    def __init__(self, config_path: Optional[str] = None, data: Optional[Dict[str, Any]] = None,
                 env_file: Optional[str] = ".env"):
        self.config_path = config_path
        self.env_file = env_file
        self.errors: List[str] = []
        self._load_environment()

        raw = self._load_file() if data is None else data
        if not isinstance(raw, dict):
            raise InputValidationError("Configuration root must be an object")
        self.raw = raw

        sections = self._build_sections(raw)
        seed = raw.get("seed", 0)
        self.config = RunConfig(seed=seed, **sections)

        self._load_from_environment()
        self._validate_config()

    def _load_environment(self):
        """Load environment variables from .env file if provided"""
        if self.env_file and Path(self.env_file).exists():
            try:
                with open(self.env_file, "r", encoding="utf-8") as f:
                    for line in f:
                        line = line.strip()
                        if line and not line.startswith("#") and "=" in line:
                            key, value = line.split("=", 1)
                            os.environ.setdefault(key.strip(), value.strip())
            except OSError as e:
                logger.warning(f"Error loading .env file: {e}")

    def _load_file(self) -> Dict[str, Any]:
        if self.config_path is None:
            raise InputValidationError("No configuration file given")
        path = Path(self.config_path)
        if not path.exists():
            raise InputValidationError(f"Configuration file not found: {path}", path=str(path))
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InputValidationError(f"Configuration file is not valid JSON: {e.msg}",
                                       path=str(path), line=e.lineno, column=e.colno) from e

    def _build_sections(self, raw: Dict[str, Any]) -> Dict[str, Any]:
        sections: Dict[str, Any] = {}
        for key in raw:
            if key not in SECTIONS and key != "seed":
                self.errors.append(f"{key}: unknown section")

        for name, cls in SECTIONS.items():
            values = raw.get(name)
            if values is None:
                if name == "system":
                    self.errors.append("system: required section is missing")
                sections[name] = cls()
                continue
            if not isinstance(values, dict):
                self.errors.append(f"{name}: expected an object")
                sections[name] = cls()
                continue
            known = {f.name for f in fields(cls)}
            accepted = {}
            for key, value in values.items():
                if key in known:
                    accepted[key] = value
                else:
                    self.errors.append(f"{name}.{key}: unknown key")
            sections[name] = cls(**accepted)
        return sections

    def _load_from_environment(self):
        """Override file values with environment variables"""
        config = self.config
        for variable, section, key in (
            ("FUNNELKIT_SEED", None, "seed"),
            ("FUNNELKIT_WORD_CAP", config.caps, "words"),
        ):
            value = os.getenv(variable)
            if value is None:
                continue
            try:
                parsed = int(value)
            except ValueError:
                self.errors.append(f"env {variable}: expected an integer, got {value!r}")
                continue
            if section is None:
                config.seed = parsed
            else:
                setattr(section, key, parsed)

        config.output.out_dir = os.getenv("FUNNELKIT_OUT_DIR", config.output.out_dir)
        config.logging.level = os.getenv("LOG_LEVEL", config.logging.level)

    def _check_number(self, path: str, value: Any, *, integer: bool = False, minimum: Optional[float] = None,
                      strict: bool = False, optional: bool = True) -> None:
        if value is None:
            if not optional:
                self.errors.append(f"{path}: required")
            return
        if integer and not _is_integer(value):
            self.errors.append(f"{path}: expected an integer, got {value!r}")
            return
        if not _is_number(value):
            self.errors.append(f"{path}: expected a number, got {value!r}")
            return
        if minimum is not None:
            if strict and not value > minimum:
                self.errors.append(f"{path}: must be greater than {minimum:g}, got {value!r}")
            elif not strict and not value >= minimum:
                self.errors.append(f"{path}: must be at least {minimum:g}, got {value!r}")

    def _validate_system(self, system: SystemConfig) -> None:
        if (system.catalog is None) == (system.expressions is None):
            self.errors.append("system: set exactly one of 'catalog' and 'expressions'")
        if system.catalog is not None and not isinstance(system.catalog, str):
            self.errors.append("system.catalog: expected a string")
        if system.expressions is not None:
            if not isinstance(system.expressions, list) or not all(isinstance(e, str) for e in system.expressions):
                self.errors.append("system.expressions: expected a list of strings")
            self._check_number("system.n", system.n, integer=True, minimum=1, optional=False)
            self._check_number("system.m", system.m, integer=True, minimum=1, optional=False)
            for name in ("gamma1", "gamma2", "gamma3"):
                self._check_number(f"system.{name}", getattr(system, name), minimum=0, optional=False)
            self._check_number("system.c", system.c, minimum=0, strict=True, optional=False)
        else:
            for name in ("gamma1", "gamma2", "gamma3"):
                self._check_number(f"system.{name}", getattr(system, name), minimum=0)
            self._check_number("system.c", system.c, minimum=0, strict=True)
        self._check_number("system.validation_radius", system.validation_radius, minimum=0, strict=True)

    def _validate_plan(self, plan: PlanConfig) -> None:
        direct_keys = ("beta", "N", "q", "sigma")
        if plan.epsilon is not None:
            mixed = [key for key in direct_keys if getattr(plan, key) is not None]
            if mixed:
                self.errors.append(f"plan: mode conflict, epsilon cannot be combined with {', '.join(mixed)}")
            self._check_number("plan.epsilon", plan.epsilon, minimum=0, strict=True)
        else:
            self._check_number("plan.beta", plan.beta, minimum=0, strict=True, optional=False)
            self._check_number("plan.N", plan.N, integer=True, minimum=1, optional=False)
            self._check_number("plan.q", plan.q, integer=True, minimum=1, optional=False)
            self._check_number("plan.sigma", plan.sigma, minimum=0, strict=True, optional=False)
        self._check_number("plan.R_star", plan.R_star, minimum=0, strict=True)
        self._check_number("plan.omega_slope", plan.omega_slope, minimum=0)
        self._check_number("plan.grid_density", plan.grid_density, integer=True, minimum=2, optional=False)

    def _validate_study(self, study: StudyConfig) -> None:
        if not isinstance(study.plans, list):
            self.errors.append("study.plans: expected a list")
            return
        for k, entry in enumerate(study.plans):
            if not isinstance(entry, dict):
                self.errors.append(f"study.plans[{k}]: expected an object")
                continue
            for key in ("beta", "sigma"):
                self._check_number(f"study.plans[{k}].{key}", entry.get(key), minimum=0, strict=True, optional=False)
            for key in ("N", "q"):
                self._check_number(f"study.plans[{k}].{key}", entry.get(key), integer=True, minimum=1, optional=False)
        if study.plans and (study.reference_plan is None) == (study.reference_points is None):
            self.errors.append("study: set exactly one of 'reference_plan' and 'reference_points'")
        if isinstance(study.reference_points, str) and not Path(study.reference_points).exists():
            self.errors.append(f"study.reference_points: file not found: {study.reference_points}")
        self._check_number("study.reference_substeps", study.reference_substeps, integer=True, minimum=1,
                           optional=False)

    def _validate_config(self):
        """Validate all sections; raise with every problem listed"""
        config = self.config
        self._validate_system(config.system)

        instance = config.instance
        self._check_number("instance.t0", instance.t0, optional=False)
        self._check_number("instance.theta", instance.theta, optional=False)
        if _is_number(instance.t0) and _is_number(instance.theta) and instance.theta <= instance.t0:
            self.errors.append("instance.theta: must be greater than instance.t0")
        self._check_number("instance.p", instance.p, minimum=1, strict=True, optional=False)
        self._check_number("instance.r", instance.r, minimum=0, optional=False)
        if instance.x0 is not None and (not isinstance(instance.x0, list)
                                        or not all(_is_number(v) for v in instance.x0)):
            self.errors.append("instance.x0: expected a list of numbers")

        self._validate_plan(config.plan)
        self._check_number("oracle.substeps", config.oracle.substeps, integer=True, minimum=1, optional=False)
        for name in ("words", "steps", "levels", "net_points"):
            self._check_number(f"caps.{name}", getattr(config.caps, name), integer=True, minimum=1, optional=False)
        for name in ("validation_samples", "covering_samples"):
            self._check_number(f"sampling.{name}", getattr(config.sampling, name), integer=True, minimum=1,
                               optional=False)
        self._check_number("sampling.growth_x_radius", config.sampling.growth_x_radius, minimum=0)
        self._check_number("sampling.growth_u_radius", config.sampling.growth_u_radius, minimum=0)
        self._validate_study(config.study)
        self._check_number("logging.progress_every", config.logging.progress_every, integer=True, minimum=0,
                           optional=False)
        if not isinstance(config.logging.level, str) or not isinstance(
                logging.getLevelName(config.logging.level.upper()), int):
            self.errors.append(f"logging.level: unknown level {config.logging.level!r}")
        self._check_number("seed", config.seed, integer=True, minimum=0, optional=False)

        if self.errors:
            error_msg = "Configuration validation failed:\n" + "\n".join(f"- {error}" for error in self.errors)
            logger.error(error_msg)
            raise InputValidationError(error_msg, errors=list(self.errors))

    def get_full_config(self) -> Dict[str, Any]:
        """Complete configuration with defaults applied, echoed into the manifest"""
        return self.config.to_dict()


def parse_config(path: str, env_file: Optional[str] = ".env") -> RunConfig:
    """Load and validate a run configuration file"""
    manager = ConfigManager(path, env_file=env_file)
    logger.info(f"✅ Loaded configuration {path} ({manager.config.mode} mode)")
    return manager.config
