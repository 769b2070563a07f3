"""
System Model
Control systems x' = f(t, x, u): declared constants, the built-in catalog,
right-hand-side evaluation and sampling validators for the growth and
Lipschitz conditions
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from app.core.errors import EvaluationError, InputValidationError
from app.core.expression_parser import DynamicsExpr, parse_dynamics

logger = logging.getLogger(__name__)

# Ratios above declared * (1 + VIOLATION_TOLERANCE) count as violations
VIOLATION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DynamicsSpec:
    """Right-hand side f(t, x, u) with its declared constants"""
    n: int                      # State dimension
    m: int                      # Control dimension
    rhs: Callable               # (t, x[n, ...], u[m, ...]) -> f[n, ...], vectorized over trailing axes
    gamma1: float               # Lipschitz constant in x
    gamma2: float               # Control-dependent part of the x-Lipschitz constant
    gamma3: float               # Lipschitz constant in u
    c: float                    # Growth constant: |f| <= c(|x|+1)(|u|+1)
    label: str = "custom"
    expression: Optional[DynamicsExpr] = field(default=None, compare=False)
    validation_radius: Optional[float] = None  # State radius the constants are declared for (None = global)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1 or int(self.m) != self.m or self.m < 1:
            raise InputValidationError("Dimensions n and m must be positive integers", n=self.n, m=self.m)
        for name in ("gamma1", "gamma2", "gamma3"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InputValidationError(f"{name} must be a nonnegative real", **{name: value})
        if not np.isfinite(self.c) or self.c <= 0:
            raise InputValidationError("Growth constant c must be positive", c=self.c)
        if self.validation_radius is not None and self.validation_radius <= 0:
            raise InputValidationError("validation_radius must be positive", validation_radius=self.validation_radius)

    @classmethod
    def from_expressions(cls, source: Union[str, Sequence[str]], n: int, m: int, *,
                         gamma1: float, gamma2: float, gamma3: float, c: float,
                         label: str = "custom", validation_radius: Optional[float] = None) -> "DynamicsSpec":
        """Build a spec whose rhs is a parsed DSL expression"""
        expression = parse_dynamics(source, n, m)
        if len(expression.components) != n:
            raise InputValidationError(
                f"Expected {n} component expression(s), got {len(expression.components)}",
                n=n, components=len(expression.components),
            )
        return cls(n=n, m=m, rhs=expression.evaluate, gamma1=float(gamma1), gamma2=float(gamma2),
                   gamma3=float(gamma3), c=float(c), label=label, expression=expression,
                   validation_radius=validation_radius)

    @property
    def source(self) -> Optional[List[str]]:
        return self.expression.to_source() if self.expression is not None else None

    def summary(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "n": self.n,
            "m": self.m,
            "source": self.source,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "gamma3": self.gamma3,
            "c": self.c,
            "validation_radius": self.validation_radius,
        }


@dataclass(frozen=True)
class ProblemInstance:
    """Horizon, initial state and the L_p control budget"""
    t0: float
    theta: float
    x0: np.ndarray
    p: float
    r: float

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if not (np.isfinite(self.t0) and np.isfinite(self.theta)) or self.theta <= self.t0:
            raise InputValidationError("Horizon requires theta > t0", t0=self.t0, theta=self.theta)
        if not np.isfinite(self.p) or self.p <= 1:
            raise InputValidationError("Norm exponent p must be greater than 1", p=self.p)
        # r = 0 is accepted as the zero-budget instance
        if not np.isfinite(self.r) or self.r < 0:
            raise InputValidationError("Budget radius r must be nonnegative", r=self.r)
        if x0.size == 0 or not np.all(np.isfinite(x0)):
            raise InputValidationError("Initial state must be a nonempty finite vector", x0=x0.tolist())

    @property
    def horizon(self) -> float:
        return self.theta - self.t0

    def check_dimensions(self, spec: DynamicsSpec) -> None:
        if self.x0.shape != (spec.n,):
            raise InputValidationError(
                f"Initial state has dimension {self.x0.size}, system expects {spec.n}",
                x0=self.x0.tolist(), n=spec.n,
            )

    def summary(self) -> Dict[str, Any]:
        return {"t0": self.t0, "theta": self.theta, "x0": self.x0.tolist(), "p": self.p, "r": self.r}


def _check_vector(name: str, value, dim: int) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        array = array.reshape(1)
    if array.shape != (dim,):
        raise InputValidationError(f"{name} has shape {array.shape}, expected ({dim},)", expected=dim)
    return array


def _raise_non_finite(spec: DynamicsSpec, values: np.ndarray, t, x, u) -> None:
    bad_rows = np.where(~np.all(np.isfinite(values.reshape(spec.n, -1)), axis=1))[0]
    component = int(bad_rows[0]) + 1
    source = spec.source
    expression = source[component - 1] if source else None
    raise EvaluationError(
        f"Right-hand side of {spec.label} is not finite in component {component}",
        component=component, expression=expression,
        t=np.asarray(t).tolist(), x=np.asarray(x).tolist(), u=np.asarray(u).tolist(),
    )


def eval_dynamics(spec: DynamicsSpec, t: float, x, u) -> np.ndarray:
    """Evaluate f(t, x, u) for a single point"""
    x = _check_vector("x", x, spec.n)
    u = _check_vector("u", u, spec.m)
    values = np.asarray(spec.rhs(float(t), x, u), dtype=float)
    if values.shape != (spec.n,):
        raise InputValidationError(f"rhs returned shape {values.shape}, expected ({spec.n},)")
    if not np.all(np.isfinite(values)):
        _raise_non_finite(spec, values, t, x, u)
    return values


def eval_dynamics_batch(spec: DynamicsSpec, t, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate f column-wise for x of shape (n, K) and u of shape (m, K)"""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim != 2 or x.shape[0] != spec.n or u.ndim != 2 or u.shape[0] != spec.m:
        raise InputValidationError(
            f"Batch shapes {x.shape} and {u.shape} do not match n={spec.n}, m={spec.m}"
        )
    values = np.broadcast_to(np.asarray(spec.rhs(t, x, u), dtype=float), (spec.n, x.shape[1]))
    if not np.all(np.isfinite(values)):
        column = int(np.where(~np.all(np.isfinite(values), axis=0))[0][0])
        t_col = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[1],))[column]
        _raise_non_finite(spec, values[:, column], t_col, x[:, column], u[:, column])
    return values


# Built-in systems; constants hold globally unless validation_radius is set
CATALOG: Dict[str, Dict[str, Any]] = {
    "integrator": {"n": 1, "m": 1, "source": ["u1"],
                   "gamma1": 0.0, "gamma2": 0.0, "gamma3": 1.0, "c": 1.0},
    "affine": {"n": 1, "m": 1, "source": ["x1 + u1"],
               "gamma1": 1.0, "gamma2": 0.0, "gamma3": 1.0, "c": 1.0},
    "rotator": {"n": 2, "m": 2, "source": ["x2 + u1", "-x1 + u2"],
                "gamma1": 1.0, "gamma2": 0.0, "gamma3": 1.0, "c": 1.0},
    # |x1^3 - x2^3| <= 12|x1 - x2| and |x|^3 <= 4|x| only while |x| <= 2
    "saturating": {"n": 1, "m": 1, "source": ["-x1^3 + u1"],
                   "gamma1": 12.0, "gamma2": 0.0, "gamma3": 1.0, "c": 3.0,
                   "validation_radius": 2.0},
}


def catalog_names() -> List[str]:
    return sorted(CATALOG)


def catalog_system(name: str) -> DynamicsSpec:
    """Instantiate a built-in system by name"""
    if name not in CATALOG:
        raise InputValidationError(f"Unknown catalog system {name!r}", available=catalog_names())
    entry = dict(CATALOG[name])
    source = entry.pop("source")
    return DynamicsSpec.from_expressions(source, entry.pop("n"), entry.pop("m"), label=name, **entry)


@dataclass
class SamplingBox:
    """Sampling region for the growth validator: |x| <= x_radius, |u| <= u_radius"""
    x_radius: float
    u_radius: float


@dataclass
class GrowthReport:
    """Outcome of validate_growth"""
    samples: int
    declared_c: float
    max_ratio: float
    violations: int
    x_radius: float
    u_radius: float
    witness: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass
class LipschitzReport:
    """Outcome of validate_lipschitz"""
    samples: int
    max_ratio: float
    violations: int
    degenerate: int             # Pairs skipped because the bound's denominator vanished
    x_radius: float
    u_radius: float
    witness: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def sample_ball(rng: np.random.Generator, dim: int, radius: float, count: int,
                boundary_fraction: float = 0.1) -> np.ndarray:
    """
    Points in the closed ball of given radius, shape (dim, count).
    The first boundary_fraction of the columns lie on the sphere itself.
    """
    directions = rng.standard_normal((dim, count))
    norms = np.linalg.norm(directions, axis=0)
    norms[norms == 0.0] = 1.0
    directions /= norms
    scale = radius * rng.random(count) ** (1.0 / dim)
    scale[: int(count * boundary_fraction)] = radius
    return directions * scale


def _local_radius(spec: DynamicsSpec, radius: float) -> float:
    if spec.validation_radius is not None and radius > spec.validation_radius:
        logger.debug(f"Clamping validation radius {radius} to {spec.validation_radius} for {spec.label}")
        return spec.validation_radius
    return radius


def validate_growth(spec: DynamicsSpec, instance: ProblemInstance, box: SamplingBox,
                    samples: int, seed: int = 0) -> GrowthReport:
    """
    Sample |f(t,x,u)| / ((|x|+1)(|u|+1)) over [t0, theta] x box and compare
    the empirical maximum with the declared growth constant c
    """
    if samples < 1:
        raise InputValidationError("samples must be at least 1", samples=samples)

    rng = np.random.default_rng(seed)
    x_radius = _local_radius(spec, float(box.x_radius))
    u_radius = float(box.u_radius)

    t = rng.uniform(instance.t0, instance.theta, samples)
    x = sample_ball(rng, spec.n, x_radius, samples)
    u = sample_ball(rng, spec.m, u_radius, samples)
    # Corner of the box where polynomial growth peaks
    x[:, 0] = x_radius / np.sqrt(spec.n)
    u[:, 0] = 0.0

    values = eval_dynamics_batch(spec, t, x, u)
    ratios = np.linalg.norm(values, axis=0) / (
        (np.linalg.norm(x, axis=0) + 1.0) * (np.linalg.norm(u, axis=0) + 1.0)
    )
    worst = int(np.argmax(ratios))
    violations = int(np.count_nonzero(ratios > spec.c * (1.0 + VIOLATION_TOLERANCE)))

    report = GrowthReport(
        samples=samples, declared_c=spec.c, max_ratio=float(ratios[worst]),
        violations=violations, x_radius=x_radius, u_radius=u_radius,
        witness={"t": float(t[worst]), "x": x[:, worst].tolist(), "u": u[:, worst].tolist()},
    )
    if violations:
        logger.warning(f"⚠️ Growth bound of {spec.label} violated in {violations}/{samples} samples "
                       f"(max ratio {report.max_ratio:.6g} > c={spec.c})")
    else:
        logger.info(f"✅ Growth bound of {spec.label} holds on {samples} samples (max ratio {report.max_ratio:.6g})")
    return report


def validate_lipschitz(spec: DynamicsSpec, alpha_star: float, beta: float, samples: int,
                       seed: int = 0, instance: Optional[ProblemInstance] = None) -> LipschitzReport:
    """
    Sample pairs in [t0, theta] x B(alpha_star) x B(beta) and compute
    |f(t,x1,u1) - f(t,x2,u2)| / ([g1 + g2(|u1|+|u2|)]|x1-x2| + g3|u1-u2|).
    A third of the pairs share u, a third share x, the rest differ in both.
    """
    if alpha_star <= 0 or beta <= 0:
        raise InputValidationError("alpha_star and beta must be positive", alpha_star=alpha_star, beta=beta)
    if samples < 1:
        raise InputValidationError("samples must be at least 1", samples=samples)

    rng = np.random.default_rng(seed)
    x_radius = _local_radius(spec, float(alpha_star))
    u_radius = float(beta)
    t0, theta = (instance.t0, instance.theta) if instance is not None else (0.0, 1.0)

    t = rng.uniform(t0, theta, samples)
    x1 = sample_ball(rng, spec.n, x_radius, samples)
    x2 = sample_ball(rng, spec.n, x_radius, samples)
    u1 = sample_ball(rng, spec.m, u_radius, samples)
    u2 = sample_ball(rng, spec.m, u_radius, samples)
    third = samples // 3
    u2[:, :third] = u1[:, :third]
    x2[:, third:2 * third] = x1[:, third:2 * third]

    numerator = np.linalg.norm(eval_dynamics_batch(spec, t, x1, u1) - eval_dynamics_batch(spec, t, x2, u2), axis=0)
    denominator = (
        (spec.gamma1 + spec.gamma2 * (np.linalg.norm(u1, axis=0) + np.linalg.norm(u2, axis=0)))
        * np.linalg.norm(x1 - x2, axis=0)
        + spec.gamma3 * np.linalg.norm(u1 - u2, axis=0)
    )

    valid = denominator > 0
    degenerate = int(samples - np.count_nonzero(valid))
    if degenerate:
        logger.warning(f"⚠️ Skipped {degenerate} degenerate pair(s) with zero denominator")

    ratios = np.zeros(samples)
    ratios[valid] = numerator[valid] / denominator[valid]
    worst = int(np.argmax(ratios))
    violations = int(np.count_nonzero(ratios > 1.0 + VIOLATION_TOLERANCE))

    report = LipschitzReport(
        samples=samples, max_ratio=float(ratios[worst]), violations=violations, degenerate=degenerate,
        x_radius=x_radius, u_radius=u_radius,
        witness={"t": float(t[worst]), "x1": x1[:, worst].tolist(), "x2": x2[:, worst].tolist(),
                 "u1": u1[:, worst].tolist(), "u2": u2[:, worst].tolist()},
    )
    if violations:
        logger.warning(f"⚠️ Lipschitz bound of {spec.label} violated in {violations}/{samples} pairs "
                       f"(max ratio {report.max_ratio:.6g})")
    else:
        logger.info(f"✅ Lipschitz bound of {spec.label} holds on {samples} pairs (max ratio {report.max_ratio:.6g})")
    return report
