"""
Parameter Derivation
Constant chain (trajectory bound, exponent and truncation constants),
modulus estimates and the epsilon-driven discretization schedule
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import numpy as np

from app.core.errors import CapacityError, InputValidationError
from app.core.system_model import DynamicsSpec, ProblemInstance, eval_dynamics_batch, sample_ball

logger = logging.getLogger(__name__)

# Smallest offset radius sampled by the omega sampler, relative to the largest
OMEGA_LADDER_FLOOR = 1e-9
# Offset batches evaluated per rhs call in the omega sampler
OMEGA_CHUNK_RADII = 128


def alpha_star(spec: DynamicsSpec, instance: ProblemInstance) -> float:
    """
    A-priori bound on |x(t)| over all admissible trajectories, from the growth
    condition and Gronwall's inequality:
        (|x0| + 1) * exp(c * (T + r * T^((p-1)/p))) - 1
    """
    horizon = instance.horizon
    exponent = spec.c * (horizon + instance.r * horizon ** ((instance.p - 1.0) / instance.p))
    return float((np.linalg.norm(instance.x0) + 1.0) * math.exp(exponent) - 1.0)


@dataclass(frozen=True)
class ConstantsChain:
    """Constants every discretization error bound is built from"""
    alpha_star: float   # Trajectory bound
    l_star: float       # max(T, 1)
    c0: float           # gamma1*T + 2*gamma2*r*l_star
    kappa_star: float   # 2*gamma3*r^p*exp(c0), truncation constant
    g1: float           # gamma3*T*exp(c0), grid-error constant
    gamma1: float
    gamma2: float
    c: float            # Growth constant, enters phi

    def g_beta(self, beta: float) -> float:
        """Exponent rate gamma1 + 2*gamma2*beta used by the Euler error bound"""
        return self.gamma1 + 2.0 * self.gamma2 * beta

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def derive_constants(spec: DynamicsSpec, instance: ProblemInstance) -> ConstantsChain:
    horizon = instance.horizon
    l_star = max(horizon, 1.0)
    c0 = spec.gamma1 * horizon + 2.0 * spec.gamma2 * instance.r * l_star
    chain = ConstantsChain(
        alpha_star=alpha_star(spec, instance),
        l_star=l_star,
        c0=c0,
        kappa_star=2.0 * spec.gamma3 * instance.r ** instance.p * math.exp(c0),
        g1=spec.gamma3 * horizon * math.exp(c0),
        gamma1=spec.gamma1,
        gamma2=spec.gamma2,
        c=spec.c,
    )
    logger.debug(f"Constant chain for {spec.label}: {chain}")
    return chain


class OmegaSampler:
    """
    Empirical modulus of continuity of f in (t, x) at controls |u| <= beta:
        omega(s) ~ max |f(t1, x1, u) - f(t2, x2, u)|,  |t1-t2| <= s, |x1-x2| <= s
    Base points (t1, x1, u) are fixed by the seed. Offsets are sampled on a
    geometric ladder of radii and omega(s) is the maximum over radii up to the
    first rung at or above s, so the estimate is nondecreasing in s for a fixed seed.
    """

    def __init__(self, spec: DynamicsSpec, instance: ProblemInstance, alpha_star: float,
                 beta: float, grid_density: int = 64, seed: int = 0):
        if grid_density < 2:
            raise InputValidationError("grid_density must be at least 2", grid_density=grid_density)
        self.spec = spec
        self.instance = instance
        self.alpha_star = float(alpha_star)
        self.beta = float(beta)
        self.grid_density = int(grid_density)
        self.seed = seed

        rng = np.random.default_rng(seed)
        n, m = spec.n, spec.m
        self.base_t = np.linspace(instance.t0, instance.theta, self.grid_density)
        self.base_x = sample_ball(rng, n, self.alpha_star, self.grid_density)
        self.base_u = sample_ball(rng, m, self.beta, self.grid_density)

        # Unit offsets (dt, dx): time-only, state-only along axes, mixed corners, two random
        offsets = [np.concatenate(([sign], np.zeros(n))) for sign in (1.0, -1.0)]
        for i in range(n):
            for dx_sign in (1.0, -1.0):
                axis = np.zeros(n)
                axis[i] = dx_sign
                offsets.append(np.concatenate(([0.0], axis)))
                for dt_sign in (1.0, -1.0):
                    offsets.append(np.concatenate(([dt_sign], axis)))
        for _ in range(2):
            direction = sample_ball(rng, n, 1.0, 1, boundary_fraction=0.0)[:, 0]
            offsets.append(np.concatenate(([rng.uniform(-1.0, 1.0)], direction)))
        self.offsets = np.array(offsets)

        rho_max = max(instance.horizon, 2.0 * self.alpha_star)
        ratio = 1.0 - 1.0 / self.grid_density
        count = int(math.floor(math.log(OMEGA_LADDER_FLOOR) / math.log(ratio))) + 1
        # Ascending radii, prefix maxima of the per-radius maxima
        self.radii = rho_max * ratio ** np.arange(count)[::-1]
        self.prefix_max = np.maximum.accumulate(self._radius_maxima())
        logger.debug(f"Omega sampler for {spec.label}: {self.grid_density} base points, "
                     f"{len(self.offsets)} offsets, {count} radii up to {rho_max:.6g}")

    def _radius_maxima(self) -> np.ndarray:
        spec, instance = self.spec, self.instance
        G, D = self.grid_density, len(self.offsets)
        f_base = eval_dynamics_batch(spec, self.base_t, self.base_x, self.base_u)

        maxima = np.empty(len(self.radii))
        for start in range(0, len(self.radii), OMEGA_CHUNK_RADII):
            radii = self.radii[start:start + OMEGA_CHUNK_RADII]
            R = len(radii)
            # Axis order (radius, offset, base point)
            scaled = radii[:, None, None] * self.offsets[None, :, :]
            t2 = np.clip(self.base_t[None, None, :] + scaled[:, :, 0:1], instance.t0, instance.theta)
            x2 = self.base_x.T[None, None, :, :] + scaled[:, :, None, 1:]
            norms = np.linalg.norm(x2, axis=-1, keepdims=True)
            outside = norms > self.alpha_star
            x2 = np.where(outside, x2 * (self.alpha_star / np.where(outside, norms, 1.0)), x2)

            columns = R * D * G
            t_flat = t2.reshape(columns)
            x_flat = x2.reshape(columns, spec.n).T
            u_flat = np.tile(self.base_u, R * D)
            f_moved = eval_dynamics_batch(spec, t_flat, x_flat, u_flat)
            gaps = np.linalg.norm(f_moved - np.tile(f_base, R * D), axis=0)
            maxima[start:start + R] = gaps.reshape(R, D * G).max(axis=1)
        return maxima

    def __call__(self, radius: float) -> float:
        if radius <= 0.0:
            return 0.0
        # First rung at or above the radius, so the estimate never undershoots
        index = min(int(np.searchsorted(self.radii, radius, side="left")), len(self.radii) - 1)
        return float(self.prefix_max[index])

    def describe(self) -> Dict[str, Any]:
        return {
            "grid_density": self.grid_density,
            "seed": self.seed,
            "offsets": int(len(self.offsets)),
            "radii": int(len(self.radii)),
            "radius_range": [float(self.radii[0]), float(self.radii[-1])],
        }


@dataclass
class ModulusEstimate:
    """Trajectory modulus phi, its envelope phi_star and the rhs modulus omega"""
    c: float
    alpha_star: float
    r: float
    p: float
    beta: float
    omega_slope: Optional[float] = None         # Analytic override: omega(s) = slope * s
    sampler: Optional[OmegaSampler] = None

    @classmethod
    def build(cls, spec: Optional[DynamicsSpec], instance: ProblemInstance, chain: ConstantsChain,
              beta: float, omega_slope: Optional[float] = None, grid_density: int = 64,
              seed: int = 0) -> "ModulusEstimate":
        if omega_slope is None and spec is None:
            raise InputValidationError("Estimating omega requires a system or an analytic omega_slope")
        if omega_slope is not None and omega_slope < 0:
            raise InputValidationError("omega_slope must be nonnegative", omega_slope=omega_slope)
        sampler = None
        if omega_slope is None:
            sampler = OmegaSampler(spec, instance, chain.alpha_star, beta, grid_density, seed)
        return cls(c=chain.c, alpha_star=chain.alpha_star, r=instance.r, p=instance.p, beta=beta,
                   omega_slope=omega_slope, sampler=sampler)

    def phi(self, delta):
        delta = np.asarray(delta, dtype=float)
        value = self.c * (self.alpha_star + 1.0) * (delta + self.r * delta ** ((self.p - 1.0) / self.p))
        return float(value) if value.ndim == 0 else value

    def phi_star(self, delta):
        value = np.maximum(np.asarray(delta, dtype=float), self.phi(delta))
        return float(value) if value.ndim == 0 else value

    def omega_at(self, radius: float) -> float:
        if self.omega_slope is not None:
            return self.omega_slope * radius
        return self.sampler(radius)

    def omega(self, delta_t: float) -> float:
        """omega(phi_star(delta_t), beta)"""
        return self.omega_at(self.phi_star(delta_t))

    def describe(self) -> Dict[str, Any]:
        if self.omega_slope is not None:
            return {"kind": "analytic", "omega_slope": self.omega_slope, "beta": self.beta}
        return {"kind": "sampled", "beta": self.beta, **self.sampler.describe()}


def estimate_omega(spec: DynamicsSpec, instance: ProblemInstance, alpha_star: float, beta: float,
                   delta_t: float, grid_density: int = 64, seed: int = 0) -> float:
    """Sampled omega(phi_star(delta_t), beta) for the given system"""
    sampler = OmegaSampler(spec, instance, alpha_star, beta, grid_density, seed)
    modulus = ModulusEstimate(c=spec.c, alpha_star=alpha_star, r=instance.r, p=instance.p,
                              beta=beta, sampler=sampler)
    return modulus.omega(delta_t)


@dataclass(frozen=True)
class ScheduleTargets:
    """Accuracy targets an epsilon-mode plan was rounded against"""
    beta_star: float
    delta_star: float
    sigma_star: float
    Delta_star: float       # Averaging target, eps/(10*g1*R_star)
    Delta_omega: float      # Largest step meeting the omega threshold (inf when unbounded)
    Delta_zero: float       # min(Delta_star, Delta_omega, eps/10)
    omega_threshold: float  # eps / (10 * exp(g(beta_star) * T))

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class DiscretizationPlan:
    """Uniform time grid, magnitude grid and sphere-net mesh of one approximation"""
    beta: float                 # Magnitude cap
    N: int                      # Time steps, Delta = T / N
    q: int                      # Magnitude steps, delta = beta / q
    sigma: float                # Sphere-net mesh
    t0: float
    theta: float
    p: float
    r: float
    epsilon: Optional[float] = None
    R_star: float = 1.0
    targets: Optional[ScheduleTargets] = None

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise InputValidationError("beta must be positive", beta=self.beta)
        if int(self.N) != self.N or self.N < 1:
            raise InputValidationError("N must be a positive integer", N=self.N)
        if int(self.q) != self.q or self.q < 1:
            raise InputValidationError("q must be a positive integer", q=self.q)
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise InputValidationError("sigma must be positive", sigma=self.sigma)
        if self.R_star <= 0:
            raise InputValidationError("R_star must be positive", R_star=self.R_star)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "q", int(self.q))

    @classmethod
    def direct(cls, instance: ProblemInstance, beta: float, N: int, q: int, sigma: float,
               R_star: float = 1.0) -> "DiscretizationPlan":
        return cls(beta=float(beta), N=N, q=q, sigma=float(sigma), t0=instance.t0, theta=instance.theta,
                   p=instance.p, r=instance.r, R_star=R_star)

    @property
    def mode(self) -> str:
        return "epsilon" if self.epsilon is not None else "direct"

    @property
    def horizon(self) -> float:
        return self.theta - self.t0

    @property
    def delta_t(self) -> float:
        return self.horizon / self.N

    @property
    def delta(self) -> float:
        return self.beta / self.q

    @property
    def gamma(self) -> np.ndarray:
        """Time grid t0 < t1 < ... < tN = theta"""
        nodes = self.t0 + np.arange(self.N + 1) * self.delta_t
        nodes[-1] = self.theta
        return nodes

    @property
    def levels(self) -> np.ndarray:
        """Magnitude grid 0 < delta < ... < q*delta = beta"""
        values = np.arange(self.q + 1) * self.delta
        values[-1] = self.beta
        return values

    def summary(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "R_star": self.R_star,
            "beta": self.beta,
            "N": self.N,
            "q": self.q,
            "sigma": self.sigma,
            "Delta": self.delta_t,
            "delta": self.delta,
            "t0": self.t0,
            "theta": self.theta,
            "p": self.p,
            "r": self.r,
            "targets": self.targets.to_dict() if self.targets is not None else None,
        }


def _smallest_count(total: float, target: float) -> int:
    """Smallest k >= 1 with total / k <= target"""
    if math.isinf(target) or total <= target:
        return 1
    k = max(1, math.ceil(total / target))
    while total / k > target:
        k += 1
    while k > 1 and total / (k - 1) <= target:
        k -= 1
    return k


def _omega_step_limit(modulus: ModulusEstimate, horizon: float, threshold: float,
                      max_steps: Optional[int]) -> float:
    """Largest T/N with omega(phi_star(T/N)) <= threshold; inf when N = 1 already satisfies it"""
    if modulus.omega(horizon) <= threshold:
        return math.inf
    low, high = 1, 2
    while modulus.omega(horizon / high) > threshold:
        low, high = high, high * 2
        if max_steps is not None and low > max_steps:
            raise CapacityError(
                f"Omega threshold needs more than {max_steps} time steps",
                required_N=f">{low}", cap=max_steps,
            )
    # omega(phi_star(T/N)) is nonincreasing in N
    while high - low > 1:
        middle = (low + high) // 2
        if modulus.omega(horizon / middle) <= threshold:
            high = middle
        else:
            low = middle
    return horizon / high


def epsilon_schedule(chain: ConstantsChain, instance: ProblemInstance, epsilon: float,
                     R_star: float = 1.0, *, spec: Optional[DynamicsSpec] = None,
                     omega_slope: Optional[float] = None, grid_density: int = 64, seed: int = 0,
                     max_steps: Optional[int] = None, max_levels: Optional[int] = None) -> DiscretizationPlan:
    """
    Derive (beta, N, q, sigma) from an accuracy target epsilon.
    Delta and delta are realized as T/N and beta/q rounded so they never exceed
    their targets. The omega threshold is sampled from spec unless omega_slope
    gives an analytic modulus.
    """
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise InputValidationError("epsilon must be positive", epsilon=epsilon)
    if R_star <= 0:
        raise InputValidationError("R_star must be positive", R_star=R_star)
    if chain.kappa_star <= 0:
        raise InputValidationError(
            "Truncation constant kappa_star is zero (zero budget or gamma3 = 0); "
            "use direct mode for this instance", kappa_star=chain.kappa_star,
        )

    p = instance.p
    horizon = instance.horizon
    beta_star = (10.0 * chain.kappa_star / epsilon) ** (1.0 / (p - 1.0))
    if chain.g1 > 0:
        delta_star = epsilon / (10.0 * chain.g1)
        sigma_star = epsilon / (10.0 * chain.g1 * beta_star)
        Delta_star = epsilon / (10.0 * chain.g1 * R_star)
    else:
        delta_star = sigma_star = Delta_star = math.inf

    threshold = epsilon / (10.0 * math.exp(chain.g_beta(beta_star) * horizon))
    modulus = ModulusEstimate.build(spec, instance, chain, beta_star, omega_slope, grid_density, seed)
    Delta_omega = _omega_step_limit(modulus, horizon, threshold, max_steps)
    Delta_zero = min(Delta_star, Delta_omega, epsilon / 10.0)

    N = _smallest_count(horizon, Delta_zero)
    q = _smallest_count(beta_star, delta_star)
    if (max_steps is not None and N > max_steps) or (max_levels is not None and q > max_levels):
        raise CapacityError(
            f"epsilon={epsilon} needs N={N} time steps and q={q} magnitude steps",
            required_N=N, required_q=q, cap_N=max_steps, cap_q=max_levels,
        )

    # A net with sigma >= 2 is any single point
    sigma = min(sigma_star, 2.0)
    targets = ScheduleTargets(
        beta_star=beta_star, delta_star=delta_star, sigma_star=sigma_star, Delta_star=Delta_star,
        Delta_omega=Delta_omega, Delta_zero=Delta_zero, omega_threshold=threshold,
    )
    plan = DiscretizationPlan(
        beta=beta_star, N=N, q=q, sigma=sigma, t0=instance.t0, theta=instance.theta,
        p=p, r=instance.r, epsilon=float(epsilon), R_star=float(R_star), targets=targets,
    )
    logger.info(f"✅ Schedule for eps={epsilon}: beta={beta_star:.6g}, N={N}, q={q}, sigma={sigma:.6g}")
    return plan


def plan_modulus(spec: DynamicsSpec, instance: ProblemInstance, chain: ConstantsChain,
                 plan: DiscretizationPlan, omega_slope: Optional[float] = None,
                 grid_density: int = 64, seed: int = 0) -> ModulusEstimate:
    """Modulus estimate at the plan's magnitude cap"""
    return ModulusEstimate.build(spec, instance, chain, plan.beta, omega_slope, grid_density, seed)
