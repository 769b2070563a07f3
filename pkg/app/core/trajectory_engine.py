"""
Trajectory Engine
Euler broken lines over the time grid and fixed-step RK4 reference
trajectories for piecewise-constant controls, plus modulus and refinement checks
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Sequence

import numpy as np

from app.core.control_grid import ControlWord
from app.core.errors import DivergenceError, InputValidationError
from app.core.param_derivation import DiscretizationPlan, alpha_star
from app.core.sphere_net import SigmaNet
from app.core.system_model import DynamicsSpec, ProblemInstance

logger = logging.getLogger(__name__)

DEFAULT_SUBSTEPS = 32
# States beyond DIVERGENCE_FACTOR * (alpha_star + 1) abort the run
DIVERGENCE_FACTOR = 1e3


@dataclass
class EulerPolyline:
    """Broken line through z_0..z_N at the grid nodes"""
    grid: np.ndarray        # Shape (N+1,)
    nodes: np.ndarray       # Shape (N+1, n)
    word_index: int = 0

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation; exact at grid nodes"""
        return np.array([np.interp(t, self.grid, self.nodes[:, k]) for k in range(self.nodes.shape[1])])

    @property
    def endpoint(self) -> np.ndarray:
        return self.nodes[-1]


@dataclass
class SampledTrajectory:
    """Reference trajectory sampled at substeps points per grid interval"""
    times: np.ndarray       # Shape (N*substeps+1,), contains every grid node bit-exactly
    states: np.ndarray      # Shape (N*substeps+1, n)
    word_index: int = 0
    substeps: int = DEFAULT_SUBSTEPS
    order: int = 4

    def at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.states[:, k]) for k in range(self.states.shape[1])])

    def at_nodes(self) -> np.ndarray:
        """States at the grid nodes t_0..t_N"""
        return self.states[::self.substeps]

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


def control_values(words: Sequence[ControlWord], plan: DiscretizationPlan, net: SigmaNet) -> np.ndarray:
    """Control values of a batch of words, shape (W, N, m)"""
    magnitudes = np.array([w.magnitude_indices for w in words], dtype=int).reshape(len(words), plan.N)
    directions = np.array([w.direction_indices for w in words], dtype=int).reshape(len(words), plan.N)
    return plan.levels[magnitudes][:, :, None] * net.points[directions]


def divergence_bound(spec: DynamicsSpec, instance: ProblemInstance) -> float:
    return DIVERGENCE_FACTOR * (alpha_star(spec, instance) + 1.0)


def _guard(states: np.ndarray, bound: float, first_index: int, step: int, substep: int = None) -> None:
    """states has shape (n, W); raises on the first column that is non-finite or out of bounds"""
    norms = np.linalg.norm(states, axis=0)
    bad = ~np.isfinite(norms) | (norms > bound)
    if np.any(bad):
        column = int(np.argmax(bad))
        where = f"step {step}" if substep is None else f"step {step}, substep {substep}"
        raise DivergenceError(
            f"Trajectory of word {first_index + column} diverged at {where}",
            word_index=first_index + column, step=step, substep=substep,
            norm=float(norms[column]), bound=bound,
        )


def _check_inputs(spec: DynamicsSpec, instance: ProblemInstance, plan: DiscretizationPlan,
                  controls: np.ndarray) -> None:
    instance.check_dimensions(spec)
    if controls.ndim != 3 or controls.shape[1:] != (plan.N, spec.m):
        raise InputValidationError(f"Controls of shape {controls.shape} do not match N={plan.N}, m={spec.m}")


def euler_batch(spec: DynamicsSpec, instance: ProblemInstance, plan: DiscretizationPlan,
                controls: np.ndarray, first_index: int = 0) -> np.ndarray:
    """
    z_{i+1} = z_i + Delta * f(t_i, z_i, u_i) for a batch of controls (W, N, m).
    Returns nodes of shape (W, N+1, n).
    """
    _check_inputs(spec, instance, plan, controls)
    bound = divergence_bound(spec, instance)
    grid = plan.gamma
    width = controls.shape[0]

    nodes = np.empty((width, plan.N + 1, spec.n))
    z = np.repeat(instance.x0[:, None], width, axis=1)
    nodes[:, 0, :] = z.T
    with np.errstate(all="ignore"):
        for i in range(plan.N):
            slope = np.asarray(spec.rhs(grid[i], z, controls[:, i, :].T), dtype=float)
            z = z + plan.delta_t * slope
            _guard(z, bound, first_index, i + 1)
            nodes[:, i + 1, :] = z.T
    return nodes


def rk4_batch(spec: DynamicsSpec, instance: ProblemInstance, plan: DiscretizationPlan,
              controls: np.ndarray, substeps: int = DEFAULT_SUBSTEPS, first_index: int = 0):
    """
    Classical fourth-order Runge-Kutta with `substeps` equal steps per grid
    interval, control held constant on each interval.
    Returns (times (K+1,), states (W, K+1, n)) with K = N * substeps.
    """
    if int(substeps) != substeps or substeps < 1:
        raise InputValidationError("substeps must be a positive integer", substeps=substeps)
    _check_inputs(spec, instance, plan, controls)
    bound = divergence_bound(spec, instance)
    grid = plan.gamma
    width = controls.shape[0]
    total = plan.N * substeps

    times = np.empty(total + 1)
    states = np.empty((width, total + 1, spec.n))
    x = np.repeat(instance.x0[:, None], width, axis=1)
    times[0] = grid[0]
    states[:, 0, :] = x.T

    rhs = spec.rhs
    with np.errstate(all="ignore"):
        for i in range(plan.N):
            a, b = grid[i], grid[i + 1]
            h = (b - a) / substeps
            u = controls[:, i, :].T
            for k in range(substeps):
                t = a + k * h
                k1 = rhs(t, x, u)
                k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1, u)
                k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2, u)
                k4 = rhs(t + h, x + h * k3, u)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                _guard(x, bound, first_index, i + 1, k + 1)
                index = i * substeps + k + 1
                times[index] = b if k + 1 == substeps else a + (k + 1) * (b - a) / substeps
                states[:, index, :] = x.T
    return times, states


def euler_broken_line(spec: DynamicsSpec, instance: ProblemInstance, plan: DiscretizationPlan,
                      word: ControlWord, net: SigmaNet, word_index: int = 0) -> EulerPolyline:
    nodes = euler_batch(spec, instance, plan, control_values([word], plan, net), word_index)
    return EulerPolyline(grid=plan.gamma, nodes=nodes[0], word_index=word_index)


def integrate_trajectory(spec: DynamicsSpec, instance: ProblemInstance, plan: DiscretizationPlan,
                         word: ControlWord, net: SigmaNet, substeps: int = DEFAULT_SUBSTEPS,
                         word_index: int = 0) -> SampledTrajectory:
    times, states = rk4_batch(spec, instance, plan, control_values([word], plan, net), substeps, word_index)
    return SampledTrajectory(times=times, states=states[0], word_index=word_index, substeps=int(substeps))


def euler_gap(polyline: EulerPolyline, trajectory: SampledTrajectory) -> float:
    """max over grid nodes of |x(t_i) - z(t_i)|"""
    return float(np.max(np.linalg.norm(trajectory.at_nodes() - polyline.nodes, axis=1)))


@dataclass
class RefinementReport:
    """Endpoint differences when the substep count doubles twice"""
    substeps: int
    endpoints: List[List[float]]
    differences: List[float]
    observed_order: float

    @property
    def consistent(self) -> bool:
        """Order >= 4 up to rounding, or differences already at rounding level"""
        return self.observed_order >= 3.5 or max(self.differences) < 1e-12


def refinement_check(spec: DynamicsSpec, instance: ProblemInstance, plan: DiscretizationPlan,
                     word: ControlWord, net: SigmaNet, substeps: int = DEFAULT_SUBSTEPS) -> RefinementReport:
    endpoints = [integrate_trajectory(spec, instance, plan, word, net, s).endpoint
                 for s in (substeps, 2 * substeps, 4 * substeps)]
    coarse = float(np.linalg.norm(endpoints[0] - endpoints[1]))
    fine = float(np.linalg.norm(endpoints[1] - endpoints[2]))
    if fine > 0 and coarse > 0:
        order = math.log2(coarse / fine)
    else:
        order = math.inf
    return RefinementReport(substeps=substeps, endpoints=[e.tolist() for e in endpoints],
                            differences=[coarse, fine], observed_order=order)


@dataclass
class ModulusReport:
    """Check of |x(t1) - x(t2)| <= phi(|t1 - t2|) over sample pairs"""
    pairs: int
    max_ratio: float
    violations: int
    witness: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def modulus_check(trajectory: SampledTrajectory, phi: Callable, max_points: int = 256,
                  tolerance: float = 1e-9) -> ModulusReport:
    """All pairs of a decimated sample grid; phi must accept arrays"""
    count = len(trajectory.times)
    picks = np.unique(np.linspace(0, count - 1, min(count, max_points)).round().astype(int))
    times = trajectory.times[picks]
    states = trajectory.states[picks]

    first, second = np.triu_indices(len(picks), k=1)
    if len(first) == 0:
        return ModulusReport(pairs=0, max_ratio=0.0, violations=0)
    distances = np.linalg.norm(states[first] - states[second], axis=1)
    bounds = np.asarray(phi(np.abs(times[first] - times[second])), dtype=float)
    ratios = np.where(bounds > 0, distances / np.where(bounds > 0, bounds, 1.0),
                      np.where(distances > 0, np.inf, 0.0))
    violations = int(np.count_nonzero(distances > bounds * (1.0 + tolerance)))
    worst = int(np.argmax(ratios))

    if violations:
        logger.warning(f"⚠️ Modulus check on word {trajectory.word_index}: {violations} violating pair(s)")
    return ModulusReport(
        pairs=int(len(first)), max_ratio=float(ratios[worst]), violations=violations,
        witness={"t1": float(times[first[worst]]), "t2": float(times[second[worst]])},
    )
