"""
Set Metrics Service
Hausdorff distances between finite point sets, trajectory bundles (uniform
norm) and funnel clouds, the a-priori error budget of a plan, the
attainable-set continuity check and the convergence study driver
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from app.core.control_grid import DEFAULT_WORD_CAP
from app.core.errors import CapacityError, InputValidationError
from app.core.param_derivation import ConstantsChain, DiscretizationPlan, ModulusEstimate, derive_constants
from app.core.sphere_net import DEFAULT_POINT_CAP, build_sigma_net
from app.core.system_model import DynamicsSpec, ProblemInstance
from app.core.trajectory_engine import DEFAULT_SUBSTEPS
from app.services.funnel_assembly import (
    FunnelCloud, TrajectoryBundle, attainable_slice, build_bundle, build_funnel,
)

logger = logging.getLogger(__name__)

# Above this many pairs the nearest-neighbour search goes through a k-d tree
TREE_THRESHOLD = 1_000_000
# Elements per block in brute-force distance scans
BLOCK_ELEMENTS = 4_000_000

STUDY_COLUMNS = [
    "label", "N", "q", "sigma", "beta", "words", "h_C", "slice_directed", "slice_h",
    "funnel_h", "euler_bound", "wall_time", "status",
]


@dataclass
class DistanceReport:
    """Directed distances both ways, their maximum and the pairs achieving them"""
    directed_ab: float
    directed_ba: float
    hausdorff: float
    witness_ab: Dict[str, Any] = field(default_factory=dict)
    witness_ba: Dict[str, Any] = field(default_factory=dict)
    grid: Optional[List[float]] = None      # Time grid of uniform-norm distances

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _as_points(points, name: str) -> np.ndarray:
    array = np.asarray(points, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2 or len(array) == 0:
        raise InputValidationError(f"{name} must be a nonempty set of points", shape=list(array.shape))
    return array


def _squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, accumulated dimension by dimension"""
    total = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        diff = a[:, k, None] - b[None, :, k]
        total += diff * diff
    return total


def _squared_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise squared distances with the same accumulation order as _squared_distances"""
    total = np.zeros(a.shape[0])
    for k in range(a.shape[1]):
        diff = a[:, k] - b[:, k]
        total += diff * diff
    return total


def _directed_brute(a: np.ndarray, b: np.ndarray):
    """For every point of a: (squared distance to nearest point of b, its index)"""
    best = np.empty(len(a))
    index = np.empty(len(a), dtype=int)
    block = max(1, BLOCK_ELEMENTS // len(b))
    for start in range(0, len(a), block):
        squared = _squared_distances(a[start:start + block], b)
        index[start:start + block] = np.argmin(squared, axis=1)
        best[start:start + block] = squared[np.arange(len(squared)), index[start:start + block]]
    return best, index


def _directed_tree(a: np.ndarray, b: np.ndarray):
    """
    Same result as _directed_brute: the tree proposes a radius, candidates
    within it are rescored with the brute-force formula
    """
    tree = cKDTree(b)
    approx, _ = tree.query(a)
    candidates = tree.query_ball_point(a, r=approx * (1.0 + 1e-9) + 1e-300)
    best = np.empty(len(a))
    index = np.empty(len(a), dtype=int)
    for i, found in enumerate(candidates):
        found = np.sort(np.asarray(found, dtype=int))
        squared = _squared_rows(np.repeat(a[i:i + 1], len(found), axis=0), b[found])
        position = int(np.argmin(squared))
        best[i] = squared[position]
        index[i] = found[position]
    return best, index


def _directed(a: np.ndarray, b: np.ndarray, method: str):
    if method == "tree" or (method == "auto" and len(a) * len(b) > TREE_THRESHOLD):
        best, index = _directed_tree(a, b)
    elif method in ("brute", "auto"):
        best, index = _directed_brute(a, b)
    else:
        raise InputValidationError(f"Unknown distance method {method!r}")
    worst = int(np.argmax(best))
    return math.sqrt(best[worst]), worst, int(index[worst])


def hausdorff_points(a, b, method: str = "auto") -> DistanceReport:
    """Hausdorff distance between two finite subsets of R^k"""
    a = _as_points(a, "A")
    b = _as_points(b, "B")
    if a.shape[1] != b.shape[1]:
        raise InputValidationError(f"Point sets live in R^{a.shape[1]} and R^{b.shape[1]}")

    d_ab, i_ab, j_ab = _directed(a, b, method)
    d_ba, i_ba, j_ba = _directed(b, a, method)
    return DistanceReport(
        directed_ab=d_ab,
        directed_ba=d_ba,
        hausdorff=max(d_ab, d_ba),
        witness_ab={"a_index": i_ab, "b_index": j_ab, "a": a[i_ab].tolist(), "b": b[j_ab].tolist()},
        witness_ba={"b_index": i_ba, "a_index": j_ba, "b": b[i_ba].tolist(), "a": a[j_ba].tolist()},
    )


def directed_distance(a, b) -> float:
    """max over a of the distance to the nearest point of b"""
    return hausdorff_points(a, b).directed_ab


def default_eval_grid(*grids: np.ndarray) -> np.ndarray:
    """Union of the given grids plus the midpoints of consecutive union nodes"""
    nodes = np.unique(np.concatenate(grids))
    midpoints = 0.5 * (nodes[:-1] + nodes[1:])
    return np.unique(np.concatenate((nodes, midpoints)))


def _bundle_on_grid(bundle: TrajectoryBundle, grid: np.ndarray) -> np.ndarray:
    """States of every trajectory on grid, shape (W, G, n)"""
    return np.stack([bundle.states_at(t) for t in grid], axis=1)


def _uniform_directed(a: np.ndarray, b: np.ndarray):
    """
    Directed distance between trajectory sets sampled on a common grid,
    trajectory distance = max over the grid of the Euclidean state distance
    """
    width_b, samples, n = b.shape
    if n == 1:
        # Sup over the grid of |a - b| is the Chebyshev distance of the sample vectors
        flat_a, flat_b = a[:, :, 0], b[:, :, 0]
        tree = cKDTree(flat_b)
        best, index = tree.query(flat_a, p=np.inf)
        worst = int(np.argmax(best))
        return float(best[worst]), worst, int(index[worst])

    best = np.empty(len(a))
    index = np.empty(len(a), dtype=int)
    block = max(1, BLOCK_ELEMENTS // (width_b * samples))
    for start in range(0, len(a), block):
        chunk = a[start:start + block]
        sup = np.zeros((len(chunk), width_b))
        for g in range(samples):
            np.maximum(sup, _squared_distances(chunk[:, g, :], b[:, g, :]), out=sup)
        index[start:start + block] = np.argmin(sup, axis=1)
        best[start:start + block] = sup[np.arange(len(chunk)), index[start:start + block]]
    worst = int(np.argmax(best))
    return math.sqrt(best[worst]), worst, int(index[worst])


def hausdorff_uniform(bundle_a: TrajectoryBundle, bundle_b: TrajectoryBundle,
                      eval_grid: Optional[Sequence[float]] = None) -> DistanceReport:
    """
    Hausdorff distance between trajectory bundles in the uniform norm, with the
    supremum over time taken on eval_grid (always extended by both grids).
    The default grid is the union of both grids plus midpoints.
    """
    plan_a, plan_b = bundle_a.plan, bundle_b.plan
    if plan_a.t0 != plan_b.t0 or plan_a.theta != plan_b.theta:
        raise InputValidationError("Bundles cover different horizons",
                                   a=[plan_a.t0, plan_a.theta], b=[plan_b.t0, plan_b.theta])
    if bundle_a.n != bundle_b.n:
        raise InputValidationError("Bundles have different state dimensions", a=bundle_a.n, b=bundle_b.n)

    if eval_grid is None:
        grid = default_eval_grid(plan_a.gamma, plan_b.gamma)
    else:
        grid = np.unique(np.concatenate((np.asarray(eval_grid, dtype=float), plan_a.gamma, plan_b.gamma)))
        if grid[0] < plan_a.t0 or grid[-1] > plan_a.theta:
            raise InputValidationError("Evaluation grid leaves the horizon")

    states_a = _bundle_on_grid(bundle_a, grid)
    states_b = _bundle_on_grid(bundle_b, grid)
    d_ab, i_ab, j_ab = _uniform_directed(states_a, states_b)
    d_ba, i_ba, j_ba = _uniform_directed(states_b, states_a)
    return DistanceReport(
        directed_ab=d_ab, directed_ba=d_ba, hausdorff=max(d_ab, d_ba),
        witness_ab={"a_word": i_ab, "b_word": j_ab},
        witness_ba={"b_word": i_ba, "a_word": j_ba},
        grid=grid.tolist(),
    )


def funnel_points(cloud: FunnelCloud, time_scale: float = 1.0) -> np.ndarray:
    points = cloud.points()
    points[:, 0] *= time_scale
    return points


def hausdorff_funnel(cloud_a: FunnelCloud, cloud_b: FunnelCloud, time_scale: float = 1.0) -> DistanceReport:
    """Hausdorff distance of the (t, x) clouds in R^(n+1); time_scale weights the t coordinate"""
    if cloud_a.size == 0 or cloud_b.size == 0:
        raise InputValidationError("Funnel clouds must be nonempty")
    return hausdorff_points(funnel_points(cloud_a, time_scale), funnel_points(cloud_b, time_scale))


@dataclass
class ErrorBudget:
    """A-priori error terms of a plan and the bounds they add up to"""
    truncation: float       # kappa_star / beta^(p-1)
    averaging: float        # g1 * R_star * Delta
    magnitude: float        # g1 * delta
    direction: float        # g1 * beta * sigma
    euler: float            # omega(phi_star(Delta), beta) * T * exp(g(beta) * T)
    time: float             # phi_star(Delta)
    set_bound: float        # Piecewise-constant grid controls vs all controls
    euler_set_bound: float  # Euler broken lines vs all trajectories
    funnel_bound: float     # Funnel cloud vs integral funnel
    omega: float
    targets: Dict[str, float] = field(default_factory=dict)
    within_allowance: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def error_budget(chain: ConstantsChain, plan: DiscretizationPlan, modulus: ModulusEstimate) -> ErrorBudget:
    """
    Constructive error terms of the plan. The bounds exclude the allowance for
    approximating arbitrary controls by R_star-Lipschitz ones, which has no
    constructive value; in epsilon mode that allowance is eps/10.
    """
    horizon = plan.horizon
    Delta = plan.delta_t
    omega = modulus.omega(Delta)
    terms = {
        "truncation": chain.kappa_star / plan.beta ** (plan.p - 1.0),
        "averaging": chain.g1 * plan.R_star * Delta,
        "magnitude": chain.g1 * plan.delta,
        "direction": chain.g1 * plan.beta * plan.sigma,
        "euler": omega * horizon * math.exp(chain.g_beta(plan.beta) * horizon),
        "time": modulus.phi_star(Delta),
    }
    set_bound = terms["truncation"] + terms["averaging"] + terms["magnitude"] + terms["direction"]
    euler_set_bound = set_bound + terms["euler"]
    funnel_bound = euler_set_bound + Delta + modulus.phi(Delta)

    targets: Dict[str, float] = {}
    within: Dict[str, bool] = {}
    if plan.epsilon is not None:
        eps = plan.epsilon
        allowance = eps / 10.0
        targets = {"set": eps / 2.0, "euler_set": 3.0 * eps / 5.0, "funnel": eps}
        within = {name: value <= allowance * (1.0 + 1e-12) for name, value in terms.items()}
        within["set"] = set_bound + allowance <= targets["set"] * (1.0 + 1e-12)
        within["euler_set"] = euler_set_bound + allowance <= targets["euler_set"] * (1.0 + 1e-12)
        within["funnel"] = funnel_bound + allowance <= targets["funnel"] * (1.0 + 1e-12)
        if not within["time"]:
            logger.warning(f"⚠️ phi_star(Delta)={terms['time']:.6g} exceeds eps/10={allowance:.6g}; "
                           f"funnel guarantee does not apply at this plan")

    return ErrorBudget(**terms, set_bound=set_bound, euler_set_bound=euler_set_bound,
                       funnel_bound=funnel_bound, omega=omega, targets=targets, within_allowance=within)


@dataclass
class ContinuityReport:
    """h(X(t_i), X(t_j)) against phi(|t_i - t_j|) over pairs of grid nodes"""
    pairs: int
    max_ratio: float
    violations: int
    witness: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def slice_continuity_check(bundle: TrajectoryBundle, phi, tolerance: float = 1e-9) -> ContinuityReport:
    """Attainable slices at grid nodes must move no faster than the trajectory modulus"""
    nodes = bundle.plan.gamma
    slices = [attainable_slice(bundle, t) for t in nodes]
    pairs, violations, max_ratio, witness = 0, 0, 0.0, {}
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            distance = hausdorff_points(slices[i], slices[j]).hausdorff
            bound = float(phi(nodes[j] - nodes[i]))
            ratio = distance / bound if bound > 0 else (math.inf if distance > 0 else 0.0)
            pairs += 1
            if distance > bound * (1.0 + tolerance):
                violations += 1
            if ratio > max_ratio:
                max_ratio, witness = ratio, {"t1": float(nodes[i]), "t2": float(nodes[j])}
    if violations:
        logger.warning(f"⚠️ Slice continuity violated on {violations}/{pairs} node pairs")
    return ContinuityReport(pairs=pairs, max_ratio=max_ratio, violations=violations, witness=witness)


def _check_refining(plans: Sequence[DiscretizationPlan]) -> None:
    for previous, current in zip(plans, plans[1:]):
        problems = []
        if not math.isclose(current.beta, previous.beta):
            problems.append("beta must stay fixed")
        # Nested time grids and magnitude ladders
        if current.N % previous.N != 0:
            problems.append("N must be a multiple of the previous N")
        if current.q % previous.q != 0:
            problems.append("q must be a multiple of the previous q")
        if current.sigma > previous.sigma:
            problems.append("sigma must be nonincreasing")
        if problems:
            raise InputValidationError(
                f"Study plans must refine: {'; '.join(problems)}",
                previous={"beta": previous.beta, "N": previous.N, "q": previous.q, "sigma": previous.sigma},
                current={"beta": current.beta, "N": current.N, "q": current.q, "sigma": current.sigma},
            )


def convergence_study(spec: DynamicsSpec, instance: ProblemInstance, plans: Sequence[DiscretizationPlan],
                      reference: Union[DiscretizationPlan, np.ndarray], *,
                      labels: Optional[Sequence[str]] = None, reference_substeps: int = DEFAULT_SUBSTEPS,
                      word_cap: int = DEFAULT_WORD_CAP, point_cap: int = DEFAULT_POINT_CAP,
                      omega_slope: Optional[float] = None, grid_density: int = 64, seed: int = 0,
                      record_wall_time: bool = False) -> pd.DataFrame:
    """
    One row per plan comparing its Euler bundle with a fixed reference: either
    the oracle bundle of a reference plan, or given points of the attainable
    set at theta (then h_C and funnel_h are not available).
    Capacity errors mark the row and the study moves on.
    """
    if not plans:
        raise InputValidationError("Study needs at least one plan")
    _check_refining(plans)
    chain = derive_constants(spec, instance)

    reference_bundle, reference_funnel = None, None
    if isinstance(reference, DiscretizationPlan):
        reference_net = build_sigma_net(spec.m, reference.sigma, point_cap)
        reference_bundle = build_bundle(spec, instance, reference, reference_net, mode="oracle",
                                        substeps=reference_substeps, cap=word_cap)
        reference_slice = attainable_slice(reference_bundle, instance.theta)
        reference_funnel = build_funnel(reference_bundle)
    else:
        reference_slice = _as_points(reference, "reference")

    rows = []
    for k, plan in enumerate(plans):
        label = labels[k] if labels is not None else f"N={plan.N},q={plan.q},sigma={plan.sigma:g}"
        row = {column: np.nan for column in STUDY_COLUMNS}
        row.update(label=label, N=plan.N, q=plan.q, sigma=plan.sigma, beta=plan.beta, status="ok")
        started = time.perf_counter()
        try:
            net = build_sigma_net(spec.m, plan.sigma, point_cap)
            bundle = build_bundle(spec, instance, plan, net, mode="euler", cap=word_cap)
            approximation = attainable_slice(bundle, instance.theta)
            slice_report = hausdorff_points(reference_slice, approximation)
            row.update(words=len(bundle), slice_directed=slice_report.directed_ab,
                       slice_h=slice_report.hausdorff)
            if reference_bundle is not None:
                row["h_C"] = hausdorff_uniform(bundle, reference_bundle).hausdorff
                row["funnel_h"] = hausdorff_funnel(build_funnel(bundle), reference_funnel).hausdorff
            modulus = ModulusEstimate.build(spec, instance, chain, plan.beta, omega_slope, grid_density, seed)
            row["euler_bound"] = error_budget(chain, plan, modulus).euler
        except CapacityError as e:
            logger.warning(f"⚠️ Study row {label} skipped: {e.message}")
            row["status"] = "capacity"
        if record_wall_time:
            row["wall_time"] = time.perf_counter() - started
        rows.append(row)
        logger.info(f"📊 Study row {label}: slice_directed={row['slice_directed']}, h_C={row['h_C']}")

    return pd.DataFrame(rows, columns=STUDY_COLUMNS)
