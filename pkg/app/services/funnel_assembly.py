"""
Funnel Assembly Service
Builds trajectory bundles (Euler broken lines or RK4 references) for every
admissible control word, extracts attainable-set slices and assembles the
funnel point cloud over the time grid
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Union

import numpy as np
from scipy.spatial import cKDTree

from app.core.control_grid import DEFAULT_WORD_CAP, ControlWord, enumerate_words
from app.core.errors import InputValidationError
from app.core.param_derivation import DiscretizationPlan
from app.core.sphere_net import SigmaNet
from app.core.system_model import DynamicsSpec, ProblemInstance
from app.core.trajectory_engine import (
    DEFAULT_SUBSTEPS, EulerPolyline, SampledTrajectory, control_values, euler_batch, rk4_batch,
)

logger = logging.getLogger(__name__)

BUNDLE_MODES = ("euler", "oracle")
# Slice points closer than this in the max-norm are merged
DEDUP_TOLERANCE = 1e-9
DEFAULT_CHUNK_SIZE = 4096


@dataclass
class TrajectoryBundle:
    """One trajectory per enumerated word, in enumeration order"""
    plan: DiscretizationPlan
    mode: str                       # 'euler' or 'oracle'
    words: List[ControlWord]
    times: np.ndarray               # Grid nodes (euler) or dense samples (oracle)
    states: np.ndarray              # Shape (W, len(times), n)
    substeps: int = 1               # Samples per grid interval
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def n(self) -> int:
        return int(self.states.shape[2])

    def trajectory(self, index: int) -> Union[EulerPolyline, SampledTrajectory]:
        if self.mode == "euler":
            return EulerPolyline(grid=self.times, nodes=self.states[index], word_index=index)
        return SampledTrajectory(times=self.times, states=self.states[index], word_index=index,
                                 substeps=self.substeps)

    @property
    def trajectories(self) -> List[Union[EulerPolyline, SampledTrajectory]]:
        return [self.trajectory(k) for k in range(len(self))]

    def node_states(self) -> np.ndarray:
        """States at the grid nodes, shape (W, N+1, n)"""
        return self.states[:, ::self.substeps, :]

    def states_at(self, t: float) -> np.ndarray:
        """Every trajectory at time t by linear interpolation, exact at sample times; shape (W, n)"""
        times = self.times
        position = int(np.searchsorted(times, t, side="left"))
        if position < len(times) and times[position] == t:
            return self.states[:, position, :]
        index = min(max(position - 1, 0), len(times) - 2)
        weight = (t - times[index]) / (times[index + 1] - times[index])
        return self.states[:, index, :] + weight * (self.states[:, index + 1, :] - self.states[:, index, :])


def build_bundle(spec: DynamicsSpec, instance: ProblemInstance, plan: DiscretizationPlan, net: SigmaNet,
                 mode: str = "euler", substeps: int = DEFAULT_SUBSTEPS, cap: int = DEFAULT_WORD_CAP,
                 chunk_size: int = DEFAULT_CHUNK_SIZE, progress_every: int = 0) -> TrajectoryBundle:
    """
    Trajectories of every admissible word: Euler broken lines in 'euler'
    mode, RK4 references with `substeps` steps per interval in 'oracle' mode
    """
    if mode not in BUNDLE_MODES:
        raise InputValidationError(f"Unknown bundle mode {mode!r}", available=list(BUNDLE_MODES))
    if net.m != spec.m:
        raise InputValidationError(f"Net lives on S^{net.m - 1}, system has m={spec.m}", net_m=net.m, m=spec.m)

    started = time.perf_counter()
    words = list(enumerate_words(plan, net, cap=cap, progress_every=progress_every))
    logger.info(f"✅ Enumerated {len(words)} control words")

    blocks = []
    times = plan.gamma
    for start in range(0, len(words), chunk_size):
        controls = control_values(words[start:start + chunk_size], plan, net)
        if mode == "euler":
            blocks.append(euler_batch(spec, instance, plan, controls, first_index=start))
        else:
            times, states = rk4_batch(spec, instance, plan, controls, substeps, first_index=start)
            blocks.append(states)
        logger.debug(f"Integrated words {start}..{start + len(controls) - 1} ({mode})")

    states = np.concatenate(blocks, axis=0)
    elapsed = time.perf_counter() - started
    bundle = TrajectoryBundle(
        plan=plan, mode=mode, words=words, times=times, states=states,
        substeps=1 if mode == "euler" else int(substeps),
        metadata={"words": len(words), "mode": mode, "net_points": net.size,
                  "substeps": 1 if mode == "euler" else int(substeps), "seconds": elapsed},
    )
    logger.info(f"✅ Built {mode} bundle: {len(words)} trajectories in {elapsed:.2f}s")
    return bundle


def dedupe_points(points: np.ndarray, tolerance: float = DEDUP_TOLERANCE) -> np.ndarray:
    """
    Merge points closer than tolerance in the max-norm; the first appearance
    of each cluster is kept and the output preserves input order
    """
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return points
    _, first = np.unique(points, axis=0, return_index=True)
    first = np.sort(first)
    unique = points[first]
    if len(unique) == 1:
        return unique

    parent = list(range(len(unique)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(cKDTree(unique).query_pairs(r=tolerance, p=np.inf)):
        root_i, root_j = find(i), find(j)
        if root_i != root_j:
            parent[max(root_i, root_j)] = min(root_i, root_j)

    keep = [i for i in range(len(unique)) if find(i) == i]
    return unique[keep]


def attainable_slice(bundle: TrajectoryBundle, t: float) -> np.ndarray:
    """Deduplicated states of all bundle trajectories at time t, shape (k, n)"""
    plan = bundle.plan
    if not plan.t0 <= t <= plan.theta:
        raise InputValidationError(f"t={t} lies outside the horizon [{plan.t0}, {plan.theta}]",
                                   t=t, t0=plan.t0, theta=plan.theta)
    return dedupe_points(bundle.states_at(t))


@dataclass
class FunnelCloud:
    """Points (t_i, z) grouped by grid index i"""
    times: np.ndarray                                   # Grid nodes t_0..t_N
    slices: List[np.ndarray] = field(default_factory=list)  # slices[i] has shape (k_i, n)

    @property
    def size(self) -> int:
        return int(sum(len(s) for s in self.slices))

    def slice_sizes(self) -> List[int]:
        return [len(s) for s in self.slices]

    def indices(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.slices)), self.slice_sizes())

    def points(self) -> np.ndarray:
        """Stacked (t_i, z) rows, shape (size, n+1)"""
        rows = [np.column_stack((np.full(len(s), t), s)) for t, s in zip(self.times, self.slices)]
        return np.vstack(rows)


def build_funnel(bundle: TrajectoryBundle) -> FunnelCloud:
    """Union over grid nodes of (t_i, slice at t_i); oracle bundles are read at their grid samples"""
    nodes = bundle.node_states()
    slices = [dedupe_points(nodes[:, i, :]) for i in range(nodes.shape[1])]
    cloud = FunnelCloud(times=bundle.plan.gamma, slices=slices)
    logger.info(f"✅ Assembled funnel: {cloud.size} points over {len(slices)} grid nodes")
    return cloud
