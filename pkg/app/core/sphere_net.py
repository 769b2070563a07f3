"""
Sphere Nets
Deterministic finite sigma-nets on the unit sphere S^(m-1) with an analytic
certified covering radius and a sampling-based covering check
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.spatial import cKDTree

from app.core.errors import CapacityError, InputValidationError

logger = logging.getLogger(__name__)

DEFAULT_POINT_CAP = 1_000_000
UNIT_NORM_TOLERANCE = 1e-12
COVERING_CHUNK = 65536


@dataclass
class SigmaNet:
    """Unit vectors b1..ba such that every unit vector lies within sigma of one of them"""
    m: int
    sigma: float
    points: np.ndarray                          # Shape (a, m)
    certified_radius: Optional[float] = None    # Analytic covering radius of the construction

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0 or self.points.shape[1] != self.m:
            raise InputValidationError(f"Net points must form a nonempty (a, {self.m}) array",
                                       shape=list(self.points.shape))
        norms = np.linalg.norm(self.points, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
            raise InputValidationError("Net points must have unit norm", worst=float(np.max(np.abs(norms - 1.0))))

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def summary(self) -> Dict[str, Any]:
        return {"m": self.m, "sigma": self.sigma, "points": self.size, "certified_radius": self.certified_radius}


def _circle_count(sigma: float) -> int:
    """Equally spaced points on S^1 whose half-spacing chord is <= sigma"""
    sigma = min(sigma, 2.0)
    k = max(1, math.ceil(math.pi / (2.0 * math.asin(sigma / 2.0))))
    while 2.0 * math.sin(math.pi / (2.0 * k)) > sigma:
        k += 1
    while k > 1 and 2.0 * math.sin(math.pi / (2.0 * (k - 1))) <= sigma:
        k -= 1
    return k


def _ring_count(sigma: float) -> int:
    """Latitude rings so every polar angle is within a chord of sigma/2 of a ring"""
    half_angle = 2.0 * math.asin(min(sigma, 2.0) / 4.0)
    return max(1, math.ceil(math.pi / (2.0 * half_angle)))


def count_net_points(m: int, sigma: float) -> int:
    """Size of build_sigma_net(m, sigma) without building it"""
    if m == 1:
        return 2
    if m == 2:
        return _circle_count(sigma)
    return _ring_count(sigma) * count_net_points(m - 1, sigma / 2.0)


def _build(m: int, sigma: float):
    if m == 1:
        return np.array([[1.0], [-1.0]]), 0.0
    if m == 2:
        k = _circle_count(sigma)
        angles = 2.0 * math.pi * np.arange(k) / k
        return np.column_stack((np.cos(angles), np.sin(angles))), 2.0 * math.sin(math.pi / (2.0 * k))

    # Rings at polar angles (2i+1)pi/(2L), each carrying a scaled copy of one S^(m-2) net
    rings = _ring_count(sigma)
    sub_points, sub_radius = _build(m - 1, sigma / 2.0)
    polar = (2.0 * np.arange(rings) + 1.0) * math.pi / (2.0 * rings)
    blocks: List[np.ndarray] = []
    for angle in polar:
        block = np.empty((len(sub_points), m))
        block[:, 0] = math.cos(angle)
        block[:, 1:] = math.sin(angle) * sub_points
        blocks.append(block)
    points = np.vstack(blocks)
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    latitude_gap = 2.0 * math.sin(math.pi / (4.0 * rings))
    radius = float(np.max(latitude_gap + np.sin(polar) * sub_radius))
    return points, radius


def build_sigma_net(m: int, sigma: float, point_cap: int = DEFAULT_POINT_CAP) -> SigmaNet:
    """
    m = 1 gives [+1, -1]; m = 2 an equally spaced circle grid; m >= 3 latitude
    rings (chord sigma/2 in the polar angle) times a sigma/2 net of S^(m-2).
    Point order is deterministic for fixed (m, sigma).
    """
    if int(m) != m or m < 1:
        raise InputValidationError("m must be a positive integer", m=m)
    if not np.isfinite(sigma) or sigma <= 0:
        raise InputValidationError("sigma must be positive", sigma=sigma)

    required = count_net_points(m, sigma)
    if required > point_cap:
        raise CapacityError(f"sigma={sigma} needs a net of {required} points on S^{m - 1}",
                            required=required, cap=point_cap)

    points, radius = _build(int(m), float(sigma))
    net = SigmaNet(m=int(m), sigma=float(sigma), points=points, certified_radius=radius)
    logger.info(f"✅ Built sigma-net on S^{m - 1}: {net.size} points, certified radius {radius:.6g} (sigma={sigma})")
    return net


@dataclass
class CoveringReport:
    """Largest observed distance from a sampled unit vector to the net"""
    samples: int
    sigma: float
    max_gap: float
    witness: List[float] = field(default_factory=list)   # Sample achieving max_gap
    nearest: int = 0                                      # Index of its closest net point

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.sigma


def covering_check(net: SigmaNet, samples: int, seed: int = 0) -> CoveringReport:
    """Uniform unit vectors (normalized Gaussians) against the net's nearest point"""
    if samples < 1:
        raise InputValidationError("samples must be at least 1", samples=samples)

    rng = np.random.default_rng(seed)
    tree = cKDTree(net.points)
    max_gap, witness, nearest = -1.0, None, 0
    remaining = samples
    while remaining > 0:
        size = min(remaining, COVERING_CHUNK)
        draws = rng.standard_normal((size, net.m))
        norms = np.linalg.norm(draws, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        draws /= norms
        distances, indices = tree.query(draws)
        worst = int(np.argmax(distances))
        if distances[worst] > max_gap:
            max_gap, witness, nearest = float(distances[worst]), draws[worst], int(indices[worst])
        remaining -= size

    report = CoveringReport(samples=samples, sigma=net.sigma, max_gap=max_gap,
                            witness=witness.tolist(), nearest=nearest)
    if report.passed:
        logger.info(f"✅ Covering check passed: max gap {max_gap:.6g} <= sigma={net.sigma}")
    else:
        logger.warning(f"⚠️ Covering check failed: max gap {max_gap:.6g} > sigma={net.sigma}")
    return report
