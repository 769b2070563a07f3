"""
Control Grid
Enumeration of the finite admissible set of piecewise-constant controls
u(t) = r_j * b_l on each grid interval under the L_p budget, plus the
interval-averaging projection of a continuous control onto the time grid
"""

import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Tuple, Union

import numpy as np

from app.core.errors import CapacityError, InputValidationError
from app.core.param_derivation import DiscretizationPlan
from app.core.sphere_net import SigmaNet

logger = logging.getLogger(__name__)

DEFAULT_WORD_CAP = 10_000_000


@dataclass(frozen=True)
class ControlWord:
    """Magnitude index j_i and net direction index l_i for every grid interval"""
    magnitude_indices: Tuple[int, ...]
    direction_indices: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "magnitude_indices", tuple(int(j) for j in self.magnitude_indices))
        object.__setattr__(self, "direction_indices", tuple(int(l) for l in self.direction_indices))
        if len(self.magnitude_indices) != len(self.direction_indices):
            raise InputValidationError("Magnitude and direction sequences differ in length",
                                       magnitudes=len(self.magnitude_indices),
                                       directions=len(self.direction_indices))
        for j, l in zip(self.magnitude_indices, self.direction_indices):
            if j < 0 or l < 0:
                raise InputValidationError("Word indices must be nonnegative", j=j, l=l)
            if j == 0 and l != 0:
                raise InputValidationError("Zero magnitude requires direction index 0", l=l)

    @property
    def N(self) -> int:
        return len(self.magnitude_indices)

    def values(self, plan: DiscretizationPlan, net: SigmaNet) -> np.ndarray:
        """Control value on each interval, shape (N, m)"""
        levels = plan.levels
        return levels[list(self.magnitude_indices)][:, None] * net.points[list(self.direction_indices)]


class BudgetRule:
    """
    Budget test Delta * sum (j_i * delta)^p <= r^p written as
    sum j_i^p * (delta^p * Delta) <= r^p. For integral p the sum is an exact
    integer, otherwise a left-to-right float sum. Equality is admissible.
    """

    def __init__(self, plan: DiscretizationPlan):
        self.p = plan.p
        self.integral = float(plan.p).is_integer()
        self.unit = plan.delta ** plan.p * plan.delta_t
        self.limit = plan.r ** plan.p
        self.q = plan.q

    def power(self, j: int) -> Union[int, float]:
        if self.integral:
            return j ** int(self.p)
        return float(j) ** self.p

    def admits(self, total: Union[int, float]) -> bool:
        return total * self.unit <= self.limit

    def total(self, magnitude_indices) -> Union[int, float]:
        total = 0 if self.integral else 0.0
        for j in magnitude_indices:
            total += self.power(j)
        return total


def _check_word(word: ControlWord, plan: DiscretizationPlan) -> None:
    if word.N != plan.N:
        raise InputValidationError(f"Word has {word.N} intervals, plan has N={plan.N}", word_N=word.N, N=plan.N)
    if max(word.magnitude_indices) > plan.q:
        raise InputValidationError(f"Magnitude index exceeds q={plan.q}", q=plan.q)


def feasible(word: ControlWord, plan: DiscretizationPlan) -> bool:
    """True iff the word respects the L_p budget"""
    _check_word(word, plan)
    rule = BudgetRule(plan)
    return rule.admits(rule.total(word.magnitude_indices))


def word_lp_norm(word: ControlWord, plan: DiscretizationPlan, p: float = None) -> float:
    """(Delta * sum (j_i * delta)^p)^(1/p)"""
    _check_word(word, plan)
    if p is None or p == plan.p:
        # Same arithmetic as the feasibility test
        rule = BudgetRule(plan)
        return float(rule.total(word.magnitude_indices) * rule.unit) ** (1.0 / plan.p)
    magnitudes = np.asarray(word.magnitude_indices, dtype=float) * plan.delta
    return float((plan.delta_t * np.sum(magnitudes ** p)) ** (1.0 / p))


def magnitude_sequences(plan: DiscretizationPlan) -> Iterator[Tuple[int, ...]]:
    """Budget-feasible j-sequences in lexicographic order, depth-first with prefix pruning"""
    rule = BudgetRule(plan)
    powers = [rule.power(j) for j in range(plan.q + 1)]
    sequence = [0] * plan.N
    zero = 0 if rule.integral else 0.0

    # Explicit stack of (interval, next magnitude, prefix total)
    stack: List[Tuple[int, int, Union[int, float]]] = [(0, 0, zero)]
    while stack:
        i, j, prefix = stack.pop()
        if i == plan.N:
            yield tuple(sequence)
            continue
        if j > plan.q:
            continue
        total = prefix + powers[j]
        # powers grow with j, so the first failing j ends this interval
        if not rule.admits(total):
            continue
        sequence[i] = j
        stack.append((i, j + 1, prefix))
        stack.append((i + 1, 0, total))


def count_words(plan: DiscretizationPlan, net: SigmaNet) -> int:
    """Exact number of canonical words, by dynamic programming over partial budget sums"""
    rule = BudgetRule(plan)
    powers = [rule.power(j) for j in range(plan.q + 1)]
    directions = net.size
    states: Dict[Union[int, float], int] = {0 if rule.integral else 0.0: 1}
    for _ in range(plan.N):
        following: Dict[Union[int, float], int] = defaultdict(int)
        for prefix, ways in states.items():
            for j, power in enumerate(powers):
                total = prefix + power
                if not rule.admits(total):
                    break
                following[total] += ways * (1 if j == 0 else directions)
        states = following
    return sum(states.values())


def enumerate_words(plan: DiscretizationPlan, net: SigmaNet, cap: int = DEFAULT_WORD_CAP,
                    progress_every: int = 0) -> Iterator[ControlWord]:
    """
    Stream every canonical admissible word in lexicographic (j-sequence,
    l-sequence) order. Directions are only enumerated on intervals with j > 0.
    """
    if net.m < 1 or net.size < 1:
        raise InputValidationError("Net must be nonempty")

    emitted = 0
    for magnitudes in magnitude_sequences(plan):
        choices = [range(net.size) if j > 0 else (0,) for j in magnitudes]
        for directions in itertools.product(*choices):
            if emitted >= cap:
                total = count_words(plan, net)
                raise CapacityError(
                    f"Control word count exceeds cap {cap}",
                    found=emitted, lower_bound=total, cap=cap,
                )
            emitted += 1
            if progress_every and emitted % progress_every == 0:
                logger.info(f"🔄 Enumerated {emitted} control words")
            yield ControlWord(magnitudes, directions)
    logger.debug(f"Enumeration finished with {emitted} words")


@dataclass
class PiecewiseControl:
    """Control equal to values[i] on [grid[i], grid[i+1])"""
    grid: np.ndarray        # Shape (N+1,)
    values: np.ndarray      # Shape (N, m)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.grid.ndim != 1 or len(self.grid) < 2:
            raise InputValidationError("Control grid must have at least two nodes")
        if self.values.shape[0] != len(self.grid) - 1:
            raise InputValidationError("One control value per grid interval is required",
                                       intervals=len(self.grid) - 1, values=self.values.shape[0])
        if np.any(np.diff(self.grid) <= 0):
            raise InputValidationError("Control grid must be strictly increasing")

    @classmethod
    def from_word(cls, word: ControlWord, plan: DiscretizationPlan, net: SigmaNet) -> "PiecewiseControl":
        return cls(plan.gamma, word.values(plan, net))

    @property
    def m(self) -> int:
        return int(self.values.shape[1])

    def __call__(self, t: float) -> np.ndarray:
        index = int(np.searchsorted(self.grid, t, side="right")) - 1
        index = min(max(index, 0), len(self.values) - 1)
        return self.values[index]

    def lp_norm(self, p: float) -> float:
        norms = np.linalg.norm(self.values, axis=1)
        return float(np.sum(np.diff(self.grid) * norms ** p) ** (1.0 / p))

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def integral(self, a: float, b: float) -> np.ndarray:
        """Exact integral of the step function over [a, b]"""
        lower = np.clip(self.grid[:-1], a, b)
        upper = np.clip(self.grid[1:], a, b)
        return (upper - lower) @ self.values


def average_control(u: Union[Callable[[float], np.ndarray], PiecewiseControl], plan: DiscretizationPlan,
                    quadrature_nodes: int = 16) -> PiecewiseControl:
    """
    Interval means of u on the plan's time grid. Step functions are averaged
    exactly; other callables with Gauss-Legendre quadrature per interval.
    """
    grid = plan.gamma
    if len(grid) < 2:
        raise InputValidationError("Cannot average onto an empty grid")

    if isinstance(u, PiecewiseControl):
        widths = np.diff(grid)
        values = np.array([u.integral(a, b) for a, b in zip(grid[:-1], grid[1:])]) / widths[:, None]
    else:
        nodes, weights = np.polynomial.legendre.leggauss(quadrature_nodes)
        rows = []
        for a, b in zip(grid[:-1], grid[1:]):
            times = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            samples = np.array([np.atleast_1d(np.asarray(u(t), dtype=float)) for t in times])
            rows.append(weights @ samples / 2.0)
        values = np.array(rows)

    if not np.all(np.isfinite(values)):
        raise InputValidationError("Averaged control is not finite")
    averaged = PiecewiseControl(grid, values)
    if averaged.sup_norm() > plan.beta * (1.0 + 1e-12):
        raise InputValidationError(f"Averaged control exceeds magnitude cap beta={plan.beta}",
                                   sup_norm=averaged.sup_norm(), beta=plan.beta)
    return averaged
