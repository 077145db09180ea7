import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
DEFAULT_SCAN_SAMPLES = 100001
CROSSING_XTOL = 1e-10

STEP = "step"
CONSTANT_PLUS = "constant_plus"
CONSTANT_MINUS = "constant_minus"


class SymmetryError(ValueError):
    """Raised when four locations do not satisfy b2 - b1 == b4 - b3."""


def sample_target(f_target, points: np.ndarray) -> np.ndarray:
    """Evaluate a target on an array of points, falling back to a Python loop for scalar-only callables."""
    try:
        values = np.asarray(f_target(points), dtype=np.float64)
        if values.shape == points.shape[:1]:
            return values
    except (TypeError, ValueError):
        pass
    return np.array([float(f_target(x)) for x in points], dtype=np.float64)


@dataclass
class PiecewiseConstant:
    """
    g(x) = offset + delta_h * sum_j signs[j] * [x >= locations[j]].

    Every jump has the same height delta_h; offset is the base level f(0).
    """
    delta_h: float
    locations: np.ndarray
    signs: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64).reshape(-1)
        self.signs = np.asarray(self.signs, dtype=np.int64).reshape(-1)
        if self.delta_h <= 0:
            raise ValueError(f"delta_h must be positive, got {self.delta_h}.")
        if len(self.locations) != len(self.signs):
            raise ValueError("Step locations and signs must have equal lengths.")
        if np.any(np.diff(self.locations) <= 0):
            raise ValueError("Step locations must be strictly increasing.")

    @property
    def J(self) -> int:
        return len(self.locations)

    @property
    def steps(self) -> list[tuple[float, int]]:
        return [(float(s), int(a)) for s, a in zip(self.locations, self.signs)]

    @property
    def signed_count(self) -> int:
        """J' = sum of the step signs."""
        return int(np.sum(self.signs))

    @property
    def min_gap(self) -> float:
        """delta_s, the smallest distance between consecutive steps (1 with fewer than two steps)."""
        if self.J < 2:
            return 1.0
        return float(np.min(np.diff(self.locations)))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        counts = np.zeros_like(x)
        for s, a in zip(self.locations, self.signs):
            counts += a * (x >= s)
        return self.offset + self.delta_h * counts

    def to_dict(self) -> dict:
        return {
            "delta_h": float.hex(float(self.delta_h)),
            "offset": float.hex(float(self.offset)),
            "locations": [float.hex(float(s)) for s in self.locations],
            "signs": "".join("+" if a > 0 else "-" for a in self.signs),
        }


def _scalar_view(f_target):
    try:
        if np.asarray(f_target(np.array([0.0, 0.5])), dtype=np.float64).shape == (2,):
            return lambda x: float(f_target(np.array([x]))[0])
    except (TypeError, ValueError):
        pass
    return lambda x: float(f_target(x))


def _refine_crossing(f_scalar, left: float, right: float, level: float) -> float:
    g_left = f_scalar(left) - level
    g_right = f_scalar(right) - level
    if g_left == 0.0:
        return left
    if g_right == 0.0:
        return right
    if g_left * g_right > 0:
        return left if abs(g_left) <= abs(g_right) else right
    return brentq(lambda x: f_scalar(x) - level, left, right, xtol=CROSSING_XTOL)


def decompose_target(f_target, eps: float, delta_h: float | None = None,
                     num_samples: int = DEFAULT_SCAN_SAMPLES) -> PiecewiseConstant:
    """
    Approximate a continuous target on [0, 1] by a step function with a common jump.

    The target is sampled on a uniform grid, quantized to the levels offset + k*delta_h, and
    every change of level is refined to the crossing of the half level between them.

    Args:
        f_target: Callable on [0, 1]; vectorized callables are sampled in one call.
        eps: Requested accuracy. delta_h defaults to eps / 4.
        delta_h: Explicit jump height, must not exceed eps.
        num_samples: Size of the scan grid.

    Returns:
        PiecewiseConstant with sup |g - f| <= delta_h / 2 on the scan grid.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}.")
    delta_h = eps / 4.0 if delta_h is None else float(delta_h)
    if not 0 < delta_h <= eps:
        raise ValueError(f"delta_h must lie in (0, eps], got {delta_h} for eps={eps}.")

    xs = np.linspace(0.0, 1.0, num_samples)
    ys = sample_target(f_target, xs)
    offset = float(ys[0])
    levels = np.floor((ys - offset) / delta_h + 0.5).astype(np.int64)
    levels[0] = 0
    f_scalar = _scalar_view(f_target)

    locations, signs = [], []
    for i in np.flatnonzero(np.diff(levels)) + 1:
        previous, current = int(levels[i - 1]), int(levels[i])
        if current > previous:
            crossed, sign = range(previous, current), 1
        else:
            crossed, sign = range(previous - 1, current - 1, -1), -1
        for k in crossed:
            level = offset + (k + 0.5) * delta_h
            locations.append(_refine_crossing(f_scalar, float(xs[i - 1]), float(xs[i]), level))
            signs.append(sign)

    locations, signs = _merge_coincident_steps(locations, signs)
    g = PiecewiseConstant(delta_h=delta_h, locations=locations, signs=signs, offset=offset)
    logger.debug(f"Decomposed target into {g.J} steps of height {delta_h:.6g} (min gap {g.min_gap:.3g}).")
    return g


def _merge_coincident_steps(locations: list[float], signs: list[int]) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(np.asarray(locations, dtype=np.float64), kind="stable")
    merged_s: list[float] = []
    merged_a: list[int] = []
    for i in order:
        s, a = locations[i], signs[i]
        if merged_s and merged_s[-1] == s:
            total = merged_a[-1] + a
            if total == 0:
                merged_s.pop()
                merged_a.pop()
                continue
            raise ValueError(f"Two level crossings coincide at x={s}; the target looks discontinuous.")
        merged_s.append(s)
        merged_a.append(a)
    return np.array(merged_s, dtype=np.float64), np.array(merged_a, dtype=np.int64)


@dataclass(frozen=True)
class FourPairAssignment:
    """
    Coefficients for four (+, -) basis pairs at symmetric locations b1 < b2 <= b3 < b4.

    The subnetwork is sum_i p_i relu(x - b_i) + q_i relu(b_i - x).
    """
    locations: np.ndarray
    p: np.ndarray
    q: np.ndarray
    kind: str
    sign: int = 1

    @property
    def d(self) -> float:
        return float(self.locations[1] - self.locations[0])

    @property
    def k1(self) -> float:
        return float(self.locations[2] - self.locations[1]) / 2.0

    @property
    def k2(self) -> float:
        return float(self.locations[3] - self.locations[0]) / 2.0

    @property
    def center(self) -> float:
        return float(self.locations[1] + self.locations[2]) / 2.0

    @property
    def height(self) -> float:
        """h = 4 d (b4 - b2)."""
        return 4.0 * self.d * float(self.locations[3] - self.locations[1])

    def coefficients(self) -> np.ndarray:
        """Interleaved (p1, q1, ..., p4, q4)."""
        return np.column_stack((self.p, self.q)).reshape(-1)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[..., None]
        b = self.locations
        return np.sum(self.p * np.maximum(x - b, 0.0) + self.q * np.maximum(b - x, 0.0), axis=-1)

    def sensitivity(self, radius: float = 1e-6) -> float:
        """
        Sup-norm change on [0, 1] per unit shift when each location and coefficient moves by at most radius.

        Taken over all 2^12 corner shifts. The form is piecewise linear in x, so the sup is
        attained at 0, 1 or one of the original or shifted locations.
        """
        corners = radius * np.array(list(itertools.product((-1.0, 1.0), repeat=12)))
        b = self.locations + corners[:, :4]
        p = self.p + corners[:, 4:8]
        q = self.q + corners[:, 8:]
        ends = np.broadcast_to([0.0, 1.0], (len(corners), 2))
        x = np.clip(np.concatenate((ends, np.broadcast_to(self.locations, b.shape), b), axis=1), 0.0, 1.0)
        xs, bs = x[..., None], b[:, None, :]
        shifted = np.sum(p[:, None, :] * np.maximum(xs - bs, 0.0) + q[:, None, :] * np.maximum(bs - xs, 0.0), axis=-1)
        return float(np.max(np.abs(shifted - self(x)))) / radius


def check_symmetric(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.shape != (4,):
        raise ValueError(f"Expected four locations, got {b.shape[0]}.")
    if not (b[0] <= b[1] <= b[2] <= b[3] and b[0] < b[3]):
        raise ValueError(f"Locations must be ascending with b1 < b4, got {b.tolist()}.")
    if abs((b[1] - b[0]) - (b[3] - b[2])) > SYMMETRY_TOLERANCE:
        raise SymmetryError(f"Locations {b.tolist()} violate b2 - b1 == b4 - b3.")
    return b


def step_matching(b, sign: int = 1) -> FourPairAssignment:
    """
    Step-matched coefficients p = (-b1, b2, b3, -b4), q = (b4, -b3, -b2, b1).

    The subnetwork equals -h/2 left of b1, +h/2 right of b4 and is monotone in between.
    sign=-1 negates every coefficient and gives a descending step from the same values.
    """
    b = check_symmetric(b)
    p = np.array([-b[0], b[1], b[2], -b[3]])
    q = np.array([b[3], -b[2], -b[1], b[0]])
    if sign < 0:
        p, q = -p, -q
    return FourPairAssignment(locations=b, p=p, q=q, kind=STEP, sign=1 if sign > 0 else -1)


def constant_matching(b, sign: int = 1) -> FourPairAssignment:
    """Constant-matched coefficients: the subnetwork is exactly sign * h / 2 everywhere."""
    b = check_symmetric(b)
    p = np.array([-b[0], b[1], b[2], -b[3]])
    if sign < 0:
        p = -p
    return FourPairAssignment(
        locations=b, p=p, q=-p,
        kind=CONSTANT_PLUS if sign > 0 else CONSTANT_MINUS,
        sign=1 if sign > 0 else -1,
    )


def linear_reorganize(b: float, m: int) -> tuple[float, float]:
    """(slope, intercept) of the pair p = m*b, q = -m*b, which equals m*(b*x - b**2)."""
    b = float(b)
    return m * b, -m * b * b


def affine_sup(slope: float, intercept: float, domain=(0.0, 1.0)) -> float:
    """Exact sup of |slope * x + intercept| over the domain."""
    lo, hi = domain
    return max(abs(slope * lo + intercept), abs(slope * hi + intercept))


def adjacent_gap(values) -> float:
    """Largest gap between adjacent values in sorted order (0 for fewer than two values)."""
    values = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if len(values) < 2:
        return 0.0
    return float(np.max(np.diff(values)))


def sign_assignment(c) -> np.ndarray:
    """
    Choose m_i in {+1, -1} so that 0 <= sum m_i c_i <= largest adjacent gap of c.

    Sort descending, pair neighbours, sort the pair differences descending and give the
    pairs alternating signs, the larger element of each pair taking the pair's sign.
    Ties are broken by original index.
    """
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if len(c) % 2:
        raise ValueError(f"sign_assignment needs an even number of values, got {len(c)}.")
    signs = np.zeros(len(c), dtype=np.int64)
    if len(c) == 0:
        return signs
    order = np.argsort(-c, kind="stable")
    larger, smaller = order[0::2], order[1::2]
    differences = c[larger] - c[smaller]
    pair_order = np.argsort(-differences, kind="stable")
    lam = np.where(np.arange(len(pair_order)) % 2 == 0, 1, -1)
    pair_signs = np.empty(len(pair_order), dtype=np.int64)
    pair_signs[pair_order] = lam
    signs[larger] = pair_signs
    signs[smaller] = -pair_signs
    return signs


def run_length_ranges(indices) -> list[list[int]]:
    """Compress sorted integer indices into [start, stop) ranges."""
    indices = np.sort(np.asarray(indices, dtype=np.int64).reshape(-1))
    if len(indices) == 0:
        return []
    breaks = np.flatnonzero(np.diff(indices) != 1) + 1
    starts = np.concatenate(([0], breaks))
    stops = np.concatenate((breaks, [len(indices)]))
    return [[int(indices[a]), int(indices[b - 1]) + 1] for a, b in zip(starts, stops)]


@dataclass
class ConstructionLedger:
    """Bookkeeping of a constructive build: index sets, signs, constants and the error budget."""
    builder: str
    n: int
    delta_h: float = 0.0
    J: int = 0
    step_indices: list[np.ndarray] = field(default_factory=list)
    step_signs: list[int] = field(default_factory=list)
    constant_blocks: list[tuple[np.ndarray, int]] = field(default_factory=list)
    unused_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    unused_signs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    residual_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    shift_constant: float = 0.0
    refinement: int = 1
    gamma: float = 1.0
    alpha: float = 0.0
    domain_map: tuple[float, float] = (0.0, 1.0)
    budget: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def used_indices(self) -> np.ndarray:
        parts = list(self.step_indices) + [idx for idx, _ in self.constant_blocks]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(parts).astype(np.int64)

    def note(self, message: str) -> None:
        self.notes.append(message)
        logger.debug(f"[{self.builder}] {message}")

    def validate(self) -> None:
        """Index sets must be pairwise disjoint and cover 0..n-1 exactly once."""
        everything = np.concatenate([
            self.used_indices,
            np.asarray(self.unused_indices, dtype=np.int64),
            np.asarray(self.residual_indices, dtype=np.int64),
        ])
        counts = np.bincount(everything, minlength=self.n)
        if len(counts) != self.n or np.any(counts != 1):
            raise ValueError(
                f"Ledger index sets do not partition 0..{self.n - 1} "
                f"({int(np.sum(counts > 1))} repeated, {int(np.sum(counts == 0))} missing)."
            )

    def to_dict(self) -> dict:
        return {
            "builder": self.builder,
            "n": self.n,
            "delta_h": float.hex(float(self.delta_h)),
            "J": self.J,
            "refinement": self.refinement,
            "gamma": float.hex(float(self.gamma)),
            "alpha": float.hex(float(self.alpha)),
            "shift_constant": float.hex(float(self.shift_constant)),
            "domain_map": [float.hex(float(v)) for v in self.domain_map],
            "steps": [
                {"indices": run_length_ranges(idx), "sign": "+" if a > 0 else "-"}
                for idx, a in zip(self.step_indices, self.step_signs)
            ],
            "constant_blocks": [
                {"indices": run_length_ranges(idx), "sign": "+" if a > 0 else "-"}
                for idx, a in self.constant_blocks
            ],
            "unused": run_length_ranges(self.unused_indices),
            "unused_signs": "".join("+" if m > 0 else "-" for m in self.unused_signs),
            "residual": run_length_ranges(self.residual_indices),
            "budget": {k: float(v) for k, v in self.budget.items()},
            "notes": list(self.notes),
        }


class Annihilation(NamedTuple):
    signs: np.ndarray
    c_eta: float
    bound: float
    beta: float


def annihilate_remainder(ledger: ConstructionLedger | None, locations) -> Annihilation:
    """
    Turn the unused (+, -) pairs into a small affine remainder.

    Each unused pair at b_i is linearly reorganized to m_i (b_i x - b_i^2) with m from
    sign_assignment, so the remainder is beta * x + eta with 0 <= beta <= delta_b.
    The shift C_eta = -eta cancels the intercept.

    Returns:
        Annihilation(signs, c_eta, bound=delta_b, beta)
    """
    locations = np.asarray(locations, dtype=np.float64).reshape(-1)
    if len(locations) % 2:
        raise ValueError(f"Cannot annihilate an odd number ({len(locations)}) of unused pairs.")
    signs = sign_assignment(locations)
    beta = float(math.fsum(signs * locations))
    eta = -float(math.fsum(signs * locations * locations))
    bound = adjacent_gap(locations)
    result = Annihilation(signs=signs, c_eta=-eta, bound=bound, beta=beta)
    if ledger is not None:
        ledger.unused_signs = signs
        ledger.shift_constant = result.c_eta
        ledger.budget["unused_gap"] = bound
    return result


def step_error_l2(b, gamma: float = 1.0) -> float:
    """
    Closed-form L2 distance between gamma * step approximator and gamma * (ideal step of height h).

    e^2 = gamma^2 (8/3) (k1 - k2)^2 (k1^3 + 3 k1^2 k2 + 2 k1 k2^2 + k2^3)
    """
    return pseudo_copy_error_l2(b, 0.0, gamma)


def pseudo_copy_error_l2(b, delta_s_l: float, gamma: float = 1.0) -> float:
    """Estimated error of one pseudo-copy shifted by delta_s_l; exact only at delta_s_l = 0."""
    b = check_symmetric(b)
    k1 = (b[2] - b[1]) / 2.0
    k2 = (b[3] - b[0]) / 2.0
    bracket = k1 ** 3 + 3 * k1 ** 2 * k2 + 2 * k1 * k2 ** 2 + k2 ** 3 + 3 * delta_s_l ** 2 * (k1 + k2)
    return float(abs(gamma) * math.sqrt((8.0 / 3.0) * (k1 - k2) ** 2 * bracket))


def step_error_quadrature(b, gamma: float = 1.0) -> float:
    """Numerical counterpart of step_error_l2, integrating the piecewise quadratic segment by segment."""
    approximator = step_matching(b)
    b = approximator.locations
    half = approximator.height / 2.0
    jump = approximator.center

    def squared(x):
        ideal = half if x > jump else -half
        return float((approximator(x) - ideal) ** 2)

    breaks = np.unique(np.concatenate((b, [jump])))
    total = 0.0
    for left, right in zip(breaks[:-1], breaks[1:]):
        if right > left:
            total += quad(squared, left, right, epsabs=0.0, epsrel=1e-12)[0]
    return float(abs(gamma) * math.sqrt(total))
