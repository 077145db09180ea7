import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from src.relu_net import (
    DEFAULT_GRID_POINTS,
    BasisLayer,
    ReluNet,
    eval_grid,
    multiset_equal,
    sup_error,
    uniform_grid,
)
from src.step_approximators import (
    STEP,
    ConstructionLedger,
    PiecewiseConstant,
    adjacent_gap,
    annihilate_remainder,
    decompose_target,
    sample_target,
    sign_assignment,
    step_matching,
)

logger = logging.getLogger(__name__)

DEFAULT_WIDTH_CAP = 5_000_000
CONSTANT = "constant"


class WidthCapExceeded(Exception):
    """A builder needs more basis locations than the configured cap allows."""

    def __init__(self, required_n: int, cap: int, builder: str):
        self.required_n = int(required_n)
        self.cap = int(cap)
        self.builder = builder
        super().__init__(f"{builder} needs width n={self.required_n}, above the cap of {self.cap}.")


class ToleranceNotMet(Exception):
    """A finished construction misses the requested sup error on the verification grid."""

    def __init__(self, builder: str, error: float, eps: float):
        self.builder = builder
        self.error = float(error)
        self.eps = float(eps)
        super().__init__(f"{builder} reached sup error {self.error:.4g}, above eps={self.eps}.")


def paired_values(locations) -> np.ndarray:
    """W = (b_1, -b_1, ..., b_n, -b_n)."""
    locations = np.asarray(locations, dtype=np.float64).reshape(-1)
    return np.column_stack((locations, -locations)).reshape(-1)


def _place(theta: np.ndarray, indices: np.ndarray, p: np.ndarray, q: np.ndarray) -> None:
    theta[2 * indices] = p
    theta[2 * indices + 1] = q


def _step_values(b: np.ndarray, sign) -> tuple[np.ndarray, np.ndarray]:
    # b has shape (..., 4); sign broadcasts against the leading axes
    sign = np.asarray(sign)[..., None]
    p = sign * np.stack((-b[..., 0], b[..., 1], b[..., 2], -b[..., 3]), axis=-1)
    q = sign * np.stack((b[..., 3], -b[..., 2], -b[..., 1], b[..., 0]), axis=-1)
    return p, q


def _constant_values(b: np.ndarray, sign) -> tuple[np.ndarray, np.ndarray]:
    sign = np.asarray(sign)[..., None]
    p = sign * np.stack((-b[..., 0], b[..., 1], b[..., 2], -b[..., 3]), axis=-1)
    return p, -p


def _constant_of(b: np.ndarray) -> np.ndarray:
    """Value b1^2 - b2^2 - b3^2 + b4^2 of constant-matched quadruples, shape (..., 4) -> (...)."""
    return b[..., 0] ** 2 - b[..., 1] ** 2 - b[..., 2] ** 2 + b[..., 3] ** 2


def pseudo_copy_coefficients(locations: np.ndarray, start: int, L: int, sign: int):
    """
    L shifted step-matched copies filling the block [start, start + 4L).

    Copy l uses indices start + l + (0, L, 2L, 3L); the copies stack into one monotone
    step of height L * h.

    Returns:
        (indices, p, q), each of shape (L, 4).
    """
    indices = start + np.arange(L)[:, None] + L * np.arange(4)[None, :]
    p, q = _step_values(locations[indices], sign)
    return indices, p, q


def constant_block_coefficients(locations: np.ndarray, start: int, t: int, sign: int):
    """t stride-t constant-matched quadruples filling [start, start + 4t), each worth about 4 t^2 d^2."""
    indices = start + np.arange(t)[:, None] + t * np.arange(4)[None, :]
    p, q = _constant_values(locations[indices], sign)
    return indices, p, q


def _verify(net: ReluNet, f_target, grid_points: int, ledger: ConstructionLedger, eps: float) -> float:
    grid = uniform_grid(net.domain, grid_points)
    error = sup_error(eval_grid(net, grid), lambda x: sample_target(f_target, x))
    ledger.budget["sup_error"] = error
    ledger.budget["eps"] = eps
    return error


# ---------------------------------------------------------------------------
# Linear output layer (alpha, gamma learned by construction)
# ---------------------------------------------------------------------------

def _theorem1_starts(g: PiecewiseConstant, n: int, L: int, ledger: ConstructionLedger) -> np.ndarray:
    starts = np.floor(g.locations * (n - 1)).astype(np.int64) - L
    clamped = np.clip(starts, 0, n - 1 - 3 * L)
    for j in np.flatnonzero(clamped != starts):
        ledger.note(f"step {j} at s={g.locations[j]:.6f} clamped to block start {clamped[j]}")
    if len(clamped) > 1 and np.any(np.diff(clamped) <= 3 * L):
        raise ValueError("Step blocks overlap; the steps are closer than the refined grid allows.")
    return clamped


def build_theorem1(f_target, eps: float, width_cap: int = DEFAULT_WIDTH_CAP, proved_widths: bool = False,
                   grid_points: int = DEFAULT_GRID_POINTS) -> tuple[ReluNet, ConstructionLedger]:
    """
    Equidistant construction with a free scale gamma and shift alpha.

    Each step of the decomposition gets four pairs K_j = {k, k+L, k+2L, k+3L} in step-matching,
    every other pair is annihilated, and gamma = delta_h / h rescales the steps. theta is
    a permutation of W = (+-b_i) with b_i = i / (n - 1).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}.")
    delta_h = eps / 4.0
    g = decompose_target(f_target, eps, delta_h=delta_h)

    n_hat = math.ceil(max(4 * g.J, 8.0 / g.min_gap + 1.0, 2.0 / delta_h, 4))
    if n_hat % 2:
        n_hat += 1
    L = max(1, math.ceil((n_hat - 1) / 4))
    if proved_widths:
        L = max(L, math.ceil(delta_h * (n_hat - 1) ** 2 / 8.0))
    if L % 2 == 0:
        L += 1

    while True:
        # n_hat even and L odd keep n even, so the unused count 4J - n is even
        n = L * (n_hat - 1) + 1
        if n > width_cap:
            raise WidthCapExceeded(n, width_cap, "theorem1")
        ledger = ConstructionLedger(builder="theorem1", n=n, delta_h=delta_h, J=g.J, refinement=L)
        locations = np.linspace(0.0, 1.0, n)
        starts = _theorem1_starts(g, n, L, ledger)
        used = (starts[:, None] + L * np.arange(4)[None, :]).reshape(-1)
        mask = np.ones(n, dtype=bool)
        mask[used] = False
        unused = np.flatnonzero(mask)
        height = 8.0 * L ** 2 / (n - 1) ** 2
        gamma = delta_h / height
        gap = adjacent_gap(locations[unused])
        if gamma * gap <= delta_h:
            break
        logger.debug(f"theorem1: L={L} leaves unused gap {gap:.3g} > h={height:.3g}; refining.")
        L += 2

    logger.info(f"theorem1: J={g.J} steps, n_hat={n_hat}, L={L}, width n={n}.")
    theta = np.empty(2 * n)
    for start, a in zip(starts, g.signs):
        idx = start + L * np.arange(4)
        block = step_matching(locations[idx], int(a))
        _place(theta, idx, block.p, block.q)
        ledger.step_indices.append(idx)
        ledger.step_signs.append(int(a))

    ledger.unused_indices = unused
    ann = annihilate_remainder(ledger, locations[unused])
    _place(theta, unused, ann.signs * locations[unused], -ann.signs * locations[unused])

    alpha = g.offset + delta_h * g.signed_count / 2.0 + gamma * ann.c_eta
    ledger.gamma, ledger.alpha = gamma, alpha
    ledger.budget.update({
        "E_decomposition": delta_h / 2.0,
        "E_steps": delta_h,
        "E_unused": gamma * abs(ann.beta),
        "bound": 1.5 * delta_h + gamma * abs(ann.beta),
    })
    ledger.validate()

    W = paired_values(locations)
    net = ReluNet(basis=BasisLayer.paired_1d(locations), theta=theta, alpha=alpha, gamma=gamma, initial_multiset=W)
    if not net.multiset_preserved():
        raise RuntimeError("theorem1 produced coefficients that are not a permutation of W.")
    error = _verify(net, f_target, grid_points, ledger, eps)
    if error > eps:
        raise ToleranceNotMet("theorem1", error, eps)
    return net, ledger


# ---------------------------------------------------------------------------
# No linear output layer (alpha = 0, gamma = 1): pseudo-copies and constant blocks
# ---------------------------------------------------------------------------

@dataclass
class _Block:
    start: int
    length: int
    kind: str
    sign: int
    stride: int = 0
    target: float = 0.0

    @property
    def end(self) -> int:
        return self.start + self.length


def theorem2_width(L: int, eps: float) -> int:
    """Smallest n with 8 L^3 / (n - 1)^2 <= eps / 8."""
    return math.ceil(math.sqrt(8.0 * L ** 3 / (eps / 8.0))) + 1


def _free_runs(blocks: list[_Block], n: int) -> list[tuple[int, int]]:
    runs, cursor = [], 0
    for blk in sorted(blocks, key=lambda b: b.start):
        runs.append((cursor, blk.start - cursor))
        cursor = blk.end
    runs.append((cursor, n - cursor))
    return runs


def _window_holds(blk: _Block, locations: np.ndarray) -> bool:
    return bool(locations[blk.start] <= blk.target <= locations[blk.end - 1])


def _theorem2_attempt(f_target, eps: float, L: int, grid_points: int, proved_widths: bool):
    n = theorem2_width(L, eps)
    delta_h = 8.0 * L ** 3 / (n - 1) ** 2
    g = decompose_target(f_target, eps, delta_h=delta_h)
    if proved_widths and n <= max(8 * g.J * L, 8 * L / g.min_gap + L, 2 * L / delta_h):
        return None, "proved width condition not met"

    locations = np.linspace(0.0, 1.0, n)
    spacing = 1.0 / (n - 1)
    ledger = ConstructionLedger(builder="theorem2", n=n, delta_h=delta_h, J=g.J, refinement=L)

    blocks: list[_Block] = []
    cursor = 0
    for s, a in g.steps:
        start = int(round(s * (n - 1) - 2 * L + 0.5))
        start = max(min(start, n - 4 * L), cursor)
        blk = _Block(start=start, length=4 * L, kind=STEP, sign=a, target=s)
        if blk.end > n or not _window_holds(blk, locations):
            return None, f"no room for a {4 * L}-wide step block at s={s:.6f}"
        blocks.append(blk)
        cursor = blk.end

    needed = g.offset + delta_h * g.signed_count / 2.0
    const_sign = 1 if needed >= 0 else -1
    remaining = abs(needed)
    unit = 4.0 * spacing ** 2
    while True:
        t = int(math.floor(np.cbrt(remaining / unit)))
        while t > 0 and t ** 3 * unit > remaining:
            t -= 1
        run_start, run_len = max(_free_runs(blocks, n), key=lambda r: r[1])
        t = min(t, run_len // 4)
        if t == 0:
            break
        blocks.append(_Block(start=run_start + run_len - 4 * t, length=4 * t, kind=CONSTANT,
                             sign=const_sign, stride=t))
        remaining -= t ** 3 * unit

    blocks.sort(key=lambda b: b.start)
    for i in range(len(blocks) - 1, -1, -1):
        run_end = blocks[i + 1].start if i + 1 < len(blocks) else n
        if (run_end - blocks[i].end) % 2:
            blocks[i].start += 1
            if blocks[i].kind == STEP and not _window_holds(blocks[i], locations):
                return None, "parity shift moved a step out of its window"

    theta = np.empty(2 * n)
    realized = 0.0
    for blk in blocks:
        if blk.kind == STEP:
            idx, p, q = pseudo_copy_coefficients(locations, blk.start, L, blk.sign)
            ledger.step_indices.append(np.arange(blk.start, blk.end))
            ledger.step_signs.append(blk.sign)
        else:
            idx, p, q = constant_block_coefficients(locations, blk.start, blk.stride, blk.sign)
            realized += blk.sign * float(np.sum(_constant_of(locations[idx])))
            ledger.constant_blocks.append((np.arange(blk.start, blk.end), blk.sign))
        _place(theta, idx.reshape(-1), p.reshape(-1), q.reshape(-1))

    singles, pair_starts = [], []
    for run_start, run_len in _free_runs(blocks, n):
        if run_len % 2:
            # only the first run can be odd; it starts at b_0 = 0
            singles.append(run_start)
            run_start, run_len = run_start + 1, run_len - 1
        pair_starts.extend(range(run_start, run_start + run_len, 2))
    pair_starts = np.array(pair_starts, dtype=np.int64)
    for i in singles:
        if i != 0:
            return None, f"odd free run away from the origin at index {i}"
        _place(theta, np.array([i]), np.array([locations[i]]), np.array([-locations[i]]))

    residual = list(singles)
    residual_slope = 0.0
    if len(pair_starts) % 2:
        a = int(pair_starts[0])
        pair_starts = pair_starts[1:]
        # pair (+1, -1) reorganizes to -(b_{a+1} - b_a) x + b_{a+1}^2 - b_a^2
        _place(theta, np.array([a, a + 1]), np.array([locations[a], -locations[a + 1]]),
               np.array([-locations[a], locations[a + 1]]))
        realized += locations[a + 1] ** 2 - locations[a] ** 2
        residual_slope = locations[a + 1] - locations[a]
        residual += [a, a + 1]

    first, second = pair_starts[0::2], pair_starts[1::2]
    quads = np.stack((first, first + 1, second, second + 1), axis=-1)
    constants = _constant_of(locations[quads])
    signs = np.ones(len(quads), dtype=np.int64)
    if len(quads) % 2:
        signs[1:] = sign_assignment(constants[1:])
    else:
        signs[:] = sign_assignment(constants)
    p, q = _constant_values(locations[quads], signs)
    _place(theta, quads.reshape(-1), p.reshape(-1), q.reshape(-1))
    mismatch_c = float(np.sum(signs * constants))
    realized += mismatch_c
    if abs(mismatch_c) >= delta_h:
        return None, f"remainder constant {mismatch_c:.3g} is not below delta_h"

    mismatch = needed - realized
    if abs(mismatch) >= delta_h:
        return None, f"constant shift mismatch {mismatch:.3g} is not below delta_h"

    ledger.unused_indices = quads.reshape(-1)
    ledger.unused_signs = (signs[:, None] * np.array([-1, 1, 1, -1])[None, :]).reshape(-1)
    ledger.residual_indices = np.array(residual, dtype=np.int64)
    ledger.shift_constant = realized
    ledger.budget.update({
        "E_decomposition": delta_h / 2.0,
        "E_steps": delta_h,
        "E_constant": abs(mismatch),
        "E_residual": residual_slope,
        "C_c": mismatch_c,
        "bound": 1.5 * delta_h + abs(mismatch) + residual_slope,
    })
    ledger.validate()

    W = paired_values(locations)
    net = ReluNet(basis=BasisLayer.paired_1d(locations), theta=theta, alpha=0.0, gamma=1.0, initial_multiset=W)
    if not net.multiset_preserved():
        raise RuntimeError("theorem2 produced coefficients that are not a permutation of W.")
    error = _verify(net, f_target, grid_points, ledger, eps)
    if error > eps:
        return None, f"realized sup error {error:.4g} above eps"
    return (net, ledger), ""


def build_theorem2(f_target, eps: float, width_cap: int = DEFAULT_WIDTH_CAP, proved_widths: bool = False,
                   refinement: int | None = None,
                   grid_points: int = DEFAULT_GRID_POINTS) -> tuple[ReluNet, ConstructionLedger]:
    """
    Construction with alpha = 0 and gamma = 1 fixed.

    Each step is L pseudo-copies of a step approximator whose heights add up to
    delta_h = 8 L^3 / (n - 1)^2. The base level is realized by blocks of constant-matched
    quadruples, and the remaining pairs cancel as signed constant-matched quadruples.
    L grows until the layout fits and the sup error is met, or the width cap is hit.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}.")
    L = refinement or 1
    reason = ""
    while True:
        n = theorem2_width(L, eps)
        if n > width_cap:
            raise WidthCapExceeded(n, width_cap, "theorem2")
        result, reason = _theorem2_attempt(f_target, eps, L, grid_points, proved_widths)
        if result is not None:
            net, ledger = result
            logger.info(f"theorem2: J={ledger.J} steps, L={L}, width n={n}, "
                        f"sup error {ledger.budget['sup_error']:.4g}.")
            return net, ledger
        logger.debug(f"theorem2: L={L} rejected ({reason}).")
        if refinement is not None:
            raise ValueError(f"Refinement L={refinement} admits no valid layout: {reason}.")
        L = max(L + 1, math.ceil(L * 1.15))


# ---------------------------------------------------------------------------
# Randomly initialized locations and coefficients
# ---------------------------------------------------------------------------

@dataclass
class SubnetworkPlan:
    """Used part of an unrefined equidistant construction: four adjacent pairs per step."""
    decomposition: PiecewiseConstant
    grid: np.ndarray
    starts: np.ndarray
    gamma: float

    @property
    def target_indices(self) -> np.ndarray:
        return self.starts[:, None] + np.arange(4)[None, :]

    @property
    def targets(self) -> np.ndarray:
        """Locations to match, shape (J, 4)."""
        return self.grid[self.target_indices]

    @property
    def alpha_base(self) -> float:
        g = self.decomposition
        return g.offset + g.delta_h * g.signed_count / 2.0

    def lipschitz(self) -> float:
        """Largest numerically estimated sensitivity of one gamma-scaled four-pair block."""
        return self.gamma * max(step_matching(b).sensitivity() for b in self.targets)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p, q = _step_values(self.targets, self.decomposition.signs)
        b = self.targets.reshape(-1)
        xs = x[..., None]
        total = np.sum(p.reshape(-1) * np.maximum(xs - b, 0.0) + q.reshape(-1) * np.maximum(b - xs, 0.0), axis=-1)
        return self.alpha_base + self.gamma * total


def plan_subnetwork(f_target, eps: float) -> SubnetworkPlan:
    delta_h = eps / 6.0
    g = decompose_target(f_target, eps, delta_h=delta_h)
    # gamma grows with the square of the grid size, so take the coarsest grid the blocks fit on
    lower = max(4 * g.J, 4, math.ceil(4.0 / g.min_gap) + 1)
    upper = max(lower, math.ceil(8.0 / g.min_gap + 1.0))
    for n_hat in range(lower, upper + 1):
        starts = np.clip(np.floor(g.locations * (n_hat - 1)).astype(np.int64) - 1, 0, n_hat - 4)
        if len(starts) < 2 or np.all(np.diff(starts) >= 4):
            break
    else:
        raise ValueError("Adjacent step blocks overlap on the equidistant grid.")
    grid = np.linspace(0.0, 1.0, n_hat)
    height = 8.0 / (n_hat - 1) ** 2
    return SubnetworkPlan(decomposition=g, grid=grid, starts=starts, gamma=delta_h / height)


@dataclass
class SubnetworkMatch:
    location_indices: np.ndarray
    pair_indices: np.ndarray
    location_shift: float
    coefficient_shift: float


@dataclass
class NotFound:
    unmatched_locations: list[float] = field(default_factory=list)
    unmatched_coefficients: list[float] = field(default_factory=list)


def _greedy_nearest(candidates: np.ndarray, targets: np.ndarray, radius: float) -> np.ndarray:
    order = np.argsort(candidates, kind="stable")
    ranked = candidates[order]
    claimed = np.zeros(len(ranked), dtype=bool)
    chosen = np.full(len(targets), -1, dtype=np.int64)
    for t in np.argsort(targets, kind="stable"):
        value = targets[t]
        pos = int(np.searchsorted(ranked, value))
        left, right = pos - 1, pos
        while left >= 0 and claimed[left]:
            left -= 1
        while right < len(ranked) and claimed[right]:
            right += 1
        best, best_distance = -1, math.inf
        for i in (left, right):
            if 0 <= i < len(ranked):
                distance = abs(ranked[i] - value)
                if distance <= radius and distance < best_distance:
                    best, best_distance = i, distance
        if best >= 0:
            claimed[best] = True
            chosen[t] = order[best]
    return chosen


def match_subnetwork(B_rand, W_rand, B_equi, delta_r: float, coefficient_targets=None) -> SubnetworkMatch | NotFound:
    """
    Find random locations and coefficient pairs within delta_r of every target.

    Targets are claimed in ascending order, each taking the nearest unclaimed candidate.
    Coefficient pairs (p, -p) are matched by magnitude against coefficient_targets, which
    default to the target locations themselves.
    """
    B_rand = np.asarray(B_rand, dtype=np.float64).reshape(-1)
    magnitudes = np.abs(np.asarray(W_rand, dtype=np.float64).reshape(-1)[0::2])
    targets = np.asarray(B_equi, dtype=np.float64).reshape(-1)
    coefficient_targets = targets if coefficient_targets is None else \
        np.asarray(coefficient_targets, dtype=np.float64).reshape(-1)

    locations = _greedy_nearest(B_rand, targets, delta_r)
    pairs = _greedy_nearest(magnitudes, coefficient_targets, delta_r)
    if np.any(locations < 0) or np.any(pairs < 0):
        return NotFound(
            unmatched_locations=targets[locations < 0].tolist(),
            unmatched_coefficients=coefficient_targets[pairs < 0].tolist(),
        )
    return SubnetworkMatch(
        location_indices=locations,
        pair_indices=pairs,
        location_shift=float(np.max(np.abs(B_rand[locations] - targets), initial=0.0)),
        coefficient_shift=float(np.max(np.abs(magnitudes[pairs] - coefficient_targets), initial=0.0)),
    )


def match_probability(n_hat: int, n: int, delta_r: float) -> float:
    """
    Probability that n uniform draws hit each of n_hat disjoint intervals of width 2*delta_r,
    squared for locations and coefficients, by inclusion-exclusion in the log domain.
    """
    if n_hat < 1 or n < 0:
        raise ValueError(f"Invalid sizes n_hat={n_hat}, n={n}.")
    if delta_r < 0 or delta_r >= 1.0 / (2 * n_hat):
        raise ValueError(f"delta_r must lie in [0, 1/(2 n_hat)) = [0, {1.0 / (2 * n_hat):.4g}), got {delta_r}.")
    if delta_r == 0:
        return 0.0
    k = np.arange(1, n_hat + 1)
    log_terms = (gammaln(n_hat + 1) - gammaln(k + 1) - gammaln(n_hat - k + 1)
                 + n * np.log1p(-2.0 * k * delta_r))
    signs = np.where(k % 2 == 1, 1.0, -1.0)
    missing = math.fsum((signs * np.exp(log_terms)).tolist())
    hit = min(max(1.0 - missing, 0.0), 1.0)
    return hit * hit


def matching_width(n_hat: int, delta_r: float, delta: float) -> int:
    """Smallest n with match_probability(n_hat, n, delta_r) >= sqrt(1 - delta)."""
    target = math.sqrt(1.0 - delta)
    decay = -math.log1p(-2.0 * delta_r)
    # At lo about one target interval is expected to stay empty; the union bound holds at hi. The alternating
    # sum is well conditioned in between.
    lo = max(n_hat, math.floor(math.log(n_hat) / decay))
    hi = max(lo + 1, math.ceil(math.log(n_hat / (1.0 - math.sqrt(target))) / decay))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if match_probability(n_hat, mid, delta_r) >= target:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class Retry:
    """An unlucky random draw; the caller may try the next seed."""
    seed: int
    reason: str
    n: int
    delta_r: float = 0.0
    unmatched_locations: list[float] = field(default_factory=list)
    unmatched_coefficients: list[float] = field(default_factory=list)
    sup_error: float | None = None


def unused_width(gap: float, delta: float) -> int:
    """Smallest m with (m - 1)(1 - gap)^m <= 1 - sqrt(1 - delta), past the peak of the left side."""
    if gap >= 1.0:
        return 2
    target = math.log(1.0 - math.sqrt(1.0 - delta))
    log_decay = math.log1p(-gap)

    def holds(m: int) -> bool:
        return math.log(m - 1) + m * log_decay <= target

    lo = max(2, math.ceil(-1.0 / log_decay))
    hi = lo
    while not holds(hi):
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if holds(mid):
            hi = mid
        else:
            lo = mid + 1
    return hi


def assemble_random_network(plan: SubnetworkPlan | None, B_rand: np.ndarray, p_rand: np.ndarray,
                            match: SubnetworkMatch | None, alpha_base: float, gamma: float,
                            ledger: ConstructionLedger) -> ReluNet:
    """Place matched step coefficients and annihilate every other random pair."""
    n = len(B_rand)
    theta = np.empty(2 * n)
    used_loc = np.zeros(0, dtype=np.int64)
    used_pairs = np.zeros(0, dtype=np.int64)
    if plan is not None and match is not None and plan.decomposition.J:
        J = plan.decomposition.J
        loc = match.location_indices.reshape(J, 4)
        pairs = match.pair_indices.reshape(J, 4)
        p, q = _step_values(p_rand[pairs], plan.decomposition.signs)
        _place(theta, loc.reshape(-1), p.reshape(-1), q.reshape(-1))
        ledger.step_indices = [row for row in loc]
        ledger.step_signs = [int(a) for a in plan.decomposition.signs]
        used_loc, used_pairs = loc.reshape(-1), pairs.reshape(-1)

    free_loc = np.setdiff1d(np.arange(n), used_loc)
    free_pairs = np.setdiff1d(np.arange(n), used_pairs)
    magnitudes = p_rand[free_pairs]
    signs = sign_assignment(magnitudes)
    _place(theta, free_loc, signs * magnitudes, -signs * magnitudes)
    beta = math.fsum((signs * magnitudes).tolist())
    shift = math.fsum((signs * magnitudes * B_rand[free_loc]).tolist())

    ledger.unused_indices = free_loc
    ledger.unused_signs = signs
    ledger.shift_constant = shift
    ledger.budget["E_unused"] = gamma * abs(beta)
    ledger.budget["unused_gap"] = adjacent_gap(magnitudes)

    alpha = alpha_base + gamma * shift
    ledger.gamma, ledger.alpha = gamma, alpha
    return ReluNet(basis=BasisLayer.paired_1d(B_rand), theta=theta, alpha=alpha, gamma=gamma,
                   initial_multiset=paired_values(p_rand))


def build_random(f_target, eps: float, delta: float, seed: int, width_cap: int = DEFAULT_WIDTH_CAP,
                 grid_points: int = DEFAULT_GRID_POINTS) -> tuple[ReluNet, ConstructionLedger] | Retry:
    """
    Construction on random locations B ~ U[0,1]^n and coefficients W = (+-p_i), p_i ~ U[0,1].

    The width is chosen so that, with probability at least 1 - delta, the used part of an
    unrefined equidistant construction is found within delta_r in the random draw and the
    leftover pairs annihilate to within eps / 2. An unlucky draw returns Retry.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}.")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}.")

    sampled = sample_target(f_target, uniform_grid((0.0, 1.0), grid_points))
    f_range = float(np.max(sampled) - np.min(sampled))
    if f_range <= eps:
        plan, gamma = None, 1.0
        alpha_base = float(np.max(sampled) + np.min(sampled)) / 2.0
        n_sub, delta_r, delta_h = 0, 0.0, 0.0
        n = max(2, unused_width(eps / 2.0, delta))
        n_match = 0
    else:
        plan = plan_subnetwork(f_target, eps)
        gamma, alpha_base = plan.gamma, plan.alpha_base
        delta_h = plan.decomposition.delta_h
        n_sub = plan.targets.size
        lipschitz = plan.lipschitz()
        r0 = eps / (4.0 * lipschitz)
        spacing = 1.0 / (len(plan.grid) - 1)
        delta_r = min(r0, plan.decomposition.min_gap, 1.0 / (2 * n_sub), spacing / 2.0) / 2.0
        n_match = matching_width(n_sub, delta_r, delta)
        n = max(n_match, n_sub + unused_width(eps / (2.0 * gamma), delta))
    n += n % 2
    if n > width_cap:
        raise WidthCapExceeded(n, width_cap, "random")

    ledger = ConstructionLedger(builder="random", n=n, delta_h=delta_h,
                                J=plan.decomposition.J if plan else 0)
    ledger.note(f"seed={seed}, delta={delta}, delta_r={delta_r:.4g}, n_match={n_match}")
    rng = np.random.default_rng(seed)
    B_rand = rng.uniform(0.0, 1.0, n)
    p_rand = rng.uniform(0.0, 1.0, n)

    match = None
    if plan is not None:
        match = match_subnetwork(B_rand, paired_values(p_rand), plan.targets.reshape(-1), delta_r)
        if isinstance(match, NotFound):
            logger.info(f"random: seed {seed} left {len(match.unmatched_locations)} locations and "
                        f"{len(match.unmatched_coefficients)} coefficients unmatched.")
            return Retry(seed=seed, reason="subnetwork not found", n=n, delta_r=delta_r,
                         unmatched_locations=match.unmatched_locations,
                         unmatched_coefficients=match.unmatched_coefficients)
        ledger.budget["E_perturbation"] = lipschitz * max(match.location_shift, match.coefficient_shift)
        ledger.budget["match_probability"] = match_probability(n_sub, n, delta_r)

    net = assemble_random_network(plan, B_rand, p_rand, match, alpha_base, gamma, ledger)
    ledger.budget.update({
        "E_decomposition": delta_h / 2.0 if plan else f_range / 2.0,
        "E_steps": delta_h,
    })
    ledger.budget["bound"] = sum(ledger.budget.get(k, 0.0) for k in
                                 ("E_decomposition", "E_steps", "E_perturbation", "E_unused"))
    ledger.validate()
    if not multiset_equal(net.theta, net.initial_multiset):
        raise RuntimeError("random builder produced coefficients that are not a permutation of W.")

    error = _verify(net, f_target, grid_points, ledger, eps)
    if error > eps:
        logger.info(f"random: seed {seed} reached sup error {error:.4g} > eps={eps}.")
        return Retry(seed=seed, reason="sup error above eps", n=n, delta_r=delta_r, sup_error=error)
    logger.info(f"random: seed {seed} succeeded with n={n}, sup error {error:.4g}.")
    return net, ledger


class RetryExhausted(Exception):
    """Every seed tried by build_random_with_retries returned Retry."""

    def __init__(self, attempts: list[Retry]):
        self.attempts = attempts
        reasons = ", ".join(f"seed {r.seed}: {r.reason}" for r in attempts)
        super().__init__(f"random builder failed after {len(attempts)} attempt(s) ({reasons}).")


def build_random_with_retries(f_target, eps: float, delta: float, seed: int, max_retries: int = 10,
                              width_cap: int = DEFAULT_WIDTH_CAP,
                              grid_points: int = DEFAULT_GRID_POINTS) -> tuple[ReluNet, ConstructionLedger]:
    """build_random on seed, seed + 1, ... until a draw succeeds or max_retries retries are used."""
    attempts: list[Retry] = []
    for attempt_seed in range(seed, seed + max_retries + 1):
        result = build_random(f_target, eps, delta, attempt_seed, width_cap, grid_points)
        if not isinstance(result, Retry):
            net, ledger = result
            ledger.note(f"succeeded after {len(attempts)} retries")
            return net, ledger
        attempts.append(result)
        logger.warning(f"random: seed {attempt_seed} needs a retry ({result.reason}).")
    raise RetryExhausted(attempts)
