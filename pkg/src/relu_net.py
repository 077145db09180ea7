import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

logger = logging.getLogger(__name__)

AXIS_NAMES = "xyz"
DEFAULT_GRID_POINTS = 10001


class DimensionMismatchError(ValueError):
    """Raised when an input does not match the basis input dimension."""


class DomainWarning(UserWarning):
    """Emitted when a network is evaluated outside its declared domain."""


@dataclass(frozen=True)
class Activation:
    """ReLU or leaky-ReLU activation of the frozen basis layer."""
    kind: str = "relu"
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in ("relu", "leaky"):
            raise ValueError(f"Unknown activation '{self.kind}'. Expected 'relu' or 'leaky'.")
        if self.kind == "leaky" and not 0.0 < self.slope < 1.0:
            raise ValueError(f"Leaky slope must lie in (0, 1), got {self.slope}.")

    @property
    def negative_slope(self) -> float:
        return self.slope if self.kind == "leaky" else 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        return np.where(z > 0.0, z, self.slope * z)

    def to_dict(self) -> dict:
        if self.kind == "relu":
            return {"kind": "relu"}
        return {"kind": "leaky", "slope": float.hex(float(self.slope))}

    @classmethod
    def from_dict(cls, data: dict) -> "Activation":
        if data.get("kind", "relu") == "relu":
            return cls()
        return cls(kind="leaky", slope=_read_real(data["slope"]))


def direction_tag(axis, sign: int) -> str:
    """Human readable tag for a signed direction: 'plus'/'minus' in 1D, '+x-y' style otherwise."""
    axis = tuple(int(a) for a in axis)
    if len(axis) == 1:
        return "plus" if sign * axis[0] > 0 else "minus"
    parts = []
    for value, name in zip(axis, AXIS_NAMES):
        signed = sign * value
        if signed > 0:
            parts.append(f"+{name}")
        elif signed < 0:
            parts.append(f"-{name}")
    return "".join(parts)


def parse_direction_tag(tag: str, input_dim: int) -> tuple[tuple[int, ...], int]:
    """Inverse of direction_tag. Returns the canonical axis (first nonzero positive) and the sign."""
    if tag in ("plus", "minus"):
        return (1,), 1 if tag == "plus" else -1
    vector = [0] * input_dim
    i = 0
    while i < len(tag):
        sign_char, name = tag[i], tag[i + 1]
        if sign_char not in "+-" or name not in AXIS_NAMES[:input_dim]:
            raise ValueError(f"Malformed direction tag '{tag}'.")
        vector[AXIS_NAMES.index(name)] = 1 if sign_char == "+" else -1
        i += 2
    first = next(v for v in vector if v != 0)
    axis = tuple(v * first for v in vector)
    return axis, first


@dataclass(frozen=True)
class BasisFunction:
    """One frozen hidden unit: act(sign * (unit_axis . x - location))."""
    location: float
    axis: tuple[int, ...] = (1,)
    sign: int = 1

    @property
    def input_dim(self) -> int:
        return len(self.axis)

    @property
    def tag(self) -> str:
        return direction_tag(self.axis, self.sign)

    def __call__(self, x, activation: Activation = Activation()) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64).reshape(-1, self.input_dim))
        axis = np.asarray(self.axis, dtype=np.float64)
        projected = x @ (axis / np.linalg.norm(axis))
        return activation(self.sign * (projected - self.location))


@dataclass(frozen=True)
class BasisLayer:
    """
    Column storage for the frozen first hidden layer.

    Unit i evaluates act(signs[i] * (axes[i]/|axes[i]| . x - locations[i])). Units come in
    (+, -) pairs sharing a location so that theta keeps the (p_1, q_1, ..., p_n, q_n) layout.
    """
    locations: np.ndarray
    axes: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=np.float64).reshape(-1)
        axes = np.asarray(self.axes, dtype=np.int64)
        if axes.ndim == 1:
            axes = axes.reshape(-1, 1)
        signs = np.asarray(self.signs, dtype=np.int64).reshape(-1)
        if not (len(locations) == len(axes) == len(signs)):
            raise ValueError("Basis locations, axes and signs must have equal lengths.")
        if np.any((signs != 1) & (signs != -1)):
            raise ValueError("Basis signs must be +1 or -1.")
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def paired_1d(cls, locations) -> "BasisLayer":
        """Interleaved (phi_i^+, phi_i^-) pairs at the given locations."""
        locations = np.asarray(locations, dtype=np.float64).reshape(-1)
        return cls(
            locations=np.repeat(locations, 2),
            axes=np.ones((2 * len(locations), 1), dtype=np.int64),
            signs=np.tile(np.array([1, -1]), len(locations)),
        )

    @classmethod
    def from_functions(cls, functions) -> "BasisLayer":
        functions = list(functions)
        return cls(
            locations=np.array([f.location for f in functions], dtype=np.float64),
            axes=np.array([f.axis for f in functions], dtype=np.int64),
            signs=np.array([f.sign for f in functions], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.locations)

    def __getitem__(self, i: int) -> BasisFunction:
        return BasisFunction(float(self.locations[i]), tuple(int(a) for a in self.axes[i]), int(self.signs[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def input_dim(self) -> int:
        return self.axes.shape[1]

    @property
    def unit_axes(self) -> np.ndarray:
        axes = self.axes.astype(np.float64)
        return axes / np.linalg.norm(axes, axis=1, keepdims=True)

    @property
    def distinct_axes(self) -> int:
        return len({tuple(a) for a in self.axes.tolist()})

    def is_axis_aligned_1d(self) -> bool:
        return self.input_dim == 1 and bool(np.all(self.axes[:, 0] == 1))

    def features(self, x, activation: Activation = Activation()) -> np.ndarray:
        """Dense design matrix of shape (m, N)."""
        x = _as_points(x, self.input_dim)
        projected = x @ self.unit_axes.T - self.locations
        return activation(projected * self.signs)

    def to_dict(self) -> list[dict]:
        return [{"b": float.hex(float(b)), "dir": direction_tag(a, s)}
                for b, a, s in zip(self.locations, self.axes.tolist(), self.signs.tolist())]

    @classmethod
    def from_dict(cls, entries: list[dict], input_dim: int) -> "BasisLayer":
        locations, axes, signs = [], [], []
        for entry in entries:
            axis, sign = parse_direction_tag(entry["dir"], input_dim)
            locations.append(_read_real(entry["b"]))
            axes.append(axis)
            signs.append(sign)
        return cls(np.array(locations), np.array(axes, dtype=np.int64).reshape(-1, input_dim), np.array(signs))


@dataclass(frozen=True)
class PermutationPlan:
    """An index bijection with provenance. Applying it to v gives v[indices]."""
    indices: np.ndarray
    source: str = "unspecified"

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(indices), np.arange(len(indices))):
            raise ValueError("PermutationPlan indices must form a bijection on 0..N-1.")
        object.__setattr__(self, "indices", indices)

    def apply(self, values) -> np.ndarray:
        values = np.asarray(values)
        if len(values) != len(self.indices):
            raise ValueError(f"Cannot apply a permutation of length {len(self.indices)} to {len(values)} values.")
        return values[self.indices]

    def compose(self, then: "PermutationPlan") -> "PermutationPlan":
        """Plan equal to applying self first and `then` second."""
        return PermutationPlan(self.indices[then.indices], source=f"{self.source}+{then.source}")

    def moved(self) -> int:
        return int(np.count_nonzero(self.indices != np.arange(len(self.indices))))


@dataclass
class ReluNet:
    """
    The constrained three-layer network f(x) = alpha + gamma * sum_i theta_i * basis_i(x).

    Only theta is permuted during permutation training; initial_multiset keeps the values it
    must always be a rearrangement of.
    """
    basis: BasisLayer
    theta: np.ndarray
    alpha: float = 0.0
    gamma: float = 1.0
    initial_multiset: np.ndarray | None = None
    activation: Activation = field(default_factory=Activation)
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if self.initial_multiset is None:
            self.initial_multiset = self.theta.copy()
        else:
            self.initial_multiset = np.array(self.initial_multiset, dtype=np.float64).reshape(-1)
        self.alpha = float(self.alpha)
        self.gamma = float(self.gamma)
        self.domain = (float(self.domain[0]), float(self.domain[1]))
        if not (len(self.theta) == len(self.basis) == len(self.initial_multiset)):
            raise ValueError(
                f"theta ({len(self.theta)}), basis ({len(self.basis)}) and initial multiset "
                f"({len(self.initial_multiset)}) must have equal lengths."
            )
        if self.domain[0] >= self.domain[1]:
            raise ValueError(f"Invalid domain {self.domain}.")

    @property
    def input_dim(self) -> int:
        return self.basis.input_dim

    @property
    def n(self) -> int:
        """Locations per direction (n in the 1-2n-1-1, 2-8n-1-1 and 3-26n-1-1 shapes)."""
        return len(self.theta) // (2 * self.basis.distinct_axes)

    def copy(self) -> "ReluNet":
        return replace(self, theta=self.theta.copy(), initial_multiset=self.initial_multiset.copy())

    def with_theta(self, theta) -> "ReluNet":
        return replace(self, theta=np.array(theta, dtype=np.float64), initial_multiset=self.initial_multiset.copy())

    def multiset_preserved(self) -> bool:
        return multiset_equal(self.theta, self.initial_multiset)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "input_dim": self.input_dim,
            "domain": [float.hex(self.domain[0]), float.hex(self.domain[1])],
            "activation": self.activation.to_dict(),
            "basis": self.basis.to_dict(),
            "theta": [float.hex(float(v)) for v in self.theta],
            "alpha": float.hex(self.alpha),
            "gamma": float.hex(self.gamma),
            "initial_multiset": [float.hex(float(v)) for v in self.initial_multiset],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReluNet":
        input_dim = int(data.get("input_dim", 1))
        return cls(
            basis=BasisLayer.from_dict(data["basis"], input_dim),
            theta=np.array([_read_real(v) for v in data["theta"]]),
            alpha=_read_real(data["alpha"]),
            gamma=_read_real(data["gamma"]),
            initial_multiset=np.array([_read_real(v) for v in data["initial_multiset"]]),
            activation=Activation.from_dict(data.get("activation", {"kind": "relu"})),
            domain=tuple(_read_real(v) for v in data["domain"]),
        )

    def save_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)
        logger.debug(f"Wrote network with {len(self.theta)} coefficients to {path}")

    @classmethod
    def load_json(cls, path: str) -> "ReluNet":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class EvalGrid:
    """Network values sampled on an ordered set of points."""
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.values):
            raise ValueError("EvalGrid points and values must have the same length.")
        if self.points.ndim == 1 and np.any(np.diff(self.points) <= 0):
            raise ValueError("EvalGrid points must be strictly increasing.")


def _read_real(value) -> float:
    if isinstance(value, str):
        return float.fromhex(value) if "x" in value.lower() else float(value)
    return float(value)


def _as_points(x, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if input_dim == 1 and x.ndim <= 1:
        return x.reshape(-1, 1)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[-1] != input_dim:
        raise DimensionMismatchError(f"Expected inputs of dimension {input_dim}, got {x.shape[-1]}.")
    return x.reshape(-1, input_dim)


def _canonical_order(values: np.ndarray) -> np.ndarray:
    # -0.0 sorts after +0.0 so equal multisets compare bitwise
    return np.lexsort((np.signbit(values), values))


def multiset_equal(a, b) -> bool:
    """Bitwise multiset equality of two real vectors."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        return False
    return bool(np.array_equal(a[_canonical_order(a)].view(np.uint64), b[_canonical_order(b)].view(np.uint64)))


def _warn_outside_domain(net: ReluNet, x: np.ndarray) -> None:
    lo, hi = net.domain
    tol = 1e-12 * max(1.0, hi - lo)
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        warnings.warn(f"Evaluating network outside its domain [{lo}, {hi}].", DomainWarning, stacklevel=3)


def _sorted_prefix(locations: np.ndarray, weights: np.ndarray):
    order = np.argsort(locations, kind="stable")
    b = locations[order]
    w = weights[order]
    cw = np.concatenate(([0.0], np.cumsum(w)))
    cwb = np.concatenate(([0.0], np.cumsum(w * b)))
    return b, cw, cwb


def _evaluate_1d(net: ReluNet, x: np.ndarray) -> np.ndarray:
    """Sum_i theta_i act(s_i (x - b_i)) through prefix sums over sorted locations."""
    b_all, s_all, theta = net.basis.locations, net.basis.signs, net.theta
    slope = net.activation.negative_slope
    plus, minus = s_all > 0, s_all < 0
    total = np.zeros_like(x)

    b, cw, cwb = _sorted_prefix(b_all[plus], theta[plus])
    k = np.searchsorted(b, x, side="left")
    total += x * cw[k] - cwb[k]

    b, cw, cwb = _sorted_prefix(b_all[minus], theta[minus])
    k = np.searchsorted(b, x, side="right")
    total += (cwb[-1] - cwb[k]) - x * (cw[-1] - cw[k])

    if slope:
        # leaky part: act(z) = slope * z + (1 - slope) * relu(z)
        linear = np.sum(theta * s_all) * x - np.sum(theta * s_all * b_all)
        total = slope * linear + (1.0 - slope) * total
    return total


def network_sum(net: ReluNet, x) -> np.ndarray:
    """Sum_i theta_i * basis_i(x) without the output affine map."""
    points = _as_points(x, net.input_dim)
    if net.basis.is_axis_aligned_1d():
        return _evaluate_1d(net, points[:, 0])
    out = np.empty(len(points))
    chunk = max(1, 2_000_000 // max(1, len(net.theta)))
    for start in range(0, len(points), chunk):
        out[start:start + chunk] = net.basis.features(points[start:start + chunk], net.activation) @ net.theta
    return out


def forward(net: ReluNet, x) -> float:
    """Evaluate the network at a single input point."""
    point = np.asarray(x, dtype=np.float64).reshape(-1)
    if point.size != net.input_dim:
        raise DimensionMismatchError(f"Expected an input of dimension {net.input_dim}, got {point.size}.")
    _warn_outside_domain(net, point)
    return float(net.alpha + net.gamma * network_sum(net, point.reshape(1, -1))[0])


def forward_batch(net: ReluNet, x) -> np.ndarray:
    """Vectorized forward over m points; returns shape (m,)."""
    points = _as_points(x, net.input_dim)
    _warn_outside_domain(net, points)
    return net.alpha + net.gamma * network_sum(net, points)


def mse_loss(net: ReluNet, x, y, features: np.ndarray | None = None) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if features is None:
        pred = forward_batch(net, x)
    else:
        pred = net.alpha + net.gamma * (features @ net.theta)
    return float(np.mean((pred - y) ** 2))


def gradients(net: ReluNet, x, y, features: np.ndarray | None = None) -> tuple[np.ndarray, float, float]:
    """
    Analytic gradients of the mean squared error with respect to theta, alpha and gamma.

    The basis layer is constant; the ReLU subgradient at its kink is 0.

    Args:
        net: The network.
        x: Batch inputs, shape (m,) in 1D or (m, d).
        y: Batch targets, shape (m,).
        features: Optional precomputed design matrix for x.

    Returns:
        (d_theta, d_alpha, d_gamma)
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise ValueError("Cannot compute gradients on an empty batch.")
    if features is None:
        features = net.basis.features(x, net.activation)
    if len(features) != len(y):
        raise ValueError(f"Batch has {len(features)} inputs but {len(y)} targets.")
    hidden = features @ net.theta
    residual = net.alpha + net.gamma * hidden - y
    scale = 2.0 / len(y)
    d_theta = scale * net.gamma * (features.T @ residual)
    d_alpha = scale * float(np.sum(residual))
    d_gamma = scale * float(np.dot(residual, hidden))
    return d_theta, d_alpha, d_gamma


def uniform_grid(domain=(0.0, 1.0), num: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.linspace(domain[0], domain[1], num)


def eval_grid(net: ReluNet, points) -> EvalGrid:
    points = np.asarray(points, dtype=np.float64)
    return EvalGrid(points=points, values=forward_batch(net, points))


def _target_values(grid: EvalGrid, f_target) -> np.ndarray:
    return np.asarray(f_target(grid.points), dtype=np.float64).reshape(-1)


def sup_error(grid: EvalGrid, f_target) -> float:
    """max |values - f(points)| over the grid."""
    return float(np.max(np.abs(grid.values - _target_values(grid, f_target))))


def l2_error(grid: EvalGrid, f_target) -> float:
    """
    L2 norm of values - f over the grid domain.

    Trapezoid rule in 1D; on multi-dimensional point clouds the root mean square is scaled by
    the square root of the bounding-box volume.
    """
    diff_sq = (grid.values - _target_values(grid, f_target)) ** 2
    if grid.points.ndim == 1:
        return float(math.sqrt(trapezoid(diff_sq, grid.points)))
    volume = float(np.prod(grid.points.max(axis=0) - grid.points.min(axis=0)))
    return float(math.sqrt(np.mean(diff_sq) * volume))
