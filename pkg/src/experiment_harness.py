import hashlib
import itertools
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Callable, NamedTuple

import numpy as np
import pandas as pd
import psutil
from scipy.stats import linregress
from scipy.stats import t as student_t
from tqdm import tqdm

from src.constructive_builders import paired_values
from src.laperm_trainer import Dataset, TrainConfig, laperm_train, train_free
from src.relu_net import Activation, BasisLayer, ReluNet, eval_grid, l2_error, sup_error
from src.run_config import RunConfig, read_versioned_csv, write_versioned_csv
from src.step_approximators import step_error_l2
from src.sweep_store import RESULT_COLUMNS, SweepStore

logger = logging.getLogger(__name__)

DATA_SEED = 2022
SWEEP_SCHEMA = ("sweep_results", 1)
RATE_SCHEMA = ("rate_fit", 1)
MEMORY_LIMIT_PERCENT = 80
RATE_COLUMNS = ["target", "strategy", "mode", "k", "metric", "points", "slope", "stderr",
                "intercept", "ci_low", "ci_high"]
IDENTITY_FIELDS = ("target", "strategy", "n", "seed", "k", "mode")


# --- Targets ---

@dataclass(frozen=True)
class TargetFunction:
    """A regression target on the box domain^dimension."""
    name: str
    dimension: int
    evaluator: Callable
    domain: tuple[float, float] = (-1.0, 1.0)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.dimension == 1:
            return np.asarray(self.evaluator(x.reshape(-1)), dtype=np.float64)
        return np.asarray(self.evaluator(x.reshape(-1, self.dimension)), dtype=np.float64)

    def on_unit_interval(self) -> Callable:
        """The 1D target pulled back to [0, 1] by the affine map u -> lo + u (hi - lo)."""
        if self.dimension != 1:
            raise ValueError(f"Target '{self.name}' is {self.dimension}-dimensional; builders need a 1D target.")
        lo, hi = self.domain
        if (lo, hi) == (0.0, 1.0):
            return self.evaluator
        return lambda u: self.evaluator(lo + np.asarray(u, dtype=np.float64) * (hi - lo))


FOURIER_MIX_COEFFICIENTS = (0.1, 0.5, 0.3, 0.2)


def _fourier_mix(x):
    a0, a1, a2, a3 = FOURIER_MIX_COEFFICIENTS
    return a0 + a1 * np.sin(np.pi * x) + a2 * np.cos(2 * np.pi * x) + a3 * np.sin(3 * np.pi * x)


TARGETS = {
    "sin2pi": TargetFunction("sin2pi", 1, lambda x: np.sin(2 * np.pi * x), (0.0, 1.0)),
    "neg_sin2pi": TargetFunction("neg_sin2pi", 1, lambda x: -np.sin(2 * np.pi * x)),
    "legendre3": TargetFunction("legendre3", 1, lambda x: 0.5 * (5 * x ** 3 - 3 * x)),
    "neg_sin_pixy": TargetFunction("neg_sin_pixy", 2, lambda p: -np.sin(np.pi * p[:, 0] * p[:, 1])),
    "sin3x_cosy_sin2z": TargetFunction(
        "sin3x_cosy_sin2z", 3, lambda p: np.sin(3 * p[:, 0]) * np.cos(p[:, 1]) * np.sin(2 * p[:, 2])
    ),
    "fourier_mix": TargetFunction("fourier_mix", 1, _fourier_mix),
    "linear": TargetFunction("linear", 1, lambda x: np.asarray(x, dtype=np.float64), (0.0, 1.0)),
    "constant": TargetFunction("constant", 1, lambda x: np.full(np.shape(x), 0.03), (0.0, 1.0)),
}

TARGET_ALIASES = {
    "sin": "sin2pi",
    "sin1d": "neg_sin2pi",
    "legendre": "legendre3",
    "sin2d": "neg_sin_pixy",
    "sin3d": "sin3x_cosy_sin2z",
}


def get_target(name: str) -> TargetFunction:
    key = TARGET_ALIASES.get(name, name)
    if key not in TARGETS:
        valid = sorted(TARGETS) + sorted(TARGET_ALIASES)
        raise ValueError(f"Unknown target '{name}'. Valid targets: {', '.join(valid)}.")
    return TARGETS[key]


# --- Bases ---

def direction_set(dimension: int) -> list[tuple[int, ...]]:
    """Canonical axes (first nonzero entry positive); each carries a + and a - unit per location."""
    if dimension == 1:
        return [(1,)]
    if dimension == 2:
        return [(1, 0), (0, 1), (1, 1), (1, -1)]
    if dimension == 3:
        vectors = [v for v in itertools.product((-1, 0, 1), repeat=3) if any(v)]
        canonical = [v for v in vectors if next(c for c in v if c != 0) > 0]
        return sorted(canonical, key=lambda v: (sum(map(abs, v)), [-c for c in v]))
    raise ValueError(f"Only 1, 2 and 3 input dimensions are supported, got {dimension}.")


def bias_ranges(directions, domain=(-1.0, 1.0), t_b: float = 0.0) -> list[tuple[float, float]]:
    """
    Location range per direction.

    The box is widened by t_b times its half-width in every dimension and projected onto the
    unit direction, so diagonal directions get ranges |v|_1/|v|_2 times wider.
    """
    lo, hi = float(domain[0]), float(domain[1])
    center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    ranges = []
    for v in directions:
        v = np.asarray(v, dtype=np.float64)
        norm = np.linalg.norm(v)
        mid = center * v.sum() / norm
        width = half * (1.0 + t_b) * np.abs(v).sum() / norm
        ranges.append((float(mid - width), float(mid + width)))
    return ranges


def _layer(directions, locations: np.ndarray) -> BasisLayer:
    """Locations has shape (groups, n); units are interleaved (+, -) pairs, group after group."""
    n = locations.shape[1]
    axes = np.repeat(np.asarray(directions, dtype=np.int64), 2 * n, axis=0)
    return BasisLayer(
        locations=np.repeat(locations.reshape(-1), 2),
        axes=axes,
        signs=np.tile(np.array([1, -1]), locations.size),
    )


def _make_basis(dimension: int, n: int, domain, t_b: float, locations=None) -> BasisLayer:
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}.")
    directions = direction_set(dimension)
    if locations is None:
        locations = np.array([np.linspace(lo, hi, n) for lo, hi in bias_ranges(directions, domain, t_b)])
    return _layer(directions, np.asarray(locations, dtype=np.float64).reshape(len(directions), n))


def make_basis_1d(n: int, domain=(0.0, 1.0), locations=None) -> BasisLayer:
    """2n units phi_i^+, phi_i^- at equidistant (or the given) locations."""
    return _make_basis(1, n, domain, 0.0, locations)


def make_basis_2d(n: int, t_b: float = 0.75, domain=(-1.0, 1.0), locations=None) -> BasisLayer:
    """8n units over the directions +-x, +-y, +-(x+y), +-(x-y)."""
    return _make_basis(2, n, domain, t_b, locations)


def make_basis_3d(n: int, t_b: float = 0.75, domain=(-1.0, 1.0), locations=None) -> BasisLayer:
    """26n units over the 13 axis, face-diagonal and corner-diagonal directions, both signs."""
    return _make_basis(3, n, domain, t_b, locations)


# --- Initialization strategies ---

STRATEGIES = (
    "equidistant",
    "pairwise_random",
    "total_random",
    "B_only_random",
    "W_only_random",
    "xavier_uniform_all",
    "he_normal_all",
    "xavier_W_only",
    "he_W_only",
)

STRATEGY_ALIASES = {"pairwise": "pairwise_random", "total": "total_random", "random": "total_random"}


def resolve_strategy(name: str) -> str:
    key = STRATEGY_ALIASES.get(name, name)
    if key not in STRATEGIES:
        valid = list(STRATEGIES) + sorted(STRATEGY_ALIASES)
        raise ValueError(f"Unknown strategy '{name}'. Valid strategies: {', '.join(valid)}.")
    return key


def initialize(strategy: str, n: int, rng: np.random.Generator, ranges=((0.0, 1.0),),
               input_dim: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw locations B (n per direction group) and coefficients W (2n per group).

    Xavier uses fan_in = input_dim, fan_out = total hidden width for B, and fan_in = hidden
    width, fan_out = 1 for W. He uses the hidden width as its fan for both.
    """
    strategy = resolve_strategy(strategy)
    groups = len(ranges)
    width = 2 * n * groups
    xavier_B = math.sqrt(6.0 / (input_dim + width))
    xavier_W = math.sqrt(6.0 / (width + 1))
    he = math.sqrt(2.0 / width)

    B_parts, W_parts = [], []
    for lo, hi in ranges:
        equi = np.linspace(lo, hi, n)
        if strategy == "equidistant":
            B, W = equi, paired_values(equi)
        elif strategy == "pairwise_random":
            B, W = equi, paired_values(rng.uniform(lo, hi, n))
        elif strategy == "total_random":
            B, W = rng.uniform(lo, hi, n), rng.uniform(-1.0, 1.0, 2 * n)
        elif strategy == "B_only_random":
            B, W = rng.uniform(lo, hi, n), paired_values(equi)
        elif strategy == "W_only_random":
            B, W = equi, rng.uniform(-1.0, 1.0, 2 * n)
        elif strategy == "xavier_uniform_all":
            B, W = rng.uniform(-xavier_B, xavier_B, n), rng.uniform(-xavier_W, xavier_W, 2 * n)
        elif strategy == "he_normal_all":
            B, W = rng.normal(0.0, he, n), rng.normal(0.0, he, 2 * n)
        elif strategy == "xavier_W_only":
            B, W = rng.uniform(lo, hi, n), rng.uniform(-xavier_W, xavier_W, 2 * n)
        else:  # he_W_only
            B, W = rng.uniform(lo, hi, n), rng.normal(0.0, he, 2 * n)
        B_parts.append(B)
        W_parts.append(W)
    return np.concatenate(B_parts), np.concatenate(W_parts)


def build_net(target: TargetFunction, strategy: str, n: int, rng: np.random.Generator,
              t_b: float | None = None, activation: Activation = Activation()) -> ReluNet:
    """
    Basis and coefficients for `target` under `strategy`, ready for training.

    gamma starts at 1 / max|W|, so every strategy begins with unit-size effective coefficients.
    """
    if t_b is None:
        t_b = scale_defaults(target.dimension)["t_b"]
    directions = direction_set(target.dimension)
    ranges = bias_ranges(directions, target.domain, t_b)
    B, W = initialize(strategy, n, rng, ranges, input_dim=target.dimension)
    basis = _layer(directions, B.reshape(len(directions), n))
    scale = float(np.max(np.abs(W)))
    gamma = 1.0 / scale if scale > 0 else 1.0
    return ReluNet(basis=basis, theta=W, gamma=gamma, activation=activation, domain=target.domain)


# --- Data ---

def reference_seeds(m: int) -> list[int]:
    """2022, 3022, ..., 2022 + 1000 (m - 1)."""
    return [2022 + 1000 * i for i in range(m)]


def scale_defaults(dimension: int, full_scale: bool = False, desk_scale: float = 1.0) -> dict:
    """Per-dimension training defaults; desk scale shortens training and the multi-D data sets."""
    index = {1: 0, 2: 1, 3: 2}[dimension]
    defaults = {
        "batch_size": (16, 128, 640)[index],
        "k": (5, 5, 20)[index],
        "t_b": (0.0, 0.75, 0.75)[index],
        "epochs": 6400 if full_scale else 2000,
        "seeds": 10 if full_scale else 3,
    }
    if full_scale:
        n_train, n_test = (1600, 400) if dimension == 1 else (51200, 12800)
    else:
        n_train, n_test = (1600, 400) if dimension == 1 else (12800, 3200)
        n_train, n_test = max(1, int(n_train * desk_scale)), max(1, int(n_test * desk_scale))
    defaults.update(n_train=n_train, n_test=n_test)
    return defaults


def equidistant_points(target: TargetFunction, n_test: int) -> np.ndarray:
    """Equidistant test points: n_test in 1D, ceil(n_test^(1/d)) per axis otherwise."""
    lo, hi = target.domain
    if target.dimension == 1:
        return np.linspace(lo, hi, n_test)
    per_axis = math.ceil(round(n_test ** (1.0 / target.dimension), 9))
    axes = [np.linspace(lo, hi, per_axis)] * target.dimension
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.reshape(-1) for m in mesh])


def generate_data(target: TargetFunction, n_train: int, n_test: int, seed: int = DATA_SEED) -> tuple[Dataset, Dataset]:
    """Uniform random training points in the domain box and an equidistant test grid."""
    if n_train < 1 or n_test < 2:
        raise ValueError(f"Need n_train >= 1 and n_test >= 2, got {n_train} and {n_test}.")
    rng = np.random.default_rng(seed)
    lo, hi = target.domain
    shape = (n_train,) if target.dimension == 1 else (n_train, target.dimension)
    x_train = rng.uniform(lo, hi, shape)
    x_test = equidistant_points(target, n_test)
    return Dataset(x_train, target(x_train)), Dataset(x_test, target(x_test))


# --- Sweep cells ---

@dataclass(frozen=True)
class CellSpec:
    """Everything one worker needs to train and score one cell; plain fields so it pickles."""
    target: str
    strategy: str
    n: int
    seed: int
    k: float
    mode: str = "laperm"
    epochs: int = 2000
    lr: float = 1e-3
    k_growth: float = 1.002 ** (1 / 10)
    lr_decay: float = 0.998
    batch_size: int = 16
    granularity: str = "epoch"
    adaptive_k: bool = False
    freeze_affine: bool = False
    activation: str = "relu"
    leaky_slope: float = 0.01
    t_b: float = 0.0
    n_train: int = 1600
    n_test: int = 400

    @property
    def key(self) -> str:
        return f"{self.target}:{self.strategy}:{self.n}:{self.seed}:{self.k:g}:{self.mode}:{self.settings_digest()}"

    def settings_digest(self) -> str:
        """Hash of the training options, so changed settings never resume stale cells."""
        settings = {k: v for k, v in asdict(self).items() if k not in IDENTITY_FIELDS}
        return hashlib.sha256(json.dumps(settings, sort_keys=True).encode("utf-8")).hexdigest()[:12]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, k=self.k, k_growth=self.k_growth, lr_decay=self.lr_decay, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, granularity=self.granularity,
            adaptive_k=self.adaptive_k, freeze_affine=self.freeze_affine,
        )


def train_cell(cell: CellSpec, tracer=None):
    """Train one cell. Returns (report, train set, test set, target)."""
    target = get_target(cell.target)
    train, test = generate_data(target, cell.n_train, cell.n_test, DATA_SEED)
    activation = Activation(cell.activation, cell.leaky_slope)
    net = build_net(target, cell.strategy, cell.n, np.random.default_rng(cell.seed), cell.t_b, activation)
    if cell.mode == "free":
        report = train_free(net, train, cell.train_config())
    else:
        report = laperm_train(net, train, cell.train_config(), tracer=tracer)
    return report, train, test, target


def run_cell(cell: CellSpec) -> dict:
    """Worker entry point. Failures come back as {'key', 'error'} so the parent can record them."""
    try:
        report, _, test, target = train_cell(cell)
        grid = eval_grid(report.net, test.x)
        return {
            "key": cell.key,
            "sup_error": sup_error(grid, target),
            "l2_error": l2_error(grid, target),
            "final_loss": report.final_loss,
            "multiset_ok": report.net.multiset_preserved(),
            "moved_total": int(sum(e.moved_count for e in report.events)),
            "wall_time": report.wall_time,
        }
    except Exception as e:
        return {"key": cell.key, "error": f"{type(e).__name__}: {e}"}


def sweep_cells(targets, strategies, n_list, seeds, cfg: RunConfig) -> list[CellSpec]:
    """Expand a sweep into cells; per-dimension defaults fill the options left unset in cfg."""
    cells = []
    for target_name in targets:
        target = get_target(target_name)
        defaults = scale_defaults(target.dimension, cfg.full_scale, cfg.desk_scale)
        seed_list = reference_seeds(seeds) if isinstance(seeds, int) else list(seeds)
        ks = list(cfg.k_list) or [cfg.k if cfg.k is not None else defaults["k"]]
        modes = ["laperm", "free"] if cfg.with_baseline else ["laperm"]
        common = dict(
            epochs=defaults["epochs"] if cfg.epochs is None else cfg.epochs,
            lr=cfg.lr, k_growth=cfg.k_growth, lr_decay=cfg.lr_decay,
            batch_size=cfg.batch_size or defaults["batch_size"], granularity=cfg.granularity,
            adaptive_k=cfg.adaptive_k, freeze_affine=cfg.freeze_affine,
            activation=cfg.activation, leaky_slope=cfg.leaky_slope,
            t_b=defaults["t_b"] if cfg.t_b is None else cfg.t_b,
            n_train=cfg.n_train or defaults["n_train"], n_test=cfg.n_test or defaults["n_test"],
        )
        for strategy, n, seed, mode in itertools.product(strategies, n_list, seed_list, modes):
            for k in (ks if mode == "laperm" else ks[:1]):
                cells.append(CellSpec(target=target.name, strategy=resolve_strategy(strategy), n=int(n),
                                      seed=int(seed), k=float(k), mode=mode, **common))
    return cells


# --- Rate fits ---

class RateFit(NamedTuple):
    slope: float
    stderr: float
    intercept: float
    ci_low: float
    ci_high: float
    points: int


def fit_rate(errors, confidence: float = 0.95) -> RateFit:
    """Least-squares fit of log e against log n, with a Student-t confidence band on the slope."""
    pairs = [(float(n), float(e)) for n, e in errors]
    if len({n for n, _ in pairs}) < 2:
        raise ValueError(f"Need errors at two or more distinct widths to fit a rate, got {len(pairs)} point(s).")
    if any(n <= 0 or e <= 0 for n, e in pairs):
        raise ValueError("Widths and errors must be positive to fit on a log-log scale.")
    log_n = np.log([n for n, _ in pairs])
    log_e = np.log([e for _, e in pairs])
    fit = linregress(log_n, log_e)
    dof = len(pairs) - 2
    half = float(student_t.ppf(0.5 + confidence / 2.0, dof) * fit.stderr) if dof > 0 else 0.0
    return RateFit(float(fit.slope), float(fit.stderr), float(fit.intercept),
                   float(fit.slope) - half, float(fit.slope) + half, len(pairs))


def step_rate_errors(n_list=(10, 20, 40, 80, 160, 320)) -> list[tuple[int, float]]:
    """L2 error of a unit step built from four adjacent equidistant locations, for each width n."""
    errors = []
    for n in n_list:
        if n < 4:
            raise ValueError(f"Adjacent four-pair steps need n >= 4, got {n}.")
        locations = np.linspace(0.0, 1.0, n)
        start = (n - 4) // 2
        b = locations[start:start + 4]
        height = 4.0 * (b[1] - b[0]) * (b[3] - b[1])
        errors.append((int(n), step_error_l2(b, gamma=1.0 / height)))
    return errors


def median_errors(rows: pd.DataFrame) -> pd.DataFrame:
    """Median sup and L2 test errors over seeds."""
    keys = ["target", "strategy", "mode", "k", "n"]
    if rows.empty:
        return pd.DataFrame(columns=keys + ["sup_error", "l2_error"])
    return rows.groupby(keys, as_index=False)[["sup_error", "l2_error"]].median()


def fit_table(rows: pd.DataFrame) -> pd.DataFrame:
    """One rate fit per (target, strategy, mode, k) and metric, over the median errors."""
    medians = median_errors(rows)
    out = []
    for (target, strategy, mode, k), group in medians.groupby(["target", "strategy", "mode", "k"]):
        for metric in ("sup_error", "l2_error"):
            try:
                fit = fit_rate(zip(group["n"], group[metric]))
            except ValueError as e:
                logger.debug(f"No rate fit for {target}/{strategy}/{mode}/k={k} ({metric}): {e}")
                continue
            out.append({"target": target, "strategy": strategy, "mode": mode, "k": k, "metric": metric,
                        **fit._asdict()})
    return pd.DataFrame(out, columns=RATE_COLUMNS)


@dataclass
class SweepResult:
    rows: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=RESULT_COLUMNS))
    fits: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=RATE_COLUMNS))
    trained: int = 0
    skipped: int = 0
    failed: int = 0

    def write(self, out_dir: str) -> None:
        write_versioned_csv(self.rows, os.path.join(out_dir, "sweep_results.csv"), *SWEEP_SCHEMA)
        write_versioned_csv(self.fits, os.path.join(out_dir, "rate_fit.csv"), *RATE_SCHEMA)

    @classmethod
    def from_csv(cls, path: str) -> "SweepResult":
        rows, name, version = read_versioned_csv(path)
        if (name, version) != SWEEP_SCHEMA:
            raise ValueError(f"{path} holds '{name} v{version}', expected "
                             f"'{SWEEP_SCHEMA[0]} v{SWEEP_SCHEMA[1]}'.")
        return cls(rows=rows, fits=fit_table(rows))


# --- Sweep runner ---

def _wait_for_memory() -> None:
    mem_percent = psutil.virtual_memory().percent
    if mem_percent > MEMORY_LIMIT_PERCENT:
        logger.warning(f"High memory usage ({mem_percent}%). Pausing for 10 seconds.")
        time.sleep(10)


def _record(store: SweepStore, outcome: dict) -> bool:
    if "error" in outcome:
        logger.error(f"Cell {outcome['key']} failed: {outcome['error']}")
        store.record_failure(outcome["key"], outcome["error"])
        return False
    store.record_result(outcome["key"], outcome)
    logger.debug(f"Cell {outcome['key']} done: sup error {outcome['sup_error']:.4g}.")
    return True


def run_sweep(targets, strategies, n_list, seeds, cfg: RunConfig, store: SweepStore | None = None,
              show_progress: bool = True) -> SweepResult:
    """
    Train every (target, strategy, n, seed, k, mode) cell and score it on the test grid.

    Cells already completed in the progress database are skipped. Workers only compute; the
    parent process is the only writer to the database.
    """
    cells = sweep_cells(targets, strategies, n_list, seeds, cfg)
    if not cells:
        logger.info("Nothing to sweep.")
        return SweepResult()

    store = store or SweepStore(cfg.db_path)
    added = store.register(cells, cfg.config_hash())
    keys = [c.key for c in cells]
    done = store.completed_keys(keys)
    pending = [c for c in cells if c.key not in done]
    logger.info(f"Sweep: {len(cells)} cells, {added} new, {len(done)} already completed, {len(pending)} to run.")

    trained = failed = 0
    workers = max(1, min(cfg.workers, len(pending)))
    pool = Pool(workers) if workers > 1 and pending else None
    try:
        with tqdm(total=len(pending), desc="Sweep", disable=not show_progress) as pbar:
            for i in range(0, len(pending), workers):
                batch = pending[i:i + workers]
                _wait_for_memory()
                for cell in batch:
                    store.mark_running(cell.key)
                outcomes = pool.imap_unordered(run_cell, batch) if pool else map(run_cell, batch)
                for outcome in outcomes:
                    if _record(store, outcome):
                        trained += 1
                    else:
                        failed += 1
                    pbar.update(1)
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    rows = store.results_frame(keys)
    logger.info(f"Sweep complete. Trained: {trained}, Skipped: {len(done)}, Failed: {failed}.")
    return SweepResult(rows=rows, fits=fit_table(rows), trained=trained, skipped=len(done), failed=failed)


def run_k_study(target: str, cfg: RunConfig, ks=(1, 3, 5, 10, 20), n: int | None = None,
                seed: int | None = None) -> pd.DataFrame:
    """Train the same equidistant net once per permutation period k and report its final errors."""
    base = sweep_cells([target], ["equidistant"], [cfg.n if n is None else n], [cfg.seed if seed is None else seed], cfg)[0]
    rows = []
    for k in ks:
        cell = CellSpec(**{**asdict(base), "k": float(k)})
        outcome = run_cell(cell)
        if "error" in outcome:
            raise RuntimeError(f"k={k}: {outcome['error']}")
        rows.append({"target": cell.target, "n": cell.n, "seed": cell.seed, "k": cell.k,
                     **{c: outcome[c] for c in ("sup_error", "l2_error", "final_loss", "moved_total")}})
        logger.info(f"k={k}: sup error {outcome['sup_error']:.4g}, {outcome['moved_total']} moves.")
    return pd.DataFrame(rows, columns=["target", "n", "seed", "k", "sup_error", "l2_error", "final_loss",
                                       "moved_total"])
