"""
Monte-Carlo studies of the scheme: strong rates in space and time, Hölder
exponents, density and Malliavin-derivative convergence, plus the kernel
error ladder and the fast validation suite.

Every sample is keyed by (seed, sample_index). Within one sample all levels
run on coarsenings of a single master sheet, so pathwise differences measure
the strong error. Results are collected in sample order and reduced with
numpy, so reports do not depend on the number of threads.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from .errors import (CouplingError, DegenerateSampleError, DivisibilityError,
                     SampleOverflowError)
from .greens import KernelConfig, estimate_kernel_error
from .grid import Field, build_basis, interpolate
from .malliavin import (MalliavinRecord, NegativeMomentEstimate, check_budget, hnorm2_at,
                        negative_moment_estimate, table_distance, tangent_table)
from .models import ConstantDiffusion, Cutoff, ModelFactory, ZeroDrift
from .noise import SheetIncrements, coarsen, coarsen_to, generate
from .parallel import SamplePool, Timer
from .solver import (SolverConfig, interior_increments, iterate_states, simulate,
                     simulate_increments)

logger = logging.getLogger(__name__)

STUDY_KINDS = ("spatial_rate", "temporal_rate", "holder_time", "holder_space",
               "density", "malliavin_rate", "localized_rate")
LADDER_KINDS = ("spatial_rate", "temporal_rate", "density", "malliavin_rate", "localized_rate")

# (low, high) slope windows; None leaves a side open
ACCEPTANCE_WINDOWS = {
    "spatial_rate": (-1.35, -0.75),
    "temporal_rate": (-0.55, -0.25),
    "holder_time": (0.6, 0.9),
    "holder_space": (1.6, 2.2),
    "malliavin_rate": (None, -1.2),
    "localized_rate": (-1.35, -0.75),
    "kernel_l2_ratio": (3.0, 5.5),
    "kernel_l1_laplacian_ratio": (1.7, 2.6),
}
MIN_R2 = {"spatial_rate": 0.95, "temporal_rate": 0.9}
MONOTONE_TOLERANCE = {"spatial_rate": 0.05, "malliavin_rate": 0.05, "density": 0.10}

MIN_SAMPLES = 50
DENSITY_MIN_SAMPLES = 5000
INSUFFICIENT_RATIO = 0.25
NEGATIVE_MOMENT_RATIO = 0.2
EXACT_ERROR = 1e-13
# holder gaps keep this many cells or steps away from the boundary and t = 0
HOLDER_MARGIN = 8
HOLDER_MIN_SPACE_GAP = 4
ORTHONORMALITY_LEVELS = (8, 64, 1024, 4096)


@dataclass(frozen=True)
class StudyPlan:
    """
    What a study computes and with how many samples.

    Args:
        kind (str): One of STUDY_KINDS
        levels (tuple): Increasing ladder of n (space kinds), m (temporal_rate)
            or gaps in steps/cells (holder kinds)
        samples (int): Monte-Carlo samples M, at least 50
        config (SolverConfig): Base configuration; its m is the common time grid of
            space studies and its n the common space grid of temporal_rate
        reference (int, optional): Reference level, divisible by every level
        seed (int): Master seed
        p (float): Moment order of the error
        x (float): Evaluation point x*
        t (float, optional): Evaluation time, default the horizon
        threads (int): Worker threads

    Raises:
        ValueError: If a field is invalid
        DivisibilityError: If a level does not divide the reference
    """

    kind: str
    levels: Tuple[int, ...]
    samples: int
    config: SolverConfig
    reference: Optional[int] = None
    seed: int = 0
    p: float = 2.0
    x: float = math.pi / 2
    t: Optional[float] = None
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(level) for level in self.levels))
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind: {self.kind}")
        if not self.levels or self.levels[0] < 1:
            raise ValueError("levels must be positive")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"levels must increase strictly, got {list(self.levels)}")
        if self.samples < MIN_SAMPLES:
            raise ValueError(f"at least {MIN_SAMPLES} samples are required, got {self.samples}")
        if self.p < 1:
            raise ValueError(f"moment order p must be >= 1, got {self.p}")
        if not 0.0 <= self.x <= math.pi:
            raise ValueError(f"x must lie in [0, pi], got {self.x}")
        if self.t is not None and not 0 < self.t <= self.config.T:
            raise ValueError(f"t must lie in (0, T], got {self.t}")
        if self.kind in LADDER_KINDS:
            if self.reference is None:
                raise ValueError(f"{self.kind} needs a reference level")
            if self.levels[-1] >= self.reference:
                raise ValueError(f"levels must stay below the reference {self.reference}")
            bad = [level for level in self.levels if self.reference % level]
            if bad:
                raise DivisibilityError(f"levels {bad} do not divide the reference {self.reference}")

    @property
    def time(self) -> float:
        return self.config.T if self.t is None else self.t


@dataclass(frozen=True)
class RateReport:
    """
    Per-level errors of a study and the fitted log2 slope.

    The last row of a ladder study is the reference level, whose error is zero;
    it is reported but never fitted.
    """

    kind: str
    levels: List[int]
    errors: List[float]
    stderrs: List[float]
    slope: float
    r2: float
    samples: int
    discards: int = 0
    reference: Optional[int] = None
    window: Optional[Tuple[Optional[float], Optional[float]]] = None
    passed: bool = False
    exact: bool = False
    insufficient: bool = False
    monotone: bool = True
    retained: Optional[List[float]] = None

    def to_columns(self) -> Dict[str, list]:
        columns = {"level": list(self.levels), "error": list(self.errors),
                   "stderr": list(self.stderrs)}
        if self.retained is not None:
            columns["retained"] = list(self.retained)
        return columns

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "slope": _finite_or_none(self.slope),
            "r2": _finite_or_none(self.r2),
            "window": list(self.window) if self.window else None,
            "pass": self.passed,
            "exact": self.exact,
            "insufficient_samples": self.insufficient,
            "monotone": self.monotone,
            "samples": self.samples,
            "discards": self.discards,
            "reference": self.reference,
        }


@dataclass(frozen=True)
class DensityReport:
    """L1 distances between level and reference densities at (T, x*)."""

    levels: List[int]
    reference: int
    distances: List[float]
    samples: int
    discards: int
    monotone: bool

    @property
    def passed(self) -> bool:
        return self.monotone

    def to_columns(self) -> Dict[str, list]:
        return {"level": list(self.levels), "l1_distance": list(self.distances)}

    def summary(self) -> dict:
        return {"kind": "density", "pass": self.passed, "monotone": self.monotone,
                "samples": self.samples, "discards": self.discards, "reference": self.reference}


@dataclass(frozen=True)
class KernelReport:
    """Kernel errors per (kind, x, n) with doubling ratios and fitted slopes."""

    rows: List[dict]
    slopes: Dict[str, float]
    passed: bool

    def to_columns(self) -> Dict[str, list]:
        keys = ("kind", "x", "n", "error", "refined", "relative_change", "resolved", "ratio")
        return {key: [row[key] for row in self.rows] for key in keys}

    def to_wide_columns(self) -> Dict[str, list]:
        """One row per (x, n) with both errors side by side."""
        errors = {(row["kind"], row["x"], row["n"]): row["error"] for row in self.rows}
        points = sorted({(row["x"], row["n"]) for row in self.rows})
        return {"x": [x for x, _ in points], "n": [n for _, n in points],
                "l2_error": [errors.get(("l2", x, n), math.nan) for x, n in points],
                "l1_laplacian_error": [errors.get(("l1_laplacian", x, n), math.nan) for x, n in points]}

    def summary(self) -> dict:
        return {"kind": "kernel_errors", "pass": self.passed,
                "slopes": {key: _finite_or_none(value) for key, value in self.slopes.items()},
                "windows": {kind: list(ACCEPTANCE_WINDOWS[f"kernel_{kind}_ratio"])
                            for kind in ("l2", "l1_laplacian")}}


@dataclass(frozen=True)
class MomentProfile:
    """E ||u(t_i)||_inf^2 over the time grid."""

    times: np.ndarray
    mean_square: np.ndarray
    samples: int
    discards: int

    @property
    def maximum(self) -> float:
        return float(np.max(self.mean_square))

    def to_columns(self) -> Dict[str, list]:
        return {"t": list(self.times), "mean_square_max_norm": list(self.mean_square)}

    def summary(self) -> dict:
        return {"kind": "moment_profile", "maximum": self.maximum, "samples": self.samples,
                "discards": self.discards}


@dataclass(frozen=True)
class NondegeneracyReport:
    """hnorm2 records of a sample set and their negative moment."""

    hnorm2: np.ndarray = field(repr=False)
    estimate: NegativeMomentEstimate
    discards: int

    @property
    def minimum(self) -> float:
        return float(np.min(self.hnorm2))

    @property
    def passed(self) -> bool:
        est = self.estimate
        return (self.minimum > 0 and not est.degenerate
                and est.stderr < NEGATIVE_MOMENT_RATIO * est.mean)

    def to_columns(self) -> Dict[str, list]:
        return {"sample": list(range(len(self.hnorm2))), "hnorm2": list(self.hnorm2)}

    def summary(self) -> dict:
        est = self.estimate
        return {"kind": "nondegeneracy", "pass": self.passed, "min_hnorm2": self.minimum,
                "rho": est.rho, "negative_moment": _finite_or_none(est.mean),
                "stderr": _finite_or_none(est.stderr), "samples": est.count,
                "discards": self.discards}


@dataclass(frozen=True)
class Check:
    """One fast invariant check: passes when value <= tolerance."""

    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


@dataclass(frozen=True)
class ValidationReport:
    checks: List[Check]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_columns(self) -> Dict[str, list]:
        return {"check": [c.name for c in self.checks], "value": [c.value for c in self.checks],
                "tolerance": [c.tolerance for c in self.checks],
                "passed": [c.passed for c in self.checks]}

    def summary(self) -> dict:
        return {"kind": "validate", "pass": self.passed,
                "checks": {c.name: {"value": c.value, "tolerance": c.tolerance, "pass": c.passed}
                           for c in self.checks}}


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def fit_rate(levels: Sequence[float], errors: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares slope of log2(error) against log2(level).

    Args:
        levels (sequence): At least three positive levels
        errors (sequence): Matching positive errors

    Returns:
        tuple: (slope, R^2)

    Raises:
        ValueError: If fewer than three levels are given or a value is not positive
    """
    levels = np.asarray(levels, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if levels.size < 3 or levels.shape != errors.shape:
        raise ValueError(f"need at least three matching levels and errors, got {levels.size}")
    if np.any(levels <= 0) or np.any(errors <= 0):
        raise ValueError("levels and errors must be positive")
    fit = stats.linregress(np.log2(levels), np.log2(errors))
    return float(fit.slope), float(fit.rvalue ** 2)


def in_window(value: float, window) -> bool:
    low, high = window
    return math.isfinite(value) and (low is None or value >= low) and (high is None or value <= high)


def is_monotone(values: Sequence[float], tolerance: float, allowed: int = 1) -> bool:
    """
    True if values decrease, up to ``allowed`` adjacent increases of at most ``tolerance``.
    """
    violations = 0
    for a, b in zip(values, values[1:]):
        if b > a:
            if b > a * (1 + tolerance):
                return False
            violations += 1
    return violations <= allowed


def coupled(master: SheetIncrements, m: int, n: int) -> SheetIncrements:
    """
    Coarsen the master sheet to (m, n) and check that no increment mass was lost.

    Raises:
        CouplingError: If the aggregated checksum differs from the master checksum
    """
    sheet = coarsen_to(master, m, n)
    expected, got = master.checksum(), sheet.checksum()
    if not math.isclose(expected, got, rel_tol=1e-9, abs_tol=1e-9 * math.sqrt(master.T * math.pi)):
        raise CouplingError(f"sample {master.sample_index}: level ({m}, {n}) sums to {got!r}, "
                            f"master sums to {expected!r}")
    return sheet


def step_of(config: SolverConfig, t: float) -> int:
    """Time index of t on the grid of config."""
    i = round(t / config.T * config.m)
    if not math.isclose(i * config.T / config.m, t, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"t={t} is not on the time grid of m={config.m}")
    return i


def at_points(config: SolverConfig, values: np.ndarray, x):
    return interpolate(Field(config.mesh, values), x)


def point_value(config: SolverConfig, sheet: SheetIncrements, t: float, x: float) -> float:
    """u^{m,n}(t, x) with polygonal interpolation, stopping the run at t."""
    wanted = step_of(config, t)
    if wanted == config.m:
        return interpolate(simulate(config, sheet).terminal, x)
    states = iterate_states(config, interior_increments(sheet, config.m, config.n))
    return at_points(config, next(values for i, values in states if i == wanted), x)


def run_samples(func: Callable[[int], np.ndarray], indices: Sequence[int],
                threads: int) -> Tuple[np.ndarray, int]:
    """
    Apply func to every sample index, dropping samples that overflow.

    Returns:
        tuple: (stacked results of the kept samples in index order, number discarded)
    """
    def guarded(index):
        try:
            return func(index)
        except SampleOverflowError as e:
            logger.debug(f"sample {index} discarded: {e}")
            return None

    with SamplePool(threads) as pool:
        results = pool.map(guarded, indices)
    kept = [r for r in results if r is not None]
    discards = len(results) - len(kept)
    if discards:
        logger.warning(f"discarded {discards} of {len(results)} samples after overflow")
    if not kept:
        raise DegenerateSampleError("every sample overflowed")
    return np.array(kept, dtype=float), discards


def moment_errors(moments: np.ndarray, p: float, root: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-column (mean)^(1/p) and its delta-method standard error.

    Args:
        moments (ndarray): samples x levels array of |difference|^p
        p (float): Moment order
        root (bool): Take the 1/p-th root; without it the plain mean is returned

    Returns:
        tuple: (errors, standard errors)
    """
    count = moments.shape[0]
    mean = moments.mean(axis=0)
    spread = moments.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.full_like(mean, np.nan)
    if not root:
        return mean, spread
    errors = mean ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        stderrs = np.where(mean > 0, errors / (p * mean) * spread, 0.0)
    return errors, stderrs


def _rate_report(plan: StudyPlan, levels: List[int], errors: np.ndarray, stderrs: np.ndarray,
                 samples: int, discards: int, fitted: int,
                 retained: Optional[List[float]] = None) -> RateReport:
    ladder = np.asarray(errors[:fitted])
    window = ACCEPTANCE_WINDOWS[plan.kind]
    positive = errors > 0
    insufficient = bool(np.any(stderrs[positive] > INSUFFICIENT_RATIO * errors[positive]))
    if insufficient:
        logger.warning(f"{plan.kind}: standard error above {INSUFFICIENT_RATIO:.0%} of the error "
                       f"at some level, increase the samples")
    if np.all(ladder <= EXACT_ERROR):
        logger.info(f"{plan.kind}: errors vanish at every level, reported as exact")
        slope, r2, exact = math.nan, math.nan, True
        passed, monotone = True, True
    else:
        slope, r2 = fit_rate(levels[:fitted], ladder)
        exact = False
        tolerance = MONOTONE_TOLERANCE.get("spatial_rate" if plan.kind == "localized_rate" else plan.kind)
        monotone = is_monotone(list(ladder), tolerance) if tolerance is not None else True
        passed = in_window(slope, window) and r2 >= MIN_R2.get(plan.kind, 0.0) and monotone
    report = RateReport(plan.kind, list(levels), [float(e) for e in errors],
                        [float(s) for s in stderrs], slope, r2, samples, discards,
                        plan.reference, window, passed, exact, insufficient, monotone, retained)
    logger.info(f"{plan.kind}: slope {slope:.3f} (R^2 {r2:.3f}), window {window}, "
                f"{'pass' if passed else 'fail'}")
    return report


def _log_levels(kind: str, levels, errors, stderrs):
    for level, error, stderr in zip(levels, errors, stderrs):
        logger.info(f"{kind} level {level}: error {error:.4e} +- {stderr:.1e}")


def _require(plan: StudyPlan, *kinds: str):
    if plan.kind not in kinds:
        raise ValueError(f"plan kind {plan.kind} does not fit this study (expected {' or '.join(kinds)})")


def spatial_rate_study(plan: StudyPlan) -> RateReport:
    """
    Strong error in space against the reference level on a common time grid.

    For each sample a master sheet at (config.m, reference) drives every level;
    the error at level n is E|u^{m,n}(t, x*) - u^{m,n_ref}(t, x*)|^p to the power 1/p.

    Args:
        plan (StudyPlan): A spatial_rate plan

    Returns:
        RateReport: Ladder errors plus the zero reference row
    """
    _require(plan, "spatial_rate")
    config, t, x = plan.config, plan.time, plan.x

    def one(index):
        master = generate(plan.seed, index, config.m, plan.reference, config.T)
        reference = point_value(config.at_level(n=plan.reference), master, t, x)
        values = [point_value(config.at_level(n=n), coupled(master, config.m, n), t, x)
                  for n in plan.levels]
        return np.abs(np.array(values + [reference]) - reference) ** plan.p

    with Timer(f"spatial_rate study ({plan.samples} samples)"):
        moments, discards = run_samples(one, range(plan.samples), plan.threads)
    levels = list(plan.levels) + [plan.reference]
    errors, stderrs = moment_errors(moments, plan.p)
    _log_levels(plan.kind, levels, errors, stderrs)
    return _rate_report(plan, levels, errors, stderrs, moments.shape[0], discards, len(plan.levels))


def temporal_rate_study(plan: StudyPlan) -> RateReport:
    """
    Strong error in time: levels m against the reference m on the space grid config.n.

    Args:
        plan (StudyPlan): A temporal_rate plan

    Returns:
        RateReport: Ladder errors plus the zero reference row
    """
    _require(plan, "temporal_rate")
    config, t, x = plan.config, plan.time, plan.x

    def one(index):
        master = generate(plan.seed, index, plan.reference, config.n, config.T)
        reference = point_value(config.at_level(m=plan.reference), master, t, x)
        values = [point_value(config.at_level(m=m), coupled(master, m, config.n), t, x)
                  for m in plan.levels]
        return np.abs(np.array(values + [reference]) - reference) ** plan.p

    with Timer(f"temporal_rate study ({plan.samples} samples)"):
        moments, discards = run_samples(one, range(plan.samples), plan.threads)
    levels = list(plan.levels) + [plan.reference]
    errors, stderrs = moment_errors(moments, plan.p)
    _log_levels(plan.kind, levels, errors, stderrs)
    return _rate_report(plan, levels, errors, stderrs, moments.shape[0], discards, len(plan.levels))


def _check_holder_gaps(plan: StudyPlan):
    config = plan.config
    if plan.kind == "holder_time":
        last = step_of(config, plan.time) - plan.levels[-1]
        if last < HOLDER_MARGIN:
            raise ValueError(f"time gap {plan.levels[-1]} reaches within {HOLDER_MARGIN} steps of t = 0")
    else:
        if plan.levels[0] < HOLDER_MIN_SPACE_GAP:
            raise ValueError(f"space gaps must be at least {HOLDER_MIN_SPACE_GAP} cells")
        far = plan.x + plan.levels[-1] * config.h
        if far > math.pi - HOLDER_MARGIN * config.h + 1e-12:
            raise ValueError(f"space gap {plan.levels[-1]} reaches within {HOLDER_MARGIN} cells "
                             f"of the boundary")


def holder_study(plan: StudyPlan) -> RateReport:
    """
    Mean-square increments E|u(t,x) - u(s,x)|^p over time gaps (holder_time)
    or E|u(t,x) - u(t,y)|^p over space gaps (holder_space) on one configuration.

    Levels are gaps in steps (time) or cells (space); the fitted slope is the
    exponent p * beta of the increments.

    Args:
        plan (StudyPlan): A holder_time or holder_space plan

    Returns:
        RateReport: Mean increments per gap, without root
    """
    _require(plan, "holder_time", "holder_space")
    _check_holder_gaps(plan)
    config, x = plan.config, plan.x
    end = step_of(config, plan.time)
    space = plan.kind == "holder_space"
    steps = {end} if space else {end} | {end - g for g in plan.levels}
    points = np.array([x] + [x + g * config.h for g in plan.levels]) if space else x

    def one(index):
        sheet = generate(plan.seed, index, config.m, config.n, config.T)
        wanted = {}
        for i, values in iterate_states(config, interior_increments(sheet, config.m, config.n)):
            if i in steps:
                wanted[i] = at_points(config, values, points)
            if i == end:
                break
        if space:
            at = wanted[end]
            return np.abs(at[1:] - at[0]) ** plan.p
        return np.array([abs(wanted[end] - wanted[end - g]) ** plan.p for g in plan.levels])

    with Timer(f"{plan.kind} study ({plan.samples} samples)"):
        moments, discards = run_samples(one, range(plan.samples), plan.threads)
    levels = list(plan.levels)
    means, stderrs = moment_errors(moments, plan.p, root=False)
    _log_levels(plan.kind, levels, means, stderrs)
    return _rate_report(plan, levels, means, stderrs, moments.shape[0], discards, len(levels))


def l1_density_distance(a: Sequence[float], b: Sequence[float], grid_points: int = 512) -> float:
    """
    L1 distance between Gaussian kernel density estimates of two sample sets.

    Both estimates use Silverman's bandwidth and are compared on a common grid
    reaching four bandwidths beyond the pooled samples; the integral is the
    trapezoid rule.

    Args:
        a (sequence): First samples
        b (sequence): Second samples
        grid_points (int): Evaluation points

    Returns:
        float: The distance, between 0 and 2

    Raises:
        DegenerateSampleError: If a sample set has zero variance
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for name, values in (("first", a), ("second", b)):
        if values.size < 2 or not np.std(values) > 0:
            logger.warning(f"{name} sample set has no spread, KDE bandwidth degenerates")
            raise DegenerateSampleError(f"{name} sample set has zero variance")
    kde_a = stats.gaussian_kde(a, bw_method="silverman")
    kde_b = stats.gaussian_kde(b, bw_method="silverman")
    reach = 4.0 * max(math.sqrt(kde_a.covariance[0, 0]), math.sqrt(kde_b.covariance[0, 0]))
    grid = np.linspace(min(a.min(), b.min()) - reach, max(a.max(), b.max()) + reach, grid_points)
    return float(integrate.trapezoid(np.abs(kde_a(grid) - kde_b(grid)), grid))


def density_study(plan: StudyPlan) -> DensityReport:
    """
    L1 distance between the law of u^{m,n}(t, x*) at each level and at the reference.

    Each level, the reference included, gets its own range of sample indices:
    densities compare laws, so the sample sets are independent. x* is snapped
    to the nearest node of every grid.

    Args:
        plan (StudyPlan): A density plan with at least 5000 samples

    Returns:
        DensityReport: Distances per level
    """
    _require(plan, "density")
    if plan.samples < DENSITY_MIN_SAMPLES:
        raise ValueError(f"density study needs at least {DENSITY_MIN_SAMPLES} samples")
    config, t = plan.config, plan.time
    levels = list(plan.levels) + [plan.reference]
    sets, discards = [], 0
    with Timer(f"density study ({plan.samples} samples per level)"):
        for position, n in enumerate(levels):
            level = config.at_level(n=n)
            x = level.h * round(plan.x / level.h)

            def one(index, level=level, x=x):
                return np.array([point_value(level, generate(plan.seed, index, level.m, level.n, level.T), t, x)])

            first = position * plan.samples
            values, dropped = run_samples(one, range(first, first + plan.samples), plan.threads)
            sets.append(values[:, 0])
            discards += dropped
    distances = [l1_density_distance(values, sets[-1]) for values in sets[:-1]]
    for n, distance in zip(plan.levels, distances):
        logger.info(f"density level {n}: L1 distance {distance:.4f}")
    monotone = is_monotone(distances, MONOTONE_TOLERANCE["density"])
    return DensityReport(list(plan.levels), plan.reference, distances, plan.samples, discards, monotone)


def malliavin_rate_study(plan: StudyPlan) -> RateReport:
    """
    Squared H-distance between the derivative at each coarse level and at the reference.

    The reference table is built once per sample and compared with the table of
    every level on the same time grid; the reference row compares it with itself.

    Args:
        plan (StudyPlan): A malliavin_rate plan, with config.m * reference <= 8192

    Returns:
        RateReport: Mean squared distances (no root) per level
    """
    _require(plan, "malliavin_rate")
    config, x = plan.config, plan.x
    check_budget(config.m, plan.reference)

    def one(index):
        master = generate(plan.seed, index, config.m, plan.reference, config.T)
        fine = tangent_table(config.at_level(n=plan.reference), master, x)
        values = [table_distance(tangent_table(config.at_level(n=n), coupled(master, config.m, n), x),
                                 fine, config.tau) for n in plan.levels]
        return np.array(values + [table_distance(fine, fine, config.tau)])

    with Timer(f"malliavin_rate study ({plan.samples} samples)"):
        values, discards = run_samples(one, range(plan.samples), plan.threads)
    levels = list(plan.levels) + [plan.reference]
    means, stderrs = moment_errors(values, 1.0, root=False)
    _log_levels(plan.kind, levels, means, stderrs)
    return _rate_report(plan, levels, means, stderrs, values.shape[0], discards, len(plan.levels))


def _localized_run(config: SolverConfig, sheet: SheetIncrements, x: float) -> Tuple[float, float]:
    # terminal value and the max-norm over every step
    peak, values = 0.0, None
    for _, values in iterate_states(config, interior_increments(sheet, config.m, config.n)):
        peak = max(peak, float(np.max(np.abs(values))) if values.size else 0.0)
    return at_points(config, values, x), peak


def localized_rate_study(plan: StudyPlan, R: float = 2.0) -> RateReport:
    """
    Spatial strong error for the cubic drift with cutoff K_R, restricted to the
    event that level and reference stay within R in max-norm at every step.

    The error at level n is E[1_{both within R} |u^n - u^{n_ref}|^p]^(1/p); the
    report also carries the fraction of samples on that event per level.

    Args:
        plan (StudyPlan): A localized_rate plan; its drift is replaced by K_R (x^3 - x)
        R (float): Cutoff radius

    Returns:
        RateReport: Ladder errors with retained fractions
    """
    _require(plan, "localized_rate")
    config = replace(plan.config, drift=ModelFactory().localized_drift(R))
    x = plan.x
    if plan.t is not None and not math.isclose(plan.time, config.T):
        raise ValueError("the localized study evaluates at the horizon only")

    def one(index):
        master = generate(plan.seed, index, config.m, plan.reference, config.T)
        reference, reference_peak = _localized_run(config.at_level(n=plan.reference), master, x)
        row = []
        for n in list(plan.levels) + [plan.reference]:
            if n == plan.reference:
                value, peak = reference, reference_peak
            else:
                value, peak = _localized_run(config.at_level(n=n), coupled(master, config.m, n), x)
            inside = peak <= R and reference_peak <= R
            row.extend([abs(value - reference) ** plan.p if inside else 0.0, float(inside)])
        return np.array(row)

    with Timer(f"localized_rate study ({plan.samples} samples, R={R})"):
        values, discards = run_samples(one, range(plan.samples), plan.threads)
    moments, flags = values[:, 0::2], values[:, 1::2]
    levels = list(plan.levels) + [plan.reference]
    errors, stderrs = moment_errors(moments, plan.p)
    retained = [float(f) for f in flags.mean(axis=0)]
    _log_levels(plan.kind, levels, errors, stderrs)
    logger.info(f"localized_rate: retained fraction {min(retained):.3f} at R={R}")
    return _rate_report(plan, levels, errors, stderrs, values.shape[0], discards,
                        len(plan.levels), retained)


def moment_profile(config: SolverConfig, samples: int, seed: int = 0,
                   threads: int = 1) -> MomentProfile:
    """
    E ||u^{m,n}(t_i)||_inf^2 for every grid time, the mean-square boundedness check.

    Args:
        config (SolverConfig): Run configuration
        samples (int): Number of samples
        seed (int): Master seed
        threads (int): Worker threads

    Returns:
        MomentProfile: Times and mean squares over the kept samples
    """
    if samples < 2:
        raise ValueError(f"at least two samples are required, got {samples}")

    def one(index):
        sheet = generate(seed, index, config.m, config.n, config.T)
        return np.array([float(np.max(values ** 2)) if values.size else 0.0
                         for _, values in iterate_states(config, interior_increments(sheet, config.m, config.n))])

    with Timer(f"moment profile ({samples} samples)"):
        squares, discards = run_samples(one, range(samples), threads)
    times = config.T * np.arange(config.m + 1) / config.m
    profile = MomentProfile(times, squares.mean(axis=0), squares.shape[0], discards)
    logger.info(f"moment profile: max E||u||^2 = {profile.maximum:.4f}")
    return profile


def kernel_error_study(ns: Sequence[int], T: float, xs: Sequence[float],
                       cfg: KernelConfig = KernelConfig(), threads: int = 1) -> KernelReport:
    """
    Both kernel error functionals over a ladder of n at several points x.

    Args:
        ns (sequence): Increasing levels, each doubling the previous one
        T (float): Time horizon of the integrals
        xs (sequence): Points x
        cfg (KernelConfig): Quadrature parameters
        threads (int): Worker threads

    Returns:
        KernelReport: One row per (kind, x, n); passes if every doubling ratio lies in
        its window and every value is resolved
    """
    ns = [int(n) for n in ns]
    if any(b != 2 * a for a, b in zip(ns, ns[1:])):
        raise ValueError(f"kernel levels must double, got {ns}")
    tasks = [(kind, float(x), n) for kind in ("l2", "l1_laplacian") for x in xs for n in ns]

    def one(task):
        kind, x, n = task
        return estimate_kernel_error(kind, n, T, x, cfg)

    with Timer(f"kernel errors ({len(tasks)} evaluations)"):
        with SamplePool(threads) as pool:
            estimates = pool.map(one, tasks)
    rows, slopes, passed = [], {}, True
    by_task = dict(zip(tasks, estimates))
    for kind in ("l2", "l1_laplacian"):
        window = ACCEPTANCE_WINDOWS[f"kernel_{kind}_ratio"]
        for x in xs:
            values = [by_task[(kind, float(x), n)].value for n in ns]
            for position, n in enumerate(ns):
                estimate = by_task[(kind, float(x), n)]
                ratio = values[position - 1] / values[position] if position else math.nan
                if position and not in_window(ratio, window):
                    passed = False
                passed = passed and estimate.resolved
                rows.append({"kind": kind, "x": float(x), "n": n, "error": estimate.value,
                             "refined": estimate.refined,
                             "relative_change": estimate.relative_change,
                             "resolved": estimate.resolved, "ratio": ratio})
                logger.info(f"{kind} kernel error n={n}, x={x:.4f}: {estimate.value:.4e}")
            key = f"{kind}@{float(x):.6f}"
            slopes[key] = fit_rate(ns, values)[0] if len(ns) >= 3 else math.nan
    return KernelReport(rows, slopes, passed)


def nondegeneracy_study(config: SolverConfig, samples: int, seed: int = 0, rho: float = 0.5,
                        x: float = math.pi / 2, threads: int = 1) -> NondegeneracyReport:
    """
    hnorm2 of u^{m,n}(T, x*) over a sample set and the estimate of E[hnorm2^(-rho)].

    Args:
        config (SolverConfig): Run configuration, with m * n <= 8192
        samples (int): Number of samples
        seed (int): Master seed
        rho (float): Exponent in (0, 1]
        x (float): Evaluation point
        threads (int): Worker threads

    Returns:
        NondegeneracyReport: Records, their minimum and the negative moment
    """
    check_budget(config.m, config.n)

    def one(index):
        return np.array([hnorm2_at(config, generate(seed, index, config.m, config.n, config.T), x).hnorm2])

    with Timer(f"nondegeneracy study ({samples} samples)"):
        values, discards = run_samples(one, range(samples), threads)
    norms = values[:, 0]
    records = [MalliavinRecord(float(value), x, index) for index, value in enumerate(norms)]
    estimate = negative_moment_estimate(records, rho=rho)
    report = NondegeneracyReport(norms, estimate, discards)
    logger.info(f"nondegeneracy: min hnorm2 {report.minimum:.4e}, "
                f"E[hnorm2^-{rho}] = {estimate.mean:.4f} +- {estimate.stderr:.1e}")
    return report


def _check_transforms() -> List[Check]:
    worst = 0.0
    for n in ORTHONORMALITY_LEVELS:
        matrix = build_basis(n).matrix
        worst = max(worst, float(np.max(np.abs(matrix @ matrix.T - np.eye(n - 1)))))
    basis = build_basis(4096)
    v = np.random.default_rng(0).standard_normal(4095)
    round_trip = float(np.max(np.abs(basis.inverse(basis.forward(v)) - v)))
    return [Check("dst_orthonormality", worst, 1e-12), Check("dst_round_trip", round_trip, 1e-12)]


def _check_eigenpairs() -> List[Check]:
    basis = build_basis(64)
    residual = basis.stencil_matrix() @ basis.matrix.T - basis.matrix.T * basis.eigenvalues
    gap = np.abs(basis.continuous_eigenvalues - basis.eigenvalues) - basis.eigenvalue_gap_bound(basis.modes)
    return [Check("eigen_residual", float(np.max(np.abs(residual))), 1e-10),
            Check("eigenvalue_gap", float(np.max(gap)), 1e-12)]


def _check_cutoff() -> List[Check]:
    cutoff = Cutoff(2.0)
    x = np.linspace(-5.0, 5.0, 20001)
    slope = float(np.max(np.abs(cutoff.derivative(x))))
    plateau = float(np.max(np.abs(cutoff(x[np.abs(x) <= 2.0]) - 1.0)))
    outside = float(np.max(np.abs(cutoff(x[np.abs(x) >= 3.0]))))
    return [Check("cutoff_derivative", slope, 2.0), Check("cutoff_support", max(plateau, outside), 1e-12)]


def _check_linear_exactness() -> List[Check]:
    worst = 0.0
    for n in (4, 16, 64):
        for m in (1, 7, 64):
            config = SolverConfig(n, m, 0.3, drift=ZeroDrift(), diffusion=ConstantDiffusion(0.0))
            terminal = simulate(config, generate(0, 0, m, n, 0.3)).terminal
            lam1 = build_basis(n).eigenvalues[0]
            expected = math.exp(-lam1 ** 2 * 0.3) * np.sin(config.mesh.interior_nodes)
            worst = max(worst, float(np.max(np.abs(terminal.values - expected))))
    return [Check("linear_exactness", worst, 1e-10)]


def _check_tangents() -> List[Check]:
    config = SolverConfig(8, 8, 0.1)
    sheet = generate(5, 0, 8, 8, 0.1)
    x = math.pi / 2
    table = tangent_table(config, sheet, x)
    base_increments = interior_increments(sheet, 8, 8)
    base = interpolate(simulate_increments(config, base_increments).terminal, x)
    rng = np.random.default_rng(8)
    eps, worst = 1e-6, 0.0
    for _ in range(5):
        i, k = int(rng.integers(0, 8)), int(rng.integers(1, 8))
        bumped = np.array(base_increments)
        bumped[i, k - 1] += eps
        quotient = (interpolate(simulate_increments(config, bumped).terminal, x) - base) / eps
        worst = max(worst, abs(quotient - table[i, k - 1]) / max(abs(table[i, k - 1]), 1e-6))
    return [Check("tangent_finite_difference", worst, 1e-3)]


def _check_coupling() -> List[Check]:
    master = generate(0, 0, 256, 64, 0.1)
    coarse = coarsen(master, 4, 4)
    drift = abs(coarse.checksum() - master.checksum())
    variance = float(np.var(coarse.dW) / coarse.cell_variance)
    return [Check("coupling_checksum", drift, 1e-12), Check("coarse_variance_ratio",
                                                            abs(variance - 1.0), 0.25)]


VALIDATION_CHECKS = (_check_transforms, _check_eigenpairs, _check_cutoff,
                     _check_linear_exactness, _check_tangents, _check_coupling)


def validation_suite() -> ValidationReport:
    """
    The fast invariant checks: transforms, eigenpairs, cutoff, linear exactness,
    tangent finite differences and noise coupling.

    Returns:
        ValidationReport: Every check with its measured value and tolerance
    """
    checks = []
    with Timer("validation suite"):
        for run in VALIDATION_CHECKS:
            for check in run():
                level = logging.INFO if check.passed else logging.WARNING
                logger.log(level, f"{check.name}: {check.value:.3e} (tolerance {check.tolerance:.1e})")
                checks.append(check)
    return ValidationReport(checks)
