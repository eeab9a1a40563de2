"""
Green functions of the biharmonic heat semigroup and of its finite
difference counterpart, with the quadratures and closed-form sums used to
measure kernel errors and kernel regularity.

    G_t(x, y)   = sum_j exp(-j^4 t) phi_j(x) phi_j(y),       phi_j = sqrt(2/pi) sin(j.)
    G^n_t(x, y) = sum_{j<n} exp(-lambda_{j,n}^2 t) phi_{j,n}(x) phi_j(kappa_n(y))

phi_{j,n} is the polygonal interpolant of phi_j and kappa_n(y) = h floor(y/h).
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from .errors import DomainError, QuadratureResolutionError
from .grid import SpectralBasis, build_basis

logger = logging.getLogger(__name__)

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# relative change under node doubling above which a quadrature is unresolved
RESOLUTION_TOLERANCE = 0.05


@dataclass(frozen=True)
class KernelConfig:
    """
    Truncation and quadrature parameters.

    Args:
        tail_tol (float): Series truncation tolerance
        J_max (int): Cap on the number of modes of the exact kernel
        time_nodes (int): Graded time cells K_t
        grading (float): Grading exponent, nodes s_k = T (k/K_t)^grading
        space_nodes (int): Minimum number of space cells K_y (rounded up to a multiple of n)
    """

    tail_tol: float = 1e-12
    J_max: int = 4096
    time_nodes: int = 256
    grading: float = 2.0
    space_nodes: int = 2048

    def __post_init__(self):
        if not self.tail_tol > 0:
            raise ValueError(f"tail_tol must be positive, got {self.tail_tol}")
        if self.J_max < 8:
            raise ValueError(f"J_max must be at least 8, got {self.J_max}")
        if self.grading < 1:
            raise ValueError(f"grading exponent must be at least 1, got {self.grading}")
        if self.time_nodes < 1 or self.space_nodes < 1:
            raise ValueError("quadrature node counts must be positive")

    def refined(self) -> "KernelConfig":
        """Same config with both node counts doubled."""
        return KernelConfig(self.tail_tol, self.J_max, 2 * self.time_nodes,
                            self.grading, 2 * self.space_nodes)


@dataclass(frozen=True)
class KernelErrorEstimate:
    """A kernel error with its self-convergence check."""

    value: float
    refined: float
    relative_change: float
    resolved: bool


@dataclass(frozen=True)
class RegularityIntegrals:
    """
    The three kernel integrals bounding the regularity of mild solutions.

    spatial:  int_0^t int |K_r(x,z) - K_r(y,z)|^2 dz dr
    temporal: int_0^s int |K_{t-r}(x,z) - K_{s-r}(x,z)|^2 dz dr
    tail:     int_s^t int |K_{t-r}(x,z)|^2 dz dr
    """

    spatial: float
    temporal: float
    tail: float


def truncation_index(t: float, cfg: KernelConfig) -> int:
    """
    Number of modes kept in the exact series at time t, capped at J_max.

    J is the first index past which j^2 exp(-j^4 t) decreases and whose tail
    bound exp(-J^4 t) / (4 t J) is below tail_tol. The dropped tail of both G
    and Delta G is then below tail_tol, and exp(-2 J^4 t) J <= tail_tol holds.
    """
    j = np.arange(1, cfg.J_max + 1, dtype=float)
    decreasing = 2.0 * t * j ** 4 >= 1.0
    tail = np.exp(-j ** 4 * t) / (4.0 * t * j)
    below = np.nonzero(decreasing & (tail <= cfg.tail_tol)
                       & (np.exp(-2.0 * j ** 4 * t) * j <= cfg.tail_tol))[0]
    if below.size == 0:
        logger.debug(f"exact kernel at t={t:g} truncated at J_max={cfg.J_max}")
        return cfg.J_max
    return int(below[0]) + 1


def _check_points(*points) -> Tuple[np.ndarray, ...]:
    checked = []
    for p in points:
        p = np.asarray(p, dtype=float)
        if np.any(p < -1e-12) or np.any(p > math.pi + 1e-12):
            raise DomainError("kernel arguments must lie in [0, pi]")
        checked.append(np.clip(p, 0.0, math.pi))
    return tuple(checked)


def _modes(x: np.ndarray, count: int) -> np.ndarray:
    return SQRT_2_OVER_PI * np.sin(np.multiply.outer(x, np.arange(1, count + 1)))


def _exact_series(t: float, x, y, cfg: KernelConfig, power: int):
    if not t > 0:
        raise DomainError(f"exact kernel needs t > 0, got {t}")
    x, y = _check_points(x, y)
    count = truncation_index(t, cfg)
    j = np.arange(1, count + 1, dtype=float)
    weights = np.exp(-j ** 4 * t) * (-j ** 2) ** power
    value = np.sum(weights * _modes(x, count) * _modes(y, count), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def exact_kernel(t: float, x, y, cfg: KernelConfig = KernelConfig()):
    """
    G_t(x, y), truncated adaptively.

    Args:
        t (float): Time, positive
        x, y (float or ndarray): Points of [0, pi], broadcast against each other
        cfg (KernelConfig): Truncation parameters

    Returns:
        float or ndarray: Kernel values

    Raises:
        DomainError: If t <= 0 or a point is outside [0, pi]
    """
    return _exact_series(t, x, y, cfg, power=0)


def exact_laplacian_kernel(t: float, x, y, cfg: KernelConfig = KernelConfig()):
    """Delta G_t(x, y) = sum_j (-j^2) exp(-j^4 t) phi_j(x) phi_j(y)."""
    return _exact_series(t, x, y, cfg, power=1)


def _discrete_series(t: float, x, y, basis: SpectralBasis, power: int):
    if t < 0:
        raise DomainError(f"discrete kernel needs t >= 0, got {t}")
    lam = basis.eigenvalues
    weights = np.exp(-lam ** 2 * t) * lam ** power
    value = np.sum(weights * basis.polygonal_modes(x) * basis.grid_modes(y), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def discrete_kernel(t: float, x, y, basis: SpectralBasis):
    """
    G^n_t(x, y) of the semi-discrete scheme.

    Args:
        t (float): Time, non-negative
        x, y (float or ndarray): Points of [0, pi]
        basis (SpectralBasis): Basis of the level n

    Returns:
        float or ndarray: Kernel values; zero for x in {0, pi}
    """
    return _discrete_series(t, x, y, basis, power=0)


def discrete_laplacian_kernel(t: float, x, y, basis: SpectralBasis):
    """Delta_n G^n_t(x, y): the discrete kernel with mode weights lambda_{j,n}."""
    return _discrete_series(t, x, y, basis, power=1)


def _time_cells(T: float, cfg: KernelConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Midpoints and widths of the graded cells [T (k/K)^g, T ((k+1)/K)^g]."""
    edges = T * (np.arange(cfg.time_nodes + 1) / cfg.time_nodes) ** cfg.grading
    return 0.5 * (edges[1:] + edges[:-1]), np.diff(edges)


def _space_cells(n: int, cfg: KernelConfig) -> Tuple[np.ndarray, float]:
    """Midpoints of K_y equal cells, K_y the least multiple of n >= space_nodes."""
    count = n * max(1, math.ceil(cfg.space_nodes / n))
    width = math.pi / count
    return width * (np.arange(count) + 0.5), width


def _kernel_difference(n: int, T: float, x: float, cfg: KernelConfig, power: int) -> np.ndarray:
    """Table of K^n_s(x, y) - K_s(x, y) over time and space midpoints."""
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    basis = build_basis(n)
    (x,) = _check_points(x)
    times, _ = _time_cells(T, cfg)
    ys, _ = _space_cells(n, cfg)

    lam = basis.eigenvalues
    discrete_weights = np.exp(-np.multiply.outer(times, lam ** 2)) * lam ** power
    discrete = (discrete_weights * basis.polygonal_modes(x)) @ basis.grid_modes(ys).T

    count = truncation_index(float(times[0]), cfg)
    j = np.arange(1, count + 1, dtype=float)
    exact_weights = np.exp(-np.multiply.outer(times, j ** 4)) * (-j ** 2) ** power
    exact = (exact_weights * _modes(x, count)) @ _modes(ys, count).T
    return discrete - exact


def _integrate(table: np.ndarray, n: int, T: float, cfg: KernelConfig) -> float:
    _, dt = _time_cells(T, cfg)
    _, dy = _space_cells(n, cfg)
    return float(dt @ table.sum(axis=1) * dy)


def _l2_value(n, T, x, cfg):
    return _integrate(_kernel_difference(n, T, x, cfg, power=0) ** 2, n, T, cfg)


def _l1_laplacian_value(n, T, x, cfg):
    return _integrate(np.abs(_kernel_difference(n, T, x, cfg, power=1)), n, T, cfg)


_KINDS = {"l2": _l2_value, "l1_laplacian": _l1_laplacian_value}


def estimate_kernel_error(kind: str, n: int, T: float, x: float = math.pi / 2,
                          cfg: KernelConfig = KernelConfig()) -> KernelErrorEstimate:
    """
    Evaluate a kernel error and repeat it with doubled node counts.

    Args:
        kind (str): ``l2`` or ``l1_laplacian``
        n (int): Level of the discrete kernel
        T (float): Upper limit of the time integral
        x (float): Fixed first argument
        cfg (KernelConfig): Quadrature parameters

    Returns:
        KernelErrorEstimate: Both values, their relative change and the resolved flag

    Raises:
        ValueError: If kind is unknown
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown kernel error kind: {kind}")
    value = _KINDS[kind](n, T, x, cfg)
    refined = _KINDS[kind](n, T, x, cfg.refined())
    change = abs(refined - value) / abs(refined) if refined else 0.0
    resolved = change <= RESOLUTION_TOLERANCE
    if not resolved:
        logger.warning(f"{kind} kernel error at n={n}, x={x:.4f} moved by "
                       f"{change:.1%} under node doubling")
    return KernelErrorEstimate(value, refined, change, resolved)


def _checked(kind, n, T, x, cfg, strict):
    if not strict:
        return _KINDS[kind](n, T, x, cfg)
    estimate = estimate_kernel_error(kind, n, T, x, cfg)
    if not estimate.resolved:
        raise QuadratureResolutionError(
            f"{kind} kernel error at n={n} not resolved ({estimate.relative_change:.1%})")
    return estimate.value


def kernel_error_l2(n: int, T: float, cfg: KernelConfig = KernelConfig(),
                    x: float = math.pi / 2, strict: bool = False) -> float:
    """
    int_0^T int_0^pi |G^n_s(x, y) - G_s(x, y)|^2 dy ds.

    Time uses midpoints of graded cells, space uses a composite midpoint rule
    whose cells nest in the cells of the level n.

    Args:
        n (int): Level
        T (float): Horizon
        cfg (KernelConfig): Quadrature parameters
        x (float): Fixed first argument
        strict (bool): Raise when doubling the nodes moves the value by more than 5%

    Returns:
        float: Non-negative quadrature value

    Raises:
        QuadratureResolutionError: In strict mode, if the value is not resolved
    """
    return _checked("l2", n, T, x, cfg, strict)


def kernel_error_l1_laplacian(n: int, T: float, cfg: KernelConfig = KernelConfig(),
                              x: float = math.pi / 2, strict: bool = False) -> float:
    """int_0^T int_0^pi |Delta_n G^n_s(x, y) - Delta G_s(x, y)| dy ds; see :func:`kernel_error_l2`."""
    return _checked("l1_laplacian", n, T, x, cfg, strict)


def _regularity_sums(weights_x, weights_y, lam2, s, t) -> RegularityIntegrals:
    if s < 0 or t < s:
        raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
    def grow(r):
        # int_0^r exp(-2 lam2 u) du; expm1 keeps small r accurate
        return -np.expm1(-2.0 * lam2 * r) / (2.0 * lam2)

    spatial = np.sum((weights_x - weights_y) ** 2 * grow(t))
    temporal = np.sum(weights_x ** 2 * np.expm1(-lam2 * (t - s)) ** 2 * grow(s))
    tail = np.sum(weights_x ** 2 * grow(t - s))
    return RegularityIntegrals(float(spatial), float(temporal), float(tail))


def discrete_regularity_integrals(n: int, s: float, t: float, x: float, y: float,
                                  basis: Optional[SpectralBasis] = None) -> RegularityIntegrals:
    """
    Closed-form regularity integrals of the discrete kernel G^n.

    The space integral of a product of kernels collapses to a sum over modes,
    and each time integral is an exponential integral per mode.

    Args:
        n (int): Level
        s, t (float): Times with 0 <= s <= t
        x, y (float): Points of [0, pi]
        basis (SpectralBasis, optional): Prebuilt basis of the level n

    Returns:
        RegularityIntegrals: spatial, temporal and tail integrals
    """
    basis = basis if basis is not None else build_basis(n)
    if basis.n != n:
        raise ValueError(f"basis is built for n={basis.n}, not {n}")
    return _regularity_sums(basis.polygonal_modes(x), basis.polygonal_modes(y),
                            basis.eigenvalues ** 2, s, t)


def exact_regularity_integrals(s: float, t: float, x: float, y: float,
                               cfg: KernelConfig = KernelConfig()) -> RegularityIntegrals:
    """The same integrals for the exact kernel G, summed over J_max modes."""
    x, y = _check_points(x, y)
    j = np.arange(1, cfg.J_max + 1, dtype=float)
    return _regularity_sums(_modes(x, cfg.J_max), _modes(y, cfg.J_max), j ** 4, s, t)


def laplacian_envelope_fit(x: float, times, cfg: KernelConfig = KernelConfig()) -> Tuple[float, float]:
    """
    Fit |Delta G_t(x, x)| ~ C t^p on a log-log scale.

    Args:
        x (float): Diagonal point
        times (array_like): Positive times
        cfg (KernelConfig): Truncation parameters

    Returns:
        tuple: (fitted exponent p, smallest C with |Delta G_t(x, x)| <= C t^(-3/4) on the times)
    """
    times = np.asarray(times, dtype=float)
    values = np.abs([exact_laplacian_kernel(t, x, x, cfg) for t in times])
    fit = stats.linregress(np.log(times), np.log(values))
    constant = float(np.max(values * times ** 0.75))
    return float(fit.slope), constant
