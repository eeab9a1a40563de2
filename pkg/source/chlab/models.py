"""
Coefficients of the equation: drift nonlinearities f, diffusion coefficients
sigma, the smooth cutoff K_R and initial data u_0.

All model objects are immutable and evaluate vectorised over numpy arrays.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)


class Drift(ABC):
    """
    Abstract base class for drift nonlinearities f.
    """

    name = "drift"

    @abstractmethod
    def __call__(self, x):
        """
        Evaluate f pointwise.

        Args:
            x (float or ndarray): Arguments

        Returns:
            float or ndarray: f(x)
        """

    @abstractmethod
    def derivative(self, x):
        """f'(x), pointwise."""

    @property
    def lipschitz_constant(self) -> Optional[float]:
        """Global Lipschitz constant K, or None when f is not globally Lipschitz."""
        return None

    @property
    def is_lipschitz(self) -> bool:
        return self.lipschitz_constant is not None

    @property
    @abstractmethod
    def growth_constant(self) -> float:
        """K_0 with |f(x)| <= K_0 (1 + |x|^3)."""

    def params(self) -> Dict[str, float]:
        return {}

    def to_dict(self) -> dict:
        """Name and parameters, as written in config files."""
        return {"name": self.name, **self.params()}

    def __repr__(self):
        args = ", ".join(f"{key}={value}" for key, value in self.params().items())
        return f"{type(self).__name__}({args})"


class ZeroDrift(Drift):
    """f = 0."""

    name = "zero"

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    @property
    def lipschitz_constant(self) -> float:
        return 0.0

    @property
    def growth_constant(self) -> float:
        return 0.0


class ScaledSineDrift(Drift):
    """f(x) = a sin(x)."""

    name = "scaled_sine"

    def __init__(self, a: float = 1.0):
        self._a = float(a)

    def __call__(self, x):
        return self._a * np.sin(x)

    def derivative(self, x):
        return self._a * np.cos(x)

    @property
    def lipschitz_constant(self) -> float:
        return abs(self._a)

    @property
    def growth_constant(self) -> float:
        return abs(self._a)

    def params(self):
        return {"a": self._a}


class LipschitzRationalDrift(Drift):
    """f(x) = a x / (1 + x^2), Lipschitz with constant |a| (attained at 0)."""

    name = "lipschitz_rational"

    def __init__(self, a: float = 1.0):
        self._a = float(a)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._a * x / (1.0 + x * x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return self._a * (1.0 - x * x) / (1.0 + x * x) ** 2

    @property
    def lipschitz_constant(self) -> float:
        return abs(self._a)

    @property
    def growth_constant(self) -> float:
        return abs(self._a) / 2.0

    def params(self):
        return {"a": self._a}


class CubicDrift(Drift):
    """
    f(x) = a0 x^3 + a1 x^2 + a2 x + a3 with a0 > 0.

    Not globally Lipschitz; simulated only through :class:`CutoffCubicDrift`.

    Raises:
        ValueError: If a0 <= 0
    """

    name = "cubic"

    def __init__(self, a0: float, a1: float = 0.0, a2: float = 0.0, a3: float = 0.0):
        if not a0 > 0:
            raise ValueError(f"cubic drift needs a0 > 0, got {a0}")
        self._coefficients = (float(a0), float(a1), float(a2), float(a3))

    @property
    def coefficients(self) -> Tuple[float, float, float, float]:
        return self._coefficients

    def __call__(self, x):
        a0, a1, a2, a3 = self._coefficients
        x = np.asarray(x, dtype=float)
        return ((a0 * x + a1) * x + a2) * x + a3

    def derivative(self, x):
        a0, a1, a2, _ = self._coefficients
        x = np.asarray(x, dtype=float)
        return (3.0 * a0 * x + 2.0 * a1) * x + a2

    @property
    def growth_constant(self) -> float:
        # |x|^k <= 1 + |x|^3 for k <= 3
        return float(sum(abs(a) for a in self._coefficients))

    def params(self):
        return dict(zip(("a0", "a1", "a2", "a3"), self._coefficients))


class Cutoff:
    """
    Even C^1 cutoff K_R: 1 on |x| < R, 0 on |x| >= R+1, quintic smoothstep between.

    Args:
        R (float): Plateau radius, at least 1

    Raises:
        ValueError: If R < 1
    """

    def __init__(self, R: float = 2.0):
        if not R >= 1:
            raise ValueError(f"cutoff radius R must be >= 1, got {R}")
        self._R = float(R)

    @property
    def R(self) -> float:
        return self._R

    @staticmethod
    def _ramp(t):
        return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))

    @staticmethod
    def _ramp_derivative(t):
        return 30.0 * t * t * (1.0 - t) ** 2

    def _band(self, x):
        return np.clip(np.abs(np.asarray(x, dtype=float)) - self._R, 0.0, 1.0)

    def __call__(self, x):
        return 1.0 - self._ramp(self._band(x))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return -np.sign(x) * self._ramp_derivative(self._band(x))

    def __repr__(self):
        return f"Cutoff(R={self._R})"


class CutoffCubicDrift(Drift):
    """
    Localised cubic f_R = K_R * f; equals the cubic on |x| < R.

    Args:
        cubic (CubicDrift): The cubic being localised
        cutoff (Cutoff): The cutoff K_R
    """

    name = "cubic_cutoff"

    # sampling density for the Lipschitz constant, per unit length
    _SAMPLES_PER_UNIT = 4000

    def __init__(self, cubic: CubicDrift, cutoff: Cutoff):
        self.cubic = cubic
        self.cutoff = cutoff
        self._lipschitz = None

    def __call__(self, x):
        return self.cutoff(x) * self.cubic(x)

    def derivative(self, x):
        return self.cutoff.derivative(x) * self.cubic(x) + self.cutoff(x) * self.cubic.derivative(x)

    @property
    def lipschitz_constant(self) -> float:
        """max |f_R'| by dense sampling, refined with a bounded scalar search."""
        if self._lipschitz is None:
            self._lipschitz = self._compute_lipschitz()
        return self._lipschitz

    def _compute_lipschitz(self) -> float:
        bound = self.cutoff.R + 1.0
        count = int(2 * bound * self._SAMPLES_PER_UNIT) + 1
        x = np.linspace(-bound, bound, count)
        slopes = np.abs(self.derivative(x))
        best = int(np.argmax(slopes))
        lo, hi = x[max(best - 1, 0)], x[min(best + 1, count - 1)]
        result = optimize.minimize_scalar(lambda y: -abs(float(self.derivative(y))),
                                          bounds=(lo, hi), method="bounded",
                                          options={"xatol": 1e-12})
        constant = max(float(slopes[best]), -float(result.fun))
        logger.debug(f"Lipschitz constant of {self!r}: {constant:.6g}")
        return constant

    @property
    def growth_constant(self) -> float:
        return self.cubic.growth_constant

    def params(self):
        return {**self.cubic.params(), "R": self.cutoff.R}


class Diffusion(ABC):
    """
    Abstract base class for bounded Lipschitz diffusion coefficients sigma.
    """

    name = "diffusion"

    @abstractmethod
    def __call__(self, x):
        """sigma(x), pointwise."""

    @abstractmethod
    def derivative(self, x):
        """sigma'(x), pointwise."""

    @property
    @abstractmethod
    def bound(self) -> float:
        """sup |sigma|."""

    @property
    @abstractmethod
    def lipschitz_constant(self) -> float:
        pass

    @property
    @abstractmethod
    def sigma0(self) -> float:
        """inf |sigma|; positive exactly when sigma is nondegenerate."""

    @property
    def is_nondegenerate(self) -> bool:
        return self.sigma0 > 0

    def params(self) -> Dict[str, float]:
        return {}

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params()}

    def __repr__(self):
        args = ", ".join(f"{key}={value}" for key, value in self.params().items())
        return f"{type(self).__name__}({args})"


class ConstantDiffusion(Diffusion):
    """sigma(x) = c; c = 0 switches the noise off."""

    name = "constant"

    def __init__(self, c: float = 1.0):
        self._c = float(c)

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self._c)

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    @property
    def bound(self) -> float:
        return abs(self._c)

    @property
    def lipschitz_constant(self) -> float:
        return 0.0

    @property
    def sigma0(self) -> float:
        return abs(self._c)

    def params(self):
        return {"c": self._c}


class ShiftedSineDiffusion(Diffusion):
    """
    sigma(x) = b + a sin(x) with |a| < b.

    Raises:
        ValueError: If |a| >= b
    """

    name = "shifted_sine"

    def __init__(self, b: float = 1.0, a: float = 0.5):
        if not abs(a) < b:
            raise ValueError(f"shifted_sine diffusion needs |a| < b, got b={b}, a={a}")
        self._b = float(b)
        self._a = float(a)

    def __call__(self, x):
        return self._b + self._a * np.sin(x)

    def derivative(self, x):
        return self._a * np.cos(x)

    @property
    def bound(self) -> float:
        return self._b + abs(self._a)

    @property
    def lipschitz_constant(self) -> float:
        return abs(self._a)

    @property
    def sigma0(self) -> float:
        return self._b - abs(self._a)

    def params(self):
        return {"b": self._b, "a": self._a}


class InitialData(ABC):
    """
    Abstract base class for initial data u_0 on [0, pi].
    """

    name = "initial"

    @abstractmethod
    def __call__(self, x):
        """u_0(x), pointwise."""

    @abstractmethod
    def second_derivative(self, x):
        """u_0''(x), pointwise."""

    def check_compatibility(self, tol: float = 1e-12) -> bool:
        """
        Check u_0 = u_0'' = 0 at both ends of [0, pi].

        Args:
            tol (float): Absolute tolerance

        Returns:
            bool: True if all four boundary values are within tol of zero
        """
        ends = np.array([0.0, math.pi])
        residual = max(np.max(np.abs(self(ends))), np.max(np.abs(self.second_derivative(ends))))
        return bool(residual <= tol)

    def to_dict(self) -> dict:
        return {"name": self.name}


class SineCombo(InitialData):
    """
    u_0(x) = sum a_j sin(j x) over a finite list of (j, a_j).

    Raises:
        ValueError: If a mode number is not a positive integer
    """

    name = "sine_combo"

    def __init__(self, terms: Iterable[Sequence[float]] = ()):
        terms = tuple((int(j), float(a)) for j, a in terms)
        for j, _ in terms:
            if j < 1:
                raise ValueError(f"mode numbers must be positive, got {j}")
        self._terms = terms

    @property
    def terms(self) -> Tuple[Tuple[int, float], ...]:
        return self._terms

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j, a in self._terms:
            total = total + a * np.sin(j * x)
        return total

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j, a in self._terms:
            total = total - a * j * j * np.sin(j * x)
        return total

    def to_dict(self):
        return {"name": self.name, "terms": [[j, a] for j, a in self._terms]}

    def __repr__(self):
        return f"{type(self).__name__}({list(self._terms)})"


class SineMode(SineCombo):
    """u_0(x) = a sin(j x)."""

    name = "sine_mode"

    def __init__(self, j: int = 1, a: float = 1.0):
        super().__init__([(j, a)])

    def to_dict(self):
        (j, a), = self.terms
        return {"name": self.name, "j": j, "a": a}


def eval_drift(d: Drift, x):
    return d(x)


def eval_drift_prime(d: Drift, x):
    return d.derivative(x)


def eval_diffusion(s: Diffusion, x):
    return s(x)


def eval_diffusion_prime(s: Diffusion, x):
    return s.derivative(x)


def eval_cutoff(cutoff: Cutoff, x):
    return cutoff(x)


def lipschitz_estimate(d: Drift, interval: Tuple[float, float], samples: int) -> float:
    """
    Largest difference quotient between adjacent sample points.

    The result is a lower bound of the true Lipschitz constant on the interval.

    Args:
        d (Drift): Drift to probe
        interval (tuple): (lo, hi) with lo < hi
        samples (int): Number of equispaced points, at least 2

    Returns:
        float: max |f(y) - f(z)| / |y - z| over adjacent points

    Raises:
        ValueError: If lo >= hi or samples < 2
    """
    lo, hi = interval
    if not lo < hi:
        raise ValueError(f"interval must satisfy lo < hi, got {interval}")
    if samples < 2:
        raise ValueError(f"need at least 2 samples, got {samples}")
    x = np.linspace(lo, hi, int(samples))
    return float(np.max(np.abs(np.diff(d(x)) / np.diff(x))))


class ModelFactory:
    """
    Factory building model objects from the names used in config files.
    """

    def create_drift(self, name: str, **params) -> Drift:
        """
        Create a drift by name.

        Args:
            name (str): zero, scaled_sine, lipschitz_rational, cubic or cubic_cutoff
            **params: Parameters of the variant (a; a0..a3; R)

        Returns:
            Drift: The drift

        Raises:
            ValueError: If the name or a parameter is not valid
        """
        if name == "zero":
            return ZeroDrift(**params)
        if name == "scaled_sine":
            return ScaledSineDrift(**params)
        if name == "lipschitz_rational":
            return LipschitzRationalDrift(**params)
        if name == "cubic":
            return CubicDrift(**params)
        if name == "cubic_cutoff":
            params = dict(params)
            cutoff = Cutoff(params.pop("R", 2.0))
            return CutoffCubicDrift(CubicDrift(**params), cutoff)
        raise ValueError(f"unknown drift: {name}")

    def create_diffusion(self, name: str, **params) -> Diffusion:
        """Create a diffusion coefficient by name (constant or shifted_sine)."""
        if name == "constant":
            return ConstantDiffusion(**params)
        if name == "shifted_sine":
            return ShiftedSineDiffusion(**params)
        raise ValueError(f"unknown diffusion: {name}")

    def create_initial(self, name: str, **params) -> InitialData:
        """Create initial data by name (sine_mode or sine_combo)."""
        if name == "sine_mode":
            return SineMode(**params)
        if name == "sine_combo":
            return SineCombo(**params)
        raise ValueError(f"unknown initial data: {name}")

    def create_from_dict(self, kind: str, spec: dict):
        """Inverse of ``to_dict`` for kind in {drift, diffusion, initial}."""
        spec = dict(spec)
        name = spec.pop("name")
        creators = {"drift": self.create_drift, "diffusion": self.create_diffusion,
                    "initial": self.create_initial}
        if kind not in creators:
            raise ValueError(f"unknown model kind: {kind}")
        return creators[kind](name, **spec)

    def default_drift(self) -> Drift:
        """f = sin."""
        return ScaledSineDrift(1.0)

    def default_diffusion(self) -> Diffusion:
        """sigma = 1 + 0.5 sin."""
        return ShiftedSineDiffusion(1.0, 0.5)

    def default_initial(self) -> InitialData:
        """u_0 = sin."""
        return SineMode(1, 1.0)

    def localized_drift(self, R: float = 2.0) -> CutoffCubicDrift:
        """K_R (x^3 - x)."""
        return CutoffCubicDrift(CubicDrift(1.0, 0.0, -1.0, 0.0), Cutoff(R))
