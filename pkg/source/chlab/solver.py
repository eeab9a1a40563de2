"""
Exponential Euler full discretization of the finite difference system

    dU = -A_n^2 U dt + A_n F(U) dt + sqrt(n/pi) Sigma(U) dbeta

on the interior nodes. One step of size tau = T/m reads

    U+ = E_tau [ U + tau A_n F(U) + sqrt(n/pi) sigma(U) o dbeta ],   E_tau = exp(-A_n^2 tau),

carried out in the sine basis where A_n is diagonal with entries lambda_{j,n}.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy import integrate

from .errors import MeshMismatchError, SampleOverflowError
from .grid import Field, Mesh, SpectralBasis, build_basis
from .models import Diffusion, Drift, InitialData, ModelFactory
from .noise import SheetIncrements, coarsen_to, to_beta

logger = logging.getLogger(__name__)

# a state beyond this max-norm counts as blown up
OVERFLOW_NORM = 1e12

_factory = ModelFactory()


class RecordPolicy:
    """
    Which time indices of a run are kept.

    Use :meth:`terminal_only`, :meth:`all_steps`, :meth:`stride` or :meth:`parse`.
    """

    def __init__(self, stride: Optional[int]):
        if stride is not None and stride < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        self._stride = stride

    @classmethod
    def terminal_only(cls) -> "RecordPolicy":
        return cls(None)

    @classmethod
    def all_steps(cls) -> "RecordPolicy":
        return cls(1)

    @classmethod
    def stride(cls, s: int) -> "RecordPolicy":
        return cls(int(s))

    @classmethod
    def parse(cls, text: str) -> "RecordPolicy":
        """Read ``terminal_only``, ``all_steps`` or ``stride:<s>``."""
        if text == "terminal_only":
            return cls.terminal_only()
        if text == "all_steps":
            return cls.all_steps()
        if text.startswith("stride:"):
            try:
                return cls.stride(int(text.split(":", 1)[1]))
            except ValueError:
                pass
        raise ValueError(f"unknown record policy: {text!r}")

    def indices(self, m: int) -> List[int]:
        """Recorded step indices of a run with m steps; m is always included."""
        if self._stride is None:
            return [m]
        kept = list(range(0, m + 1, self._stride))
        if kept[-1] != m:
            kept.append(m)
        return kept

    def __str__(self):
        if self._stride is None:
            return "terminal_only"
        if self._stride == 1:
            return "all_steps"
        return f"stride:{self._stride}"

    def __repr__(self):
        return f"RecordPolicy({str(self)!r})"

    def __eq__(self, other):
        return isinstance(other, RecordPolicy) and other._stride == self._stride

    def __hash__(self):
        return hash(self._stride)


@dataclass(frozen=True)
class SolverConfig:
    """
    Problem and scheme parameters of one run.

    Args:
        n (int): Space cells, h = pi/n
        m (int): Time steps, tau = T/m
        T (float): Horizon
        drift (Drift): Nonlinearity f
        diffusion (Diffusion): Noise coefficient sigma
        initial (InitialData): Initial data u_0
        record_policy (RecordPolicy): Which steps to keep
    """

    n: int
    m: int
    T: float
    drift: Drift = field(default_factory=_factory.default_drift)
    diffusion: Diffusion = field(default_factory=_factory.default_diffusion)
    initial: InitialData = field(default_factory=_factory.default_initial)
    record_policy: RecordPolicy = field(default_factory=RecordPolicy.terminal_only)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def tau(self) -> float:
        return self.T / self.m

    @property
    def h(self) -> float:
        return math.pi / self.n

    @property
    def mesh(self) -> Mesh:
        return Mesh(self.n)

    def at_level(self, n: Optional[int] = None, m: Optional[int] = None) -> "SolverConfig":
        """Copy with another space and/or time level."""
        return replace(self, n=self.n if n is None else n, m=self.m if m is None else m)


@dataclass
class Trajectory:
    """
    Fields of one run at the recorded step indices.

    Args:
        config (SolverConfig): Configuration of the run
        indices (list): Recorded step indices i, time t_i = i tau
        states (list): Field at each recorded index
    """

    config: SolverConfig
    indices: List[int]
    states: List[Field]

    @property
    def times(self) -> np.ndarray:
        return self.config.T * np.asarray(self.indices, dtype=float) / self.config.m

    @property
    def terminal(self) -> Field:
        """State at t = T."""
        return self.states[-1]

    def state_at(self, i: int) -> Field:
        try:
            return self.states[self.indices.index(i)]
        except ValueError:
            raise KeyError(f"step {i} was not recorded") from None

    def to_columns(self) -> dict:
        """Long-form columns t, k, x, value over all recorded states and interior nodes."""
        mesh = self.config.mesh
        k = np.arange(1, mesh.n)
        count = len(self.states)
        return {
            "t": np.repeat(self.times, mesh.size),
            "k": np.tile(k, count),
            "x": np.tile(mesh.interior_nodes, count),
            "value": np.concatenate([state.values for state in self.states]) if count else np.array([]),
        }

    def __len__(self):
        return len(self.states)


class ExponentialEuler:
    """
    Stepper of the exponential Euler scheme on a fixed mesh and step size.

    Works on raw arrays whose last axis holds the n-1 interior values, so a
    batch of states (or of tangents) advances in one call.

    Args:
        basis (SpectralBasis): Sine basis of the mesh
        tau (float): Step size, non-negative
        drift (Drift): Nonlinearity f
        diffusion (Diffusion): Noise coefficient sigma
    """

    def __init__(self, basis: SpectralBasis, tau: float, drift: Drift, diffusion: Diffusion):
        if tau < 0:
            raise ValueError(f"tau must be non-negative, got {tau}")
        self.basis = basis
        self.tau = float(tau)
        self.drift = drift
        self.diffusion = diffusion
        self.noise_scale = math.sqrt(basis.n / math.pi)
        self.factors = np.exp(-basis.eigenvalues ** 2 * tau)

    def propagate(self, values: np.ndarray, drift_values: Optional[np.ndarray] = None) -> np.ndarray:
        """E_tau [values + tau A_n drift_values], with A_n applied mode by mode."""
        coefficients = self.basis.forward(values)
        if drift_values is not None:
            coefficients = coefficients + self.tau * self.basis.eigenvalues * self.basis.forward(drift_values)
        return self.basis.inverse(self.factors * coefficients)

    def advance(self, values: np.ndarray, dbeta: np.ndarray) -> np.ndarray:
        """
        One step from the interior values U with increments dbeta_i^k, k = 1..n-1.

        Args:
            values (ndarray): States, last axis n-1
            dbeta (ndarray): Increments, broadcastable to values

        Returns:
            ndarray: States one step later
        """
        values = np.asarray(values, dtype=float)
        forced = values + self.noise_scale * self.diffusion(values) * dbeta
        return self.propagate(forced, self.drift(values))

    def advance_linearized(self, tangents: np.ndarray, values: np.ndarray,
                           dbeta: np.ndarray) -> np.ndarray:
        """
        Derivative of :meth:`advance` applied to tangents D at the state U:

            D+ = E_tau [ D + tau A_n (f'(U) o D) + sqrt(n/pi) (sigma'(U) o D) o dbeta ]
        """
        forced = tangents + self.noise_scale * self.diffusion.derivative(values) * dbeta * tangents
        return self.propagate(forced, self.drift.derivative(values) * tangents)


def initial_field(initial: InitialData, mesh: Mesh) -> Field:
    """Field with values u_0(kh) at the interior nodes."""
    return Field.from_function(mesh, initial)


def step(U: Field, dbeta: np.ndarray, basis: SpectralBasis, tau: float,
         drift: Drift, diffusion: Diffusion) -> Field:
    """
    One exponential Euler step.

    Args:
        U (Field): Current state
        dbeta (ndarray): The n-1 increments of beta^1..beta^{n-1} over the step
        basis (SpectralBasis): Basis of U's mesh
        tau (float): Step size
        drift (Drift): Nonlinearity
        diffusion (Diffusion): Noise coefficient

    Returns:
        Field: The next state

    Raises:
        MeshMismatchError: If U or dbeta do not fit the basis
        SampleOverflowError: If the new state is not finite or exceeds the overflow norm
    """
    if U.mesh != basis.mesh:
        raise MeshMismatchError(basis.mesh.size, U.mesh.size)
    dbeta = np.asarray(dbeta, dtype=float)
    if dbeta.shape != (basis.mesh.size,):
        raise MeshMismatchError(basis.mesh.size, dbeta.size, what="increment vector")
    values = ExponentialEuler(basis, tau, drift, diffusion).advance(U.values, dbeta)
    check_overflow(values, 1)
    return Field(basis.mesh, values)


def check_overflow(values: np.ndarray, step_index: int):
    """Raise SampleOverflowError if values are not finite or exceed OVERFLOW_NORM."""
    norm = float(np.max(np.abs(values))) if values.size else 0.0
    if not math.isfinite(norm) or norm > OVERFLOW_NORM:
        raise SampleOverflowError(step_index, norm)


def interior_increments(sheet: SheetIncrements, m: int, n: int) -> np.ndarray:
    """dbeta_i^k for i < m and k = 1..n-1 at a level nested in the sheet."""
    return to_beta(coarsen_to(sheet, m, n))[:, 1:]


def iterate_states(config: SolverConfig, dbeta: np.ndarray) -> Iterator[Tuple[int, np.ndarray]]:
    """
    Run the scheme lazily.

    Args:
        config (SolverConfig): Run configuration
        dbeta (ndarray): m x (n-1) increments

    Yields:
        tuple: (i, interior values at t_i) for i = 0..m

    Raises:
        MeshMismatchError: If dbeta has the wrong shape
        SampleOverflowError: If the state blows up
    """
    dbeta = np.asarray(dbeta, dtype=float)
    if dbeta.shape != (config.m, config.n - 1):
        raise MeshMismatchError(config.m * (config.n - 1), dbeta.size, what="increment table")
    basis = build_basis(config.n)
    stepper = ExponentialEuler(basis, config.tau, config.drift, config.diffusion)
    values = initial_field(config.initial, basis.mesh).values
    yield 0, values
    for i in range(config.m):
        values = stepper.advance(values, dbeta[i])
        check_overflow(values, i + 1)
        yield i + 1, values


def simulate_increments(config: SolverConfig, dbeta: np.ndarray) -> Trajectory:
    """Run the scheme from explicit m x (n-1) increments and record per the policy."""
    mesh = config.mesh
    wanted = set(config.record_policy.indices(config.m))
    indices, states = [], []
    for i, values in iterate_states(config, dbeta):
        if i in wanted:
            indices.append(i)
            states.append(Field(mesh, values))
    return Trajectory(config, indices, states)


def simulate(config: SolverConfig, sheet: SheetIncrements) -> Trajectory:
    """
    Run the scheme driven by a coarsening of the sheet.

    Args:
        config (SolverConfig): Run configuration; (m, n) must be nested in the sheet
        sheet (SheetIncrements): Master sheet of the sample

    Returns:
        Trajectory: Recorded states

    Raises:
        DivisibilityError: If (m, n) is not nested in the sheet
        SampleOverflowError: If the state blows up
    """
    if not math.isclose(sheet.T, config.T, rel_tol=1e-12):
        raise ValueError(f"sheet horizon {sheet.T} differs from config horizon {config.T}")
    trajectory = simulate_increments(config, interior_increments(sheet, config.m, config.n))
    logger.debug(f"simulated sample {sheet.sample_index} at n={config.n}, m={config.m}")
    return trajectory


def semidiscrete_reference(config: SolverConfig, sheet: SheetIncrements,
                           m_ref: Optional[int] = None) -> Trajectory:
    """
    Fine-step proxy for the semi-discrete solution u^n.

    Runs the same scheme with m_ref steps (default: all time cells of the sheet).
    """
    return simulate(config.at_level(m=sheet.m if m_ref is None else m_ref), sheet)


def deterministic_reference(config: SolverConfig, rtol: float = 1e-10,
                            atol: float = 1e-12) -> Trajectory:
    """
    Solve the noise-free system dU/dt = -A_n^2 U + A_n F(U) with an implicit Runge-Kutta method.

    The sine coefficients a_j obey da_j/dt = -lambda_j^2 a_j + lambda_j <F(U), e_j>.
    ``solve_ivp`` (Radau) integrates them to the recorded times.

    Args:
        config (SolverConfig): Run configuration; the diffusion is ignored
        rtol (float): Relative tolerance
        atol (float): Absolute tolerance

    Returns:
        Trajectory: States at the recorded times of ``config``
    """
    basis = build_basis(config.n)
    lam = basis.eigenvalues
    drift = config.drift

    def rhs(_, a):
        return -lam ** 2 * a + lam * basis.forward(drift(basis.inverse(a)))

    indices = config.record_policy.indices(config.m)
    times = config.T * np.asarray(indices, dtype=float) / config.m
    start = basis.forward(initial_field(config.initial, basis.mesh).values)
    solution = integrate.solve_ivp(rhs, (0.0, config.T), start, method="Radau",
                                   t_eval=times, rtol=rtol, atol=atol)
    if not solution.success:
        raise RuntimeError(f"deterministic reference failed: {solution.message}")
    states = [Field(basis.mesh, basis.inverse(a)) for a in solution.y.T]
    return Trajectory(config, list(indices), states)
