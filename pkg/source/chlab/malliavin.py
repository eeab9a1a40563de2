"""
Forward tangents of the exponential Euler scheme with respect to the noise.

The scheme is driven by the increments dbeta_i^k (time step i, cell k). Its
Malliavin derivative is the table of sensitivities d u(T, x*) / d dbeta_i^k.
Each increment is W(h_{i,k}) for pairwise orthogonal h_{i,k} of squared
H-norm tau, hence

    ||D u(T, x*)||_H^2 = tau * sum_{i,k} (d u(T, x*) / d dbeta_i^k)^2.

A tangent created at step i is injected through E_tau and then carried by
the linearized scheme along the forward trajectory.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np

from .errors import DegenerateSampleError, MeshMismatchError, TangentBudgetError
from .grid import Field, SpectralBasis, build_basis, interpolation_weights
from .models import Diffusion, Drift
from .noise import SheetIncrements, generate
from .parallel import SamplePool
from .solver import (ExponentialEuler, SolverConfig, check_overflow, initial_field,
                     interior_increments)

logger = logging.getLogger(__name__)

# largest m * n for which full tangent tables are built
TANGENT_BUDGET = 8192


@dataclass(frozen=True)
class TangentField:
    """
    Sensitivity d U_step / d dbeta_i^k of the state at a step to one increment.

    Args:
        i (int): Time step of the perturbed increment
        k (int): Cell of the perturbed increment, 1..n-1
        step (int): Step the values belong to
        values (Field): The sensitivity field
    """

    i: int
    k: int
    step: int
    values: Field


@dataclass(frozen=True)
class MalliavinRecord:
    """
    Discrete H-norm of the derivative of u(T, x*) for one sample.

    Args:
        hnorm2 (float): tau * sum of squared sensitivities
        x (float): Evaluation point x*
        sample_index (int): Sample the record belongs to
        table (ndarray): m x (n-1) sensitivities, row i and column k-1
    """

    hnorm2: float
    x: float
    sample_index: int = 0
    table: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class NegativeMomentEstimate:
    """Sample mean of hnorm2^(-rho) with its standard error."""

    rho: float
    mean: float
    stderr: float
    count: int
    degenerate: bool

    def require(self) -> float:
        """
        The estimate, when it is defined.

        Raises:
            DegenerateSampleError: If some record had a vanishing H-norm
        """
        if self.degenerate:
            raise DegenerateSampleError("negative moment undefined: zero H-norm in the records")
        return self.mean


def check_budget(m: int, n: int):
    if m * n > TANGENT_BUDGET:
        raise TangentBudgetError(f"tangent table for m={m}, n={n} exceeds m*n <= {TANGENT_BUDGET}")


def tangent_inject(U_i: Field, k: int, basis: SpectralBasis, tau: float,
                   diffusion: Diffusion, i: int = 0) -> TangentField:
    """
    d U_{i+1} / d dbeta_i^k = E_tau [ sqrt(n/pi) sigma(U_i(k)) unit_k ].

    Args:
        U_i (Field): State at step i
        k (int): Cell 1..n-1
        basis (SpectralBasis): Basis of the mesh
        tau (float): Step size
        diffusion (Diffusion): Noise coefficient
        i (int): Step index of the increment

    Returns:
        TangentField: The tangent at step i+1

    Raises:
        ValueError: If k is not an interior cell
    """
    if not 1 <= k <= basis.n - 1:
        raise ValueError(f"cell index must lie in 1..{basis.n - 1}, got {k}")
    stepper = ExponentialEuler(basis, tau, None, diffusion)
    unit = np.zeros(basis.mesh.size)
    unit[k - 1] = stepper.noise_scale * float(diffusion(U_i.values[k - 1]))
    return TangentField(i, k, i + 1, Field(basis.mesh, stepper.propagate(unit)))


def tangent_step(D: TangentField, U_j: Field, dbeta_j: np.ndarray, basis: SpectralBasis,
                 tau: float, drift: Drift, diffusion: Diffusion) -> TangentField:
    """
    Carry a tangent over the step from U_j, the state at step ``D.step``.

        D+ = E_tau [ D + tau A_n (f'(U_j) o D) + sqrt(n/pi) (sigma'(U_j) o D) o dbeta_j ]

    Raises:
        MeshMismatchError: If the fields do not fit the basis
        SampleOverflowError: If the tangent blows up
    """
    if D.values.mesh != basis.mesh or U_j.mesh != basis.mesh:
        raise MeshMismatchError(basis.mesh.size, D.values.mesh.size, what="tangent")
    stepper = ExponentialEuler(basis, tau, drift, diffusion)
    values = stepper.advance_linearized(D.values.values, U_j.values, np.asarray(dbeta_j, dtype=float))
    check_overflow(values, D.step + 1)
    return TangentField(D.i, D.k, D.step + 1, Field(basis.mesh, values))


def tangent_path(config: SolverConfig, sheet: SheetIncrements, i: int, k: int) -> np.ndarray:
    """
    Sensitivities d U_j / d dbeta_i^k for every step j = 0..m.

    Rows j <= i are exact zeros.

    Returns:
        ndarray: (m+1) x (n-1) table
    """
    if not 0 <= i < config.m:
        raise ValueError(f"step index must lie in 0..{config.m - 1}, got {i}")
    basis = build_basis(config.n)
    stepper = ExponentialEuler(basis, config.tau, config.drift, config.diffusion)
    dbeta = interior_increments(sheet, config.m, config.n)
    path = np.zeros((config.m + 1, basis.mesh.size))
    state = initial_field(config.initial, basis.mesh)
    tangent = None
    for j in range(config.m):
        if j == i:
            tangent = tangent_inject(state, k, basis, config.tau, config.diffusion, i=i)
        elif tangent is not None:
            tangent = tangent_step(tangent, state, dbeta[j], basis, config.tau,
                                   config.drift, config.diffusion)
        if tangent is not None:
            path[j + 1] = tangent.values.values
        state = Field(basis.mesh, stepper.advance(state.values, dbeta[j]))
    return path


def tangent_table(config: SolverConfig, sheet: SheetIncrements, x: float) -> np.ndarray:
    """
    Table of d u(T, x) / d dbeta_i^k for all steps i and cells k.

    All m(n-1) tangents are carried as one block alongside the forward solve:
    at step j the existing block is linearized at U_j and the n-1 tangents of
    the new increments are injected.

    Args:
        config (SolverConfig): Run configuration, with m * n <= 8192
        sheet (SheetIncrements): Master sheet of the sample
        x (float): Evaluation point x*

    Returns:
        ndarray: m x (n-1) table, row i and column k-1

    Raises:
        TangentBudgetError: If m * n exceeds the budget
        SampleOverflowError: If the state or a tangent blows up
    """
    m, size = config.m, config.n - 1
    check_budget(m, config.n)
    basis = build_basis(config.n)
    stepper = ExponentialEuler(basis, config.tau, config.drift, config.diffusion)
    dbeta = interior_increments(sheet, m, config.n)
    block = np.zeros((m * size, size))
    values = initial_field(config.initial, basis.mesh).values
    for j in range(m):
        live = j * size
        if live:
            block[:live] = stepper.advance_linearized(block[:live], values, dbeta[j])
        block[live:live + size] = stepper.propagate(np.diag(stepper.noise_scale * config.diffusion(values)))
        values = stepper.advance(values, dbeta[j])
        check_overflow(values, j + 1)
    check_overflow(block, m)
    return (block @ interpolation_weights(basis.mesh, x)).reshape(m, size)


def hnorm2_at(config: SolverConfig, sheet: SheetIncrements, x: float) -> MalliavinRecord:
    """
    Discrete squared H-norm of the derivative of u^{m,n}(T, x).

    Returns:
        MalliavinRecord: hnorm2 and the full tangent table

    Raises:
        TangentBudgetError: If m * n exceeds the budget
    """
    table = tangent_table(config, sheet, x)
    table.setflags(write=False)
    hnorm2 = config.tau * float(np.sum(table ** 2))
    return MalliavinRecord(hnorm2, float(x), sheet.sample_index, table)


def negative_moment_estimate(records: Iterable[MalliavinRecord], rho: float = 0.5) -> NegativeMomentEstimate:
    """
    Sample mean of hnorm2^(-rho) over the records.

    Args:
        records (iterable): Malliavin records
        rho (float): Exponent in (0, 1]

    Returns:
        NegativeMomentEstimate: Mean and standard error; flagged degenerate if a record has hnorm2 = 0

    Raises:
        ValueError: If rho is outside (0, 1] or there are no records
    """
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    norms = np.array([record.hnorm2 for record in records], dtype=float)
    if norms.size == 0:
        raise ValueError("no records")
    if np.any(norms <= 0):
        logger.warning(f"{int(np.sum(norms <= 0))} of {norms.size} records have zero H-norm")
        return NegativeMomentEstimate(rho, math.nan, math.nan, norms.size, True)
    values = norms ** -rho
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    return NegativeMomentEstimate(rho, float(np.mean(values)), stderr, values.size, False)


def _with_cell_zero(table: np.ndarray) -> np.ndarray:
    # cell 0 carries no dbeta, its sensitivity is zero
    return np.concatenate((np.zeros((table.shape[0], 1)), table), axis=1)


def aggregate_table(fine_table: np.ndarray, n_coarse: int, n_fine: int) -> np.ndarray:
    """
    Sensitivities of a fine solution to the coarse increments, in coarse dbeta units.

    A coarse increment is the sum of its r = n_fine / n_coarse fine cell
    increments. Spreading a perturbation of it evenly over the fine cells
    gives, per coarse cell, sqrt(r) times the mean of the fine sensitivities.

    Args:
        fine_table (ndarray): m x (n_fine-1) table of the fine level
        n_coarse (int): Coarse level, dividing n_fine
        n_fine (int): Fine level

    Returns:
        ndarray: m x n_coarse table over coarse cells K = 0..n_coarse-1
    """
    if n_fine % n_coarse:
        raise ValueError(f"n_fine={n_fine} is not a multiple of n_coarse={n_coarse}")
    if fine_table.shape[1] != n_fine - 1:
        raise MeshMismatchError(n_fine - 1, fine_table.shape[1], what="tangent table")
    r = n_fine // n_coarse
    m = fine_table.shape[0]
    means = _with_cell_zero(fine_table).reshape(m, n_coarse, r).mean(axis=2)
    return math.sqrt(r) * means


def table_distance(coarse_table: np.ndarray, fine_table: np.ndarray, tau: float) -> float:
    """
    tau * sum_{i,K} (coarse - aggregated fine)^2 between two tangent tables on one time grid.

    Args:
        coarse_table (ndarray): m x (n_coarse-1) table
        fine_table (ndarray): m x (n_fine-1) table, n_coarse dividing n_fine
        tau (float): Common step size

    Returns:
        float: The squared distance in H
    """
    n_coarse, n_fine = coarse_table.shape[1] + 1, fine_table.shape[1] + 1
    if coarse_table.shape[0] != fine_table.shape[0]:
        raise MeshMismatchError(coarse_table.shape[0], fine_table.shape[0], what="tangent time grid")
    difference = _with_cell_zero(coarse_table) - aggregate_table(fine_table, n_coarse, n_fine)
    return tau * float(np.sum(difference ** 2))


def malliavin_sample_error(config: SolverConfig, sheet: SheetIncrements, n_coarse: int,
                           n_fine: int, x: float) -> float:
    """
    tau * sum_{i,K} (coarse sensitivity - aggregated fine sensitivity)^2 for one sample.

    Both levels run on the time grid of ``config`` and on coarsenings of the
    sheet. Coarse cell 0 enters with a zero coarse sensitivity.
    """
    coarse = tangent_table(config.at_level(n=n_coarse), sheet, x)
    fine = tangent_table(config.at_level(n=n_fine), sheet, x)
    return table_distance(coarse, fine, config.tau)


def malliavin_error(config: SolverConfig, n_coarse: int, n_fine: Optional[int] = None,
                    samples: int = 200, seed: int = 0, x: float = math.pi / 2,
                    threads: int = 1, first_index: int = 0) -> Tuple[float, float]:
    """
    Monte-Carlo mean of :func:`malliavin_sample_error`.

    Each sample draws a master sheet at (config.m, n_fine) keyed by (seed, index).

    Args:
        config (SolverConfig): Base configuration; its m is the common time grid
        n_coarse (int): Coarse level
        n_fine (int, optional): Fine level, default 2 * n_coarse
        samples (int): Number of samples
        seed (int): Master seed
        x (float): Evaluation point
        threads (int): Worker threads
        first_index (int): Sample index of the first sample

    Returns:
        tuple: (mean, standard error)
    """
    n_fine = 2 * n_coarse if n_fine is None else n_fine
    check_budget(config.m, n_fine)

    def one(index):
        sheet = generate(seed, index, config.m, n_fine, config.T)
        return malliavin_sample_error(config, sheet, n_coarse, n_fine, x)

    with SamplePool(threads) as pool:
        errors = np.array(pool.map(one, range(first_index, first_index + samples)))
    stderr = float(np.std(errors, ddof=1) / math.sqrt(samples)) if samples > 1 else math.nan
    logger.info(f"malliavin error n={n_coarse} vs {n_fine}: {np.mean(errors):.4e} +- {stderr:.1e}")
    return float(np.mean(errors)), stderr
