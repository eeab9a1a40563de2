import math

import numpy as np
import pytest

from chlab.errors import DegenerateSampleError, TangentBudgetError
from chlab.grid import Field, build_basis, interpolate, interpolation_weights
from chlab.malliavin import (MalliavinRecord, aggregate_table, hnorm2_at, malliavin_error,
                             malliavin_sample_error, negative_moment_estimate, tangent_inject,
                             tangent_path, tangent_step, tangent_table, TangentField)
from chlab.models import ConstantDiffusion, ZeroDrift
from chlab.noise import generate
from chlab.solver import SolverConfig, interior_increments, simulate_increments

X_STAR = math.pi / 2


def linear_table(n, m, T, c, x):
    """Closed form of the table for f = 0, sigma = c: c sqrt(n/pi) (E_{(m-i) tau} unit_k)(x)."""
    basis = build_basis(n)
    tau = T / m
    weights = interpolation_weights(basis.mesh, x)
    rows = []
    for i in range(m):
        decay = np.exp(-basis.eigenvalues ** 2 * (m - i) * tau)
        rows.append(c * math.sqrt(n / math.pi) * (basis.matrix.T @ (decay * (basis.matrix @ weights))))
    return np.array(rows)


class TestInjectAndStep:
    """Tests for single tangent operations."""

    def test_constant_sigma_injection(self):
        """Should equal c sqrt(n/pi) E_tau unit_k, checked against the matrix transform."""
        basis = build_basis(8)
        state = Field.from_function(basis.mesh, np.sin)
        tau = 0.01
        tangent = tangent_inject(state, 3, basis, tau, ConstantDiffusion(0.7), i=2)
        unit = np.zeros(7)
        unit[2] = 0.7 * math.sqrt(8 / math.pi)
        expected = basis.matrix.T @ (np.exp(-basis.eigenvalues ** 2 * tau) * (basis.matrix @ unit))
        np.testing.assert_allclose(tangent.values.values, expected, atol=1e-14)
        assert (tangent.i, tangent.k, tangent.step) == (2, 3, 3)

    def test_vanishing_sigma(self):
        basis = build_basis(8)
        tangent = tangent_inject(Field.zeros(basis.mesh), 1, basis, 0.1, ConstantDiffusion(0.0))
        assert np.all(tangent.values.values == 0.0)

    def test_zero_step_injection(self):
        """Should give sqrt(n/pi) sigma(U(k)) unit_k when tau = 0."""
        basis = build_basis(8)
        state = Field.from_function(basis.mesh, np.sin)
        sigma = ConstantDiffusion(2.0)
        tangent = tangent_inject(state, 5, basis, 0.0, sigma)
        expected = np.zeros(7)
        expected[4] = 2.0 * math.sqrt(8 / math.pi)
        np.testing.assert_allclose(tangent.values.values, expected, atol=1e-14)

    def test_rejects_boundary_cell(self):
        basis = build_basis(8)
        with pytest.raises(ValueError):
            tangent_inject(Field.zeros(basis.mesh), 0, basis, 0.1, ConstantDiffusion(1.0))

    def test_linear_step_is_semigroup(self):
        """Should reduce to E_tau D when f' = 0 and sigma' = 0."""
        basis = build_basis(16)
        rng = np.random.default_rng(1)
        D = TangentField(0, 1, 1, Field(basis.mesh, rng.standard_normal(15)))
        state = Field(basis.mesh, rng.standard_normal(15))
        out = tangent_step(D, state, rng.standard_normal(15), basis, 0.02, ZeroDrift(),
                           ConstantDiffusion(1.0))
        expected = basis.inverse(np.exp(-basis.eigenvalues ** 2 * 0.02) * basis.forward(D.values.values))
        np.testing.assert_allclose(out.values.values, expected, atol=1e-13)
        assert out.step == 2

    def test_zero_in_zero_out(self):
        basis = build_basis(8)
        config = SolverConfig(8, 4, 0.1)
        D = TangentField(0, 1, 1, Field.zeros(basis.mesh))
        state = Field.from_function(basis.mesh, np.sin)
        out = tangent_step(D, state, np.ones(7), basis, 0.1, config.drift, config.diffusion)
        assert np.all(out.values.values == 0.0)


class TestTangentTable:
    """Tests for the full sensitivity table."""

    def setup_method(self):
        self.config = SolverConfig(8, 8, 0.1)
        self.sheet = generate(5, 0, 8, 8, 0.1)
        self.table = tangent_table(self.config, self.sheet, X_STAR)

    def bumped_terminal(self, i, k, eps):
        dbeta = np.array(interior_increments(self.sheet, 8, 8))
        dbeta[i, k - 1] += eps
        return interpolate(simulate_increments(self.config, dbeta).terminal, X_STAR)

    def test_shape(self):
        assert self.table.shape == (8, 7)

    def test_matches_finite_differences(self):
        """Should agree with bump-and-rerun quotients to relative 1e-3 on 10 random cells."""
        rng = np.random.default_rng(8)
        base = self.bumped_terminal(0, 1, 0.0)
        eps = 1e-6
        for _ in range(10):
            i, k = int(rng.integers(0, 8)), int(rng.integers(1, 8))
            quotient = (self.bumped_terminal(i, k, eps) - base) / eps
            assert quotient == pytest.approx(self.table[i, k - 1], rel=1e-3, abs=1e-9)

    def test_linear_in_bump_size(self):
        """Should scale the response linearly with the bump size."""
        base = self.bumped_terminal(0, 1, 0.0)
        small = self.bumped_terminal(3, 4, 1e-7) - base
        large = self.bumped_terminal(3, 4, 2e-7) - base
        assert large / small == pytest.approx(2.0, rel=1e-5)

    def test_causality_and_consistency_with_path(self):
        """Should vanish exactly up to the creation step and end at the table entry."""
        i, k = 3, 2
        path = tangent_path(self.config, self.sheet, i, k)
        assert np.all(path[: i + 1] == 0.0)
        assert np.any(path[i + 1] != 0.0)
        weights = interpolation_weights(self.config.mesh, X_STAR)
        assert path[-1] @ weights == pytest.approx(self.table[i, k - 1], rel=1e-12, abs=1e-15)

    def test_budget(self):
        config = SolverConfig(128, 128, 0.1)
        with pytest.raises(TangentBudgetError):
            tangent_table(config, generate(0, 0, 128, 128, 0.1), X_STAR)

    def test_thread_and_order_invariance(self):
        """Should not depend on when or where the record is computed."""
        again = hnorm2_at(self.config, generate(5, 0, 8, 8, 0.1), X_STAR)
        first = hnorm2_at(self.config, self.sheet, X_STAR)
        assert again.hnorm2 == first.hnorm2


class TestHNorm:
    """Tests for the discrete H-norm."""

    def test_linear_closed_form(self):
        """Should match tau c^2 (n/pi) sum |E unit_k (x*)|^2 to 1e-8."""
        n, m, T, c = 16, 8, 0.05, 0.8
        config = SolverConfig(n, m, T, drift=ZeroDrift(), diffusion=ConstantDiffusion(c))
        record = hnorm2_at(config, generate(0, 0, m, n, T), X_STAR)
        closed = linear_table(n, m, T, c, X_STAR)
        np.testing.assert_allclose(record.table, closed, rtol=1e-8, atol=1e-12)
        assert record.hnorm2 == pytest.approx(T / m * np.sum(closed ** 2), rel=1e-8)

    def test_nondegenerate_under_default_noise(self):
        """Should be positive for each of 100 samples with sigma = 1 + 0.5 sin."""
        config = SolverConfig(8, 16, 0.1)
        norms = [hnorm2_at(config, generate(3, index, 16, 8, 0.1), X_STAR).hnorm2
                 for index in range(100)]
        assert min(norms) > 0.0


class TestNegativeMoments:
    """Tests for the negative-moment estimator."""

    def test_constant_records(self):
        records = [MalliavinRecord(4.0, X_STAR)] * 5
        estimate = negative_moment_estimate(records, rho=0.5)
        assert estimate.mean == pytest.approx(0.5)
        assert estimate.stderr == 0.0
        assert estimate.require() == pytest.approx(0.5)

    @pytest.mark.parametrize("rho", [0.0, -0.5, 1.5])
    def test_rho_range(self, rho):
        with pytest.raises(ValueError):
            negative_moment_estimate([MalliavinRecord(1.0, X_STAR)], rho=rho)

    def test_degenerate_records(self):
        records = [MalliavinRecord(1.0, X_STAR), MalliavinRecord(0.0, X_STAR)]
        estimate = negative_moment_estimate(records, rho=1.0)
        assert estimate.degenerate
        with pytest.raises(DegenerateSampleError):
            estimate.require()


class TestMalliavinError:
    """Tests for the coarse/fine derivative comparison."""

    def test_aggregate_table(self):
        """Should average the fine cells of each coarse cell and scale by sqrt(r)."""
        fine = np.array([[1.0, 2.0, 3.0]])
        aggregated = aggregate_table(fine, 2, 4)
        np.testing.assert_allclose(aggregated, math.sqrt(2) * np.array([[0.5, 2.5]]))

    def test_identical_levels(self):
        config = SolverConfig(8, 8, 0.1)
        sheet = generate(2, 0, 8, 8, 0.1)
        assert malliavin_sample_error(config, sheet, 8, 8, X_STAR) == 0.0

    def test_linear_closed_form(self):
        """Should match the per-mode closed form for f = 0 and constant sigma."""
        m, T, c = 8, 0.1, 1.3
        config = SolverConfig(4, m, T, drift=ZeroDrift(), diffusion=ConstantDiffusion(c))
        sheet = generate(0, 0, m, 8, T)
        coarse = np.concatenate((np.zeros((m, 1)), linear_table(4, m, T, c, X_STAR)), axis=1)
        fine = np.concatenate((np.zeros((m, 1)), linear_table(8, m, T, c, X_STAR)), axis=1)
        aggregated = math.sqrt(2) * fine.reshape(m, 4, 2).mean(axis=2)
        expected = T / m * np.sum((coarse - aggregated) ** 2)
        assert malliavin_sample_error(config, sheet, 4, 8, X_STAR) == pytest.approx(expected, rel=1e-8)

    def test_monte_carlo_is_thread_independent(self):
        config = SolverConfig(4, 8, 0.1)
        serial = malliavin_error(config, 4, samples=6, seed=1, threads=1)
        threaded = malliavin_error(config, 4, samples=6, seed=1, threads=3)
        assert serial == threaded
        assert serial[0] > 0.0
