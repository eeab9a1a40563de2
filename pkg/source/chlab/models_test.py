import math

import numpy as np
import pytest

from chlab.models import (ConstantDiffusion, CubicDrift, Cutoff, CutoffCubicDrift,
                          LipschitzRationalDrift, ModelFactory, ScaledSineDrift,
                          ShiftedSineDiffusion, SineCombo, SineMode, ZeroDrift, eval_cutoff,
                          eval_diffusion, eval_diffusion_prime, eval_drift, eval_drift_prime,
                          lipschitz_estimate)

factory = ModelFactory()

LIPSCHITZ_DRIFTS = [
    ZeroDrift(),
    ScaledSineDrift(1.0),
    ScaledSineDrift(-2.5),
    LipschitzRationalDrift(3.0),
    factory.localized_drift(2.0),
]


def central_difference(func, x, eps=1e-5):
    return (func(x + eps) - func(x - eps)) / (2 * eps)


class TestEvaluation:
    """Tests for pointwise evaluation."""

    def test_zero_drift(self):
        assert eval_drift(ZeroDrift(), 3.7) == 0.0
        assert eval_drift_prime(ZeroDrift(), -1.0) == 0.0

    def test_shifted_sine_at_zero(self):
        """Should give sigma = 1 and sigma' = 0.5 at x = 0."""
        sigma = ShiftedSineDiffusion(1.0, 0.5)
        assert eval_diffusion(sigma, 0.0) == pytest.approx(1.0)
        assert eval_diffusion_prime(sigma, 0.0) == pytest.approx(0.5)

    @pytest.mark.parametrize("model", LIPSCHITZ_DRIFTS + [CubicDrift(1.0, 0.3, -1.0, 0.2),
                                                          ShiftedSineDiffusion(2.0, -1.5),
                                                          ConstantDiffusion(0.7)])
    def test_derivatives_match_finite_differences(self, model):
        """Should agree with central differences to 1e-6 at 100 random points."""
        rng = np.random.default_rng(17)
        x = rng.uniform(-4.0, 4.0, 100)
        scale = np.maximum(1.0, np.abs(model.derivative(x)))
        error = np.abs(central_difference(model, x) - model.derivative(x)) / scale
        assert np.max(error) <= 1e-6


class TestCutoff:
    """Tests for K_R."""

    def test_plateau_and_support(self):
        cutoff = Cutoff(2.0)
        assert np.all(eval_cutoff(cutoff, np.linspace(-1.999, 1.999, 101)) == 1.0)
        assert np.all(eval_cutoff(cutoff, np.array([3.0, -3.0, 7.5, -100.0])) == 0.0)

    def test_even_and_bounded(self):
        cutoff = Cutoff(1.5)
        x = np.linspace(-4, 4, 1001)
        np.testing.assert_array_equal(cutoff(x), cutoff(-x))
        assert np.all((cutoff(x) >= 0.0) & (cutoff(x) <= 1.0))

    def test_max_slope_is_fifteen_eighths(self):
        """Should reach max |K_R'| = 15/8 at the middle of the band."""
        cutoff = Cutoff(2.0)
        x = np.linspace(2.0, 3.0, 100001)
        assert np.max(np.abs(cutoff.derivative(x))) == pytest.approx(1.875, rel=1e-8)
        assert abs(cutoff.derivative(2.5)) == pytest.approx(1.875)
        assert np.max(np.abs(cutoff.derivative(x))) <= 2.0

    def test_continuously_differentiable_at_band_edges(self):
        cutoff = Cutoff(1.0)
        for edge in (1.0, 2.0, -1.0, -2.0):
            assert cutoff.derivative(edge) == pytest.approx(0.0, abs=1e-14)

    def test_rejects_small_radius(self):
        with pytest.raises(ValueError):
            Cutoff(0.5)
        with pytest.raises(ValueError):
            factory.create_drift("cubic_cutoff", a0=1.0, R=0.9)


class TestLipschitz:
    """Tests for Lipschitz constants and the sampling estimator."""

    def test_zero_drift_estimate(self):
        assert lipschitz_estimate(ZeroDrift(), (-1.0, 1.0), 10) == 0.0

    def test_scaled_sine_estimate(self):
        """Should stay below |a| and approach it as samples grow."""
        drift = ScaledSineDrift(-3.0)
        coarse = lipschitz_estimate(drift, (-10.0, 10.0), 100)
        fine = lipschitz_estimate(drift, (-10.0, 10.0), 100000)
        assert coarse <= fine <= 3.0
        assert fine == pytest.approx(3.0, rel=1e-6)

    @pytest.mark.parametrize("drift", LIPSCHITZ_DRIFTS)
    def test_declared_constant_bounds_estimate(self, drift):
        """Should bound the estimator on [-10, 10] by the declared constant times 1.01."""
        assert drift.is_lipschitz
        assert lipschitz_estimate(drift, (-10.0, 10.0), 200001) <= 1.01 * drift.lipschitz_constant

    def test_cutoff_cubic_constant_is_stable(self):
        """Should report a constant stable to two digits at 1e5 samples."""
        drift = factory.create_drift("cubic_cutoff", a0=1.0, a1=0.0, a2=-1.0, a3=0.0, R=2.0)
        estimate = lipschitz_estimate(drift, (-4.0, 4.0), 100000)
        denser = lipschitz_estimate(drift, (-4.0, 4.0), 200000)
        assert math.isfinite(estimate)
        assert estimate == pytest.approx(denser, rel=0.01)
        assert estimate == pytest.approx(drift.lipschitz_constant, rel=0.01)

    def test_raw_cubic_is_not_lipschitz(self):
        assert CubicDrift(1.0).lipschitz_constant is None
        assert not CubicDrift(1.0).is_lipschitz

    def test_estimator_rejects_bad_input(self):
        with pytest.raises(ValueError):
            lipschitz_estimate(ZeroDrift(), (1.0, 1.0), 10)
        with pytest.raises(ValueError):
            lipschitz_estimate(ZeroDrift(), (0.0, 1.0), 1)


class TestCubic:
    """Tests for the cubic and its localisation."""

    def test_rejects_nonpositive_leading_coefficient(self):
        with pytest.raises(ValueError):
            CubicDrift(0.0)
        with pytest.raises(ValueError):
            CubicDrift(-1.0, 0.0, 1.0)

    def test_cutoff_composite_is_exact_product(self):
        """Should equal K_R times the cubic, and the cubic itself on |x| < R."""
        cubic = CubicDrift(1.0, 0.5, -1.0, 0.25)
        cutoff = Cutoff(2.0)
        drift = CutoffCubicDrift(cubic, cutoff)
        x = np.linspace(-5, 5, 401)
        np.testing.assert_array_equal(drift(x), cutoff(x) * cubic(x))
        inside = np.linspace(-1.99, 1.99, 51)
        np.testing.assert_array_equal(drift(inside), cubic(inside))

    def test_growth_constant(self):
        """Should satisfy |f(x)| <= K0 (1 + |x|^3)."""
        x = np.linspace(-20, 20, 4001)
        for drift in LIPSCHITZ_DRIFTS + [CubicDrift(2.0, -1.0, 3.0, 0.5)]:
            assert np.all(np.abs(drift(x)) <= drift.growth_constant * (1 + np.abs(x) ** 3) + 1e-12)


class TestDiffusion:
    """Tests for diffusion coefficients."""

    def test_nondegeneracy(self):
        """Should keep |sigma| >= sigma_0 over 1e5 sampled points."""
        sigma = ShiftedSineDiffusion(1.0, 0.5)
        x = np.random.default_rng(0).uniform(-50, 50, 100000)
        assert np.min(np.abs(sigma(x))) >= sigma.sigma0 * (1 - 1e-12)
        assert sigma.sigma0 == 0.5
        assert sigma.bound == 1.5
        assert sigma.lipschitz_constant == 0.5

    def test_rejects_degenerate_shifted_sine(self):
        with pytest.raises(ValueError):
            ShiftedSineDiffusion(1.0, 1.0)

    def test_zero_constant_is_degenerate(self):
        assert not ConstantDiffusion(0.0).is_nondegenerate
        assert ConstantDiffusion(-2.0).is_nondegenerate


class TestInitialData:
    """Tests for initial data."""

    @pytest.mark.parametrize("u0", [SineMode(1, 1.0), SineMode(3, -2.0),
                                    SineCombo([(1, 1.0), (2, 0.5), (7, 0.1)]), SineCombo()])
    def test_compatibility(self, u0):
        """Should vanish with its second derivative at both ends."""
        assert u0.check_compatibility()
        ends = np.array([0.0, math.pi])
        assert np.all(np.abs(u0(ends)) <= 1e-12)
        assert np.all(np.abs(u0.second_derivative(ends)) <= 1e-12)

    def test_second_derivative(self):
        u0 = SineCombo([(2, 3.0)])
        x = np.linspace(0.1, 3.0, 7)
        np.testing.assert_allclose(u0.second_derivative(x), -12.0 * np.sin(2 * x))

    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError):
            SineMode(0, 1.0)


class TestModelFactory:
    """Tests for the model factory."""

    def test_defaults(self):
        assert isinstance(factory.default_drift(), ScaledSineDrift)
        assert factory.default_diffusion()(0.0) == 1.0
        assert factory.default_initial()(math.pi / 2) == pytest.approx(1.0)

    def test_create_by_name(self):
        assert isinstance(factory.create_drift("zero"), ZeroDrift)
        assert isinstance(factory.create_drift("lipschitz_rational", a=2.0), LipschitzRationalDrift)
        assert isinstance(factory.create_diffusion("constant", c=0.0), ConstantDiffusion)
        assert isinstance(factory.create_initial("sine_combo", terms=[[1, 1.0]]), SineCombo)

    def test_unknown_names(self):
        with pytest.raises(ValueError):
            factory.create_drift("quartic")
        with pytest.raises(ValueError):
            factory.create_diffusion("linear")
        with pytest.raises(ValueError):
            factory.create_initial("gaussian")

    @pytest.mark.parametrize("kind, model", [
        ("drift", ScaledSineDrift(0.5)),
        ("drift", factory.localized_drift(3.0)),
        ("diffusion", ShiftedSineDiffusion(2.0, 1.0)),
        ("initial", SineMode(2, 0.5)),
        ("initial", SineCombo([(1, 1.0), (3, 0.2)])),
    ])
    def test_dict_round_trip(self, kind, model):
        """Should rebuild an equivalent model from its dict form."""
        rebuilt = factory.create_from_dict(kind, model.to_dict())
        assert type(rebuilt) is type(model)
        assert rebuilt.to_dict() == model.to_dict()
