import math

import numpy as np
import pytest

from chlab.errors import DomainError, MeshMismatchError
from chlab.grid import (Field, Mesh, apply_bilaplacian, apply_laplacian, build_basis,
                        dst_forward, dst_inverse, interpolate, interpolation_weights)


def mode_field(basis, j):
    return Field(basis.mesh, basis.matrix[j - 1])


class TestMesh:
    """Tests for the uniform mesh."""

    def test_spacing_times_n_is_pi(self):
        """Should satisfy h*n = pi to machine precision."""
        for n in (2, 3, 7, 64, 4096):
            mesh = Mesh(n)
            assert mesh.h * n == pytest.approx(math.pi, rel=1e-15)

    def test_rejects_small_n(self):
        """Should reject n < 2."""
        with pytest.raises(ValueError):
            Mesh(1)

    def test_floor_to_grid(self):
        """Should map points to the left node of their cell."""
        mesh = Mesh(8)
        h = mesh.h
        assert mesh.floor_to_grid(3 * h) == pytest.approx(3 * h)
        assert mesh.floor_to_grid(3.5 * h) == pytest.approx(3 * h)
        assert mesh.floor_to_grid(math.pi) == pytest.approx(math.pi)
        assert mesh.floor_to_grid(0.0) == 0.0


class TestBuildBasis:
    """Tests for eigenvalues and c_{j,n}."""

    def test_n_two(self):
        """Should give lambda_{1,2} = -8/pi^2."""
        basis = build_basis(2)
        assert basis.eigenvalues[0] == pytest.approx(-8.0 / math.pi ** 2, rel=1e-14)
        assert basis.eigenvalues[0] == pytest.approx(-0.8105694691, abs=1e-10)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            build_basis(1)

    @pytest.mark.parametrize("n", [2, 5, 16, 100, 1024])
    def test_c_bounds(self, n):
        """Should keep 4/pi^2 <= c_{j,n} <= 1 and 0 <= 1 - c <= pi^2 j^2/(12 n^2)."""
        basis = build_basis(n)
        j = basis.modes
        assert np.all(basis.c >= 4.0 / math.pi ** 2)
        assert np.all(basis.c <= 1.0)
        gap = 1.0 - basis.c
        assert np.all(gap >= 0.0)
        assert np.all(gap <= math.pi ** 2 * j ** 2 / (12.0 * n ** 2) + 1e-15)

    def test_first_eigenvalue_tends_to_minus_one(self):
        """Should approach -1 monotonically within pi^2/(12 n^2)."""
        previous = 0.0
        for n in (4, 8, 16, 32, 64, 128, 256):
            lam = build_basis(n).eigenvalues[0]
            assert lam < previous
            assert abs(-1.0 - lam) <= math.pi ** 2 / (12 * n ** 2)
            previous = lam

    @pytest.mark.parametrize("n", [2, 7, 32, 257, 1024])
    def test_eigenvalue_gap_bound(self, n):
        """Should satisfy |-j^2 - lambda_{j,n}| <= (pi^2/12) j^4/n^2 for every j."""
        basis = build_basis(n)
        gap = np.abs(basis.continuous_eigenvalues - basis.eigenvalues)
        assert np.all(gap <= basis.eigenvalue_gap_bound(basis.modes) * (1 + 1e-12))

    @pytest.mark.parametrize("n", [4, 9, 64])
    def test_eigenvectors_of_stencil_matrix(self, n):
        """Should satisfy A_n e_j = lambda_{j,n} e_j."""
        basis = build_basis(n)
        a = basis.stencil_matrix()
        residual = a @ basis.matrix.T - basis.matrix.T * basis.eigenvalues
        assert np.max(np.abs(residual)) <= 1e-10 * max(1.0, n ** 2 / 100)


class TestTransforms:
    """Tests for the orthonormal sine transform."""

    @pytest.mark.parametrize("n", [2, 8, 33, 512, 4096])
    def test_orthonormality(self, n):
        """Should have <e_i, e_j> = delta_ij to 1e-12."""
        basis = build_basis(n)
        gram = basis.matrix @ basis.matrix.T
        assert np.max(np.abs(gram - np.eye(n - 1))) <= 1e-12

    def test_mode_has_unit_coefficient(self):
        """Should map e_1 to (1, 0, ..., 0)."""
        basis = build_basis(16)
        coefficients = dst_forward(mode_field(basis, 1), basis)
        expected = np.zeros(15)
        expected[0] = 1.0
        np.testing.assert_allclose(coefficients, expected, atol=1e-13)

    def test_round_trip_and_parseval(self):
        """Should invert exactly and preserve the Euclidean norm."""
        rng = np.random.default_rng(3)
        basis = build_basis(64)
        field = Field(basis.mesh, rng.standard_normal(63))
        coefficients = dst_forward(field, basis)
        back = dst_inverse(coefficients, basis)
        assert np.max(np.abs(back.values - field.values)) <= 1e-12
        assert np.sum(coefficients ** 2) == pytest.approx(np.sum(field.values ** 2), rel=1e-12)

    @pytest.mark.parametrize("n", [4, 31, 128])
    def test_fast_matches_naive(self, n):
        """Should agree with the O(n^2) matrix product to 1e-10."""
        rng = np.random.default_rng(n)
        basis = build_basis(n)
        values = rng.standard_normal(n - 1)
        np.testing.assert_allclose(basis.forward(values), basis.naive_forward(values),
                                   atol=1e-10)

    def test_batched_transform(self):
        """Should transform every row of a batch independently."""
        rng = np.random.default_rng(11)
        basis = build_basis(16)
        batch = rng.standard_normal((5, 15))
        np.testing.assert_allclose(basis.forward(batch)[2], basis.forward(batch[2]))

    def test_size_mismatch(self):
        """Should reject fields from another mesh."""
        basis = build_basis(8)
        with pytest.raises(MeshMismatchError):
            dst_forward(Field(Mesh(16), np.zeros(15)), basis)
        with pytest.raises(MeshMismatchError):
            basis.inverse(np.zeros(4))


class TestStencils:
    """Tests for delta_h and delta_h^2."""

    @pytest.mark.parametrize("n", [4, 16, 128])
    def test_laplacian_eigen_residual(self, n):
        """Should satisfy ||delta_h e_j - lambda_{j,n} e_j||_inf <= 1e-10 relative to the scale."""
        basis = build_basis(n)
        scale = max(1.0, float(np.max(np.abs(basis.eigenvalues))))
        for j in basis.modes:
            field = mode_field(basis, j)
            residual = apply_laplacian(field).values - basis.eigenvalues[j - 1] * field.values
            assert np.max(np.abs(residual)) <= 1e-10 * scale

    def test_laplacian_of_linear_ramp(self):
        """Should vanish inside and see the clamped boundary in the last node."""
        mesh = Mesh(10)
        ramp = Field.from_function(mesh, lambda x: x)
        result = apply_laplacian(ramp).values
        np.testing.assert_allclose(result[:-1], 0.0, atol=1e-9)
        assert result[-1] == pytest.approx(-mesh.n / mesh.h)

    def test_zero_field(self):
        mesh = Mesh(6)
        assert apply_laplacian(Field.zeros(mesh)) == Field.zeros(mesh)
        assert apply_bilaplacian(Field.zeros(mesh)) == Field.zeros(mesh)

    def test_bilaplacian_of_mode(self):
        """Should map e_j to lambda_{j,n}^2 e_j."""
        basis = build_basis(12)
        for j in (1, 5, 11):
            field = mode_field(basis, j)
            expected = basis.eigenvalues[j - 1] ** 2 * field.values
            scale = basis.eigenvalues[j - 1] ** 2
            np.testing.assert_allclose(apply_bilaplacian(field).values, expected,
                                       atol=1e-10 * scale)

    @pytest.mark.parametrize("n", [4, 17, 64])
    def test_bilaplacian_matches_spectral_route(self, n):
        """Should agree with transform, multiply by lambda^2, inverse transform."""
        rng = np.random.default_rng(n + 1)
        basis = build_basis(n)
        field = Field(basis.mesh, rng.standard_normal(n - 1))
        spectral = basis.inverse(basis.eigenvalues ** 2 * basis.forward(field.values))
        stencil = apply_bilaplacian(field).values
        scale = float(np.max(basis.eigenvalues ** 2))
        assert np.max(np.abs(stencil - spectral)) <= 1e-9 * scale

    def test_bilaplacian_is_square_of_stencil_matrix(self):
        """Should equal A_n^2 applied as a matrix."""
        rng = np.random.default_rng(5)
        basis = build_basis(9)
        values = rng.standard_normal(8)
        a = basis.stencil_matrix()
        np.testing.assert_allclose(apply_bilaplacian(Field(basis.mesh, values)).values,
                                   a @ a @ values, rtol=1e-10, atol=1e-8)


class TestInterpolate:
    """Tests for the polygonal interpolation."""

    def setup_method(self):
        self.mesh = Mesh(8)
        self.field = Field.from_function(self.mesh, np.sin)

    def test_exact_at_nodes(self):
        for k in range(1, 8):
            assert interpolate(self.field, k * self.mesh.h) == pytest.approx(self.field[k])

    def test_midpoint(self):
        h = self.mesh.h
        expected = 0.5 * (self.field[3] + self.field[4])
        assert interpolate(self.field, 3.5 * h) == pytest.approx(expected)

    def test_boundary_is_zero(self):
        assert interpolate(self.field, 0.0) == 0.0
        assert interpolate(self.field, math.pi) == 0.0

    def test_outside_domain(self):
        with pytest.raises(DomainError):
            interpolate(self.field, -0.1)
        with pytest.raises(DomainError):
            interpolate(self.field, 4.0)

    def test_weights_reproduce_interpolation(self):
        """Should give weights whose dot product with the values interpolates."""
        for x in (0.3, math.pi / 2, 2.9, math.pi):
            weights = interpolation_weights(self.mesh, x)
            assert weights @ self.field.values == pytest.approx(interpolate(self.field, x))

    def test_polygonal_modes_at_nodes(self):
        """Should equal phi_j at grid nodes."""
        basis = build_basis(8)
        x = 3 * basis.mesh.h
        expected = math.sqrt(2 / math.pi) * np.sin(basis.modes * x)
        np.testing.assert_allclose(basis.polygonal_modes(x), expected, atol=1e-14)
