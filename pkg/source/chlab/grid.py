"""
Spatial mesh, finite difference operators and the discrete sine basis.

The mesh is x_k = k*h, h = pi/n, k = 0..n. Fields live on the interior nodes
k = 1..n-1 with zero boundary values. The vectors

    e_j(k) = sqrt(2/n) * sin(j*k*h),    j, k = 1..n-1

are an orthonormal eigenbasis of the Dirichlet difference Laplacian with
eigenvalues lambda_{j,n} = -j^2 * c_{j,n}, c_{j,n} = sinc^2(j*pi/(2n)).
The transform onto this basis is the orthonormal DST-I, which is its own
inverse.
"""

import logging
import math
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy import fft

from .errors import DomainError, MeshMismatchError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# points closer than this (in units of h) to a node are treated as the node
_SNAP = 1e-9


class Mesh:
    """
    Uniform mesh on [0, pi] with n subintervals.

    Args:
        n (int): Number of subintervals, at least 2

    Raises:
        ValueError: If n < 2
    """

    def __init__(self, n: int):
        if int(n) != n or n < 2:
            raise ValueError(f"Mesh needs an integer n >= 2, got {n}")
        self._n = int(n)

    @property
    def n(self) -> int:
        """Number of subintervals."""
        return self._n

    @property
    def h(self) -> float:
        """Mesh spacing pi/n."""
        return math.pi / self._n

    @property
    def size(self) -> int:
        """Number of interior nodes."""
        return self._n - 1

    @property
    def nodes(self) -> np.ndarray:
        """All nodes x_0..x_n, boundary included."""
        return self.h * np.arange(self._n + 1)

    @property
    def interior_nodes(self) -> np.ndarray:
        """Interior nodes x_1..x_{n-1}."""
        return self.h * np.arange(1, self._n)

    def cell_index(self, y: ArrayLike) -> np.ndarray:
        """
        Index k of the cell [kh, (k+1)h) containing y; pi maps to n.

        Args:
            y (float or ndarray): Points in [0, pi]

        Returns:
            ndarray: Integer cell indices
        """
        k = np.floor(np.asarray(y, dtype=float) / self.h + _SNAP)
        return np.clip(k, 0, self._n).astype(int)

    def floor_to_grid(self, y: ArrayLike) -> np.ndarray:
        """kappa_n(y) = h * floor(y/h)."""
        return self.h * self.cell_index(y)

    def __eq__(self, other):
        return isinstance(other, Mesh) and other._n == self._n

    def __hash__(self):
        return hash(("Mesh", self._n))

    def __repr__(self):
        return f"Mesh(n={self._n})"


class Field:
    """
    Interior values of a function on the mesh, with zero boundary values.

    Args:
        mesh (Mesh): The mesh the values live on
        values (array_like): n-1 finite interior values

    Raises:
        MeshMismatchError: If the number of values is not n-1
        ValueError: If a value is not finite
    """

    def __init__(self, mesh: Mesh, values):
        values = np.array(values, dtype=float)
        if values.shape != (mesh.size,):
            raise MeshMismatchError(mesh.size, values.size)
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        values.setflags(write=False)
        self._mesh = mesh
        self._values = values

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[np.ndarray], np.ndarray]) -> "Field":
        """Sample a vectorised function at the interior nodes."""
        return cls(mesh, func(mesh.interior_nodes))

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls(mesh, np.zeros(mesh.size))

    @property
    def mesh(self) -> Mesh:
        return self._mesh

    @property
    def values(self) -> np.ndarray:
        """Read-only interior values v_1..v_{n-1}."""
        return self._values

    @property
    def max_norm(self) -> float:
        return float(np.max(np.abs(self._values))) if self._values.size else 0.0

    def with_boundary(self) -> np.ndarray:
        """Values at all nodes x_0..x_n (zeros at both ends)."""
        return np.concatenate(([0.0], self._values, [0.0]))

    def interpolate(self, x: ArrayLike) -> ArrayLike:
        """Polygonal interpolation; see :func:`interpolate`."""
        return interpolate(self, x)

    def _check_same_mesh(self, other: "Field"):
        if not isinstance(other, Field):
            raise TypeError("Can only combine Field with Field")
        if other.mesh != self._mesh:
            raise MeshMismatchError(self._mesh.size, other.mesh.size)

    def __add__(self, other):
        self._check_same_mesh(other)
        return Field(self._mesh, self._values + other.values)

    def __sub__(self, other):
        self._check_same_mesh(other)
        return Field(self._mesh, self._values - other.values)

    def __mul__(self, scalar):
        if not isinstance(scalar, (int, float)):
            raise TypeError("Can only multiply Field by scalar")
        return Field(self._mesh, scalar * self._values)

    def __rmul__(self, scalar):
        return self.__mul__(scalar)

    def __len__(self):
        return self._mesh.size

    def __getitem__(self, k: int) -> float:
        """Value at node k (0 and n are the boundary)."""
        if k < 0 or k > self._mesh.n:
            raise IndexError("node index out of range")
        if k == 0 or k == self._mesh.n:
            return 0.0
        return float(self._values[k - 1])

    def __eq__(self, other):
        return (isinstance(other, Field) and other.mesh == self._mesh
                and np.array_equal(other.values, self._values))

    def __repr__(self):
        return f"Field(n={self._mesh.n}, max_norm={self.max_norm:.6g})"


class SpectralBasis:
    """
    Eigenpairs of the Dirichlet difference Laplacian A_n and the sine transform.

    Args:
        mesh (Mesh): Mesh the basis is built for
    """

    def __init__(self, mesh: Mesh):
        self._mesh = mesh
        n = mesh.n
        j = np.arange(1, n)
        half_angle = j * math.pi / (2 * n)
        c = (np.sin(half_angle) / half_angle) ** 2
        self._modes = j
        self._c = c
        self._eigenvalues = -(j.astype(float) ** 2) * c
        for array in (self._modes, self._c, self._eigenvalues):
            array.setflags(write=False)

    @property
    def mesh(self) -> Mesh:
        return self._mesh

    @property
    def n(self) -> int:
        return self._mesh.n

    @property
    def modes(self) -> np.ndarray:
        """Mode numbers j = 1..n-1."""
        return self._modes

    @property
    def c(self) -> np.ndarray:
        """c_{j,n} = sin^2(j pi/(2n)) / (j pi/(2n))^2."""
        return self._c

    @property
    def eigenvalues(self) -> np.ndarray:
        """lambda_{j,n} = -j^2 c_{j,n}."""
        return self._eigenvalues

    @property
    def continuous_eigenvalues(self) -> np.ndarray:
        """lambda_j = -j^2 of the continuous Dirichlet Laplacian."""
        return -(self._modes.astype(float) ** 2)

    def eigenvalue_gap_bound(self, j: ArrayLike) -> np.ndarray:
        """Upper bound (pi^2/12) j^4 / n^2 on |lambda_j - lambda_{j,n}|."""
        j = np.asarray(j, dtype=float)
        return math.pi ** 2 / 12.0 * j ** 4 / self.n ** 2

    @cached_property
    def matrix(self) -> np.ndarray:
        """Symmetric orthogonal matrix with rows e_j."""
        # reduce j*k modulo the period 2n before scaling, keeps sin arguments small
        jk = (np.outer(self._modes, self._modes) % (2 * self.n)) * self._mesh.h
        matrix = math.sqrt(2.0 / self.n) * np.sin(jk)
        matrix.setflags(write=False)
        return matrix

    def stencil_matrix(self) -> np.ndarray:
        """Dense A_n = (n^2/pi^2) tridiag(1, -2, 1)."""
        size = self._mesh.size
        a = -2.0 * np.eye(size) + np.eye(size, k=1) + np.eye(size, k=-1)
        return a / self._mesh.h ** 2

    def forward(self, values: np.ndarray) -> np.ndarray:
        """
        Coefficients <v, e_j> along the last axis (fast DST-I).

        Args:
            values (ndarray): Array whose last axis has length n-1

        Returns:
            ndarray: Coefficients, same shape

        Raises:
            MeshMismatchError: If the last axis has the wrong length
        """
        values = np.asarray(values, dtype=float)
        self._check_length(values)
        return fft.dst(values, type=1, norm="ortho", axis=-1)

    def inverse(self, coefficients: np.ndarray) -> np.ndarray:
        """Grid values sum_j a_j e_j along the last axis."""
        coefficients = np.asarray(coefficients, dtype=float)
        self._check_length(coefficients, what="coefficient vector")
        return fft.dst(coefficients, type=1, norm="ortho", axis=-1)

    def naive_forward(self, values: np.ndarray) -> np.ndarray:
        """O(n^2) matrix route, kept as the oracle for :meth:`forward`."""
        values = np.asarray(values, dtype=float)
        self._check_length(values)
        return values @ self.matrix.T

    def polygonal_modes(self, x: ArrayLike) -> np.ndarray:
        """
        phi_{j,n}(x): polygonal interpolant of phi_j = sqrt(2/pi) sin(j.) from the nodes.

        Args:
            x (float or ndarray): Points in [0, pi]

        Returns:
            ndarray: Shape x.shape + (n-1,)
        """
        x = _check_domain(x)
        mesh = self._mesh
        k = np.minimum(mesh.cell_index(x), mesh.n - 1)
        weight = (x / mesh.h - k)[..., None]
        j = self._modes
        left = np.sin(np.multiply.outer(k * mesh.h, j))
        right = np.sin(np.multiply.outer((k + 1) * mesh.h, j))
        return math.sqrt(2.0 / math.pi) * (left + weight * (right - left))

    def grid_modes(self, y: ArrayLike) -> np.ndarray:
        """phi_j(kappa_n(y)), shape y.shape + (n-1,)."""
        y = _check_domain(y)
        return math.sqrt(2.0 / math.pi) * np.sin(
            np.multiply.outer(self._mesh.floor_to_grid(y), self._modes))

    def _check_length(self, array: np.ndarray, what: str = "field"):
        if array.shape[-1:] != (self._mesh.size,):
            got = array.shape[-1] if array.ndim else 1
            raise MeshMismatchError(self._mesh.size, got, what=what)

    def __repr__(self):
        return f"SpectralBasis(n={self.n})"


def build_basis(n: int) -> SpectralBasis:
    """
    Build the eigenbasis of A_n for a mesh with n subintervals.

    Args:
        n (int): Number of subintervals

    Returns:
        SpectralBasis: Eigenvalues, c_{j,n} and the transform

    Raises:
        ValueError: If n < 2
    """
    basis = SpectralBasis(Mesh(n))
    logger.debug(f"built spectral basis for n={n}")
    return basis


def dst_forward(f: Field, basis: SpectralBasis) -> np.ndarray:
    """Coefficient vector of a field in the basis e_1..e_{n-1}."""
    _check_plan(f.mesh, basis)
    return basis.forward(f.values)


def dst_inverse(coefficients: np.ndarray, basis: SpectralBasis) -> Field:
    """Field with the given coefficients in the basis e_1..e_{n-1}."""
    return Field(basis.mesh, basis.inverse(coefficients))


def apply_laplacian(f: Field) -> Field:
    """
    delta_h f with zero Dirichlet boundary.

    Args:
        f (Field): Input field

    Returns:
        Field: (v_{k-1} - 2 v_k + v_{k+1}) / h^2
    """
    w = f.with_boundary()
    return Field(f.mesh, (w[:-2] - 2.0 * w[1:-1] + w[2:]) / f.mesh.h ** 2)


def apply_bilaplacian(f: Field) -> Field:
    """
    delta_h^2 f with the antisymmetric ghost values u(-h) = -u(h), u((n+1)h) = -u((n-1)h).

    The result equals A_n^2 applied to the interior values.
    """
    w = f.with_boundary()
    # ghost nodes x_{-1} and x_{n+1}
    padded = np.concatenate(([-w[1]], w, [-w[-2]]))
    result = (padded[:-4] - 4.0 * padded[1:-3] + 6.0 * padded[2:-2]
              - 4.0 * padded[3:-1] + padded[4:]) / f.mesh.h ** 4
    return Field(f.mesh, result)


def interpolate(f: Field, x: ArrayLike) -> ArrayLike:
    """
    Polygonal interpolation of a field at points of [0, pi].

    Args:
        f (Field): Field to evaluate
        x (float or ndarray): Points in [0, pi]

    Returns:
        float or ndarray: Interpolated values; exact at nodes, 0 at 0 and pi

    Raises:
        DomainError: If a point lies outside [0, pi]
    """
    x = _check_domain(x)
    values = np.interp(x, f.mesh.nodes, f.with_boundary())
    return float(values) if values.ndim == 0 else values


def interpolation_weights(mesh: Mesh, x: float) -> np.ndarray:
    """Weights w with interpolate(f, x) == w @ f.values."""
    x = float(_check_domain(x))
    weights = np.zeros(mesh.n + 1)
    k = min(int(mesh.cell_index(x)), mesh.n - 1)
    theta = x / mesh.h - k
    weights[k] = 1.0 - theta
    weights[k + 1] += theta
    return weights[1:-1]


def _check_domain(x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-12) or np.any(x > math.pi + 1e-12):
        raise DomainError("evaluation points must lie in [0, pi]")
    return np.clip(x, 0.0, math.pi)


def _check_plan(mesh: Mesh, basis: SpectralBasis):
    if mesh != basis.mesh:
        raise MeshMismatchError(basis.mesh.size, mesh.size)
