"""
Brownian-sheet cell increments.

A sheet realization is stored as the m x n array of increments of W over the
rectangles [t_i, t_{i+1}] x [kh, (k+1)h]. Each cell is N(0, (T/m)(pi/n)).
Values come from a counter-based generator keyed by (seed, sample_index), so
a sample is reproducible on its own, whatever the thread or order it runs in.
Coarser levels are produced by summing blocks of cells, never regenerated.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DivisibilityError

logger = logging.getLogger(__name__)

# little-endian header written in front of the row-major increments
HEADER = np.dtype([("m", "<i8"), ("n", "<i8"), ("T", "<f8"),
                   ("seed", "<u8"), ("sample_index", "<i8")])


@dataclass(frozen=True, eq=False)
class SheetIncrements:
    """
    Increments dW[i][k] of a Brownian sheet on [0, T] x [0, pi].

    Args:
        dW (ndarray): m x n array of cell increments
        T (float): Time horizon
        seed (int): Master seed the values were drawn with
        sample_index (int): Monte-Carlo sample the values belong to
    """

    dW: np.ndarray = field(repr=False)
    T: float
    seed: int = 0
    sample_index: int = 0

    def __post_init__(self):
        dW = np.array(self.dW, dtype=float)
        if dW.ndim != 2 or 0 in dW.shape:
            raise ValueError(f"dW must be a non-empty 2-D array, got shape {dW.shape}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        dW.setflags(write=False)
        object.__setattr__(self, "dW", dW)

    @property
    def m(self) -> int:
        """Number of time cells."""
        return self.dW.shape[0]

    @property
    def n(self) -> int:
        """Number of space cells."""
        return self.dW.shape[1]

    @property
    def cell_variance(self) -> float:
        """(T/m)(pi/n)."""
        return self.T / self.m * math.pi / self.n

    def checksum(self) -> float:
        """Sum of all increments, W(T, pi). Preserved by coarsening."""
        return float(np.sum(self.dW))

    def same_values(self, other: "SheetIncrements") -> bool:
        return (self.T == other.T and self.dW.shape == other.dW.shape
                and np.array_equal(self.dW, other.dW))


def _validate_sizes(m: int, n: int, T: float):
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")


def generator_for(seed: int, sample_index: int) -> np.random.Generator:
    """Philox generator keyed by (seed, sample_index)."""
    if seed < 0 or sample_index < 0:
        raise ValueError("seed and sample_index must be non-negative")
    key = np.array([seed, sample_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate(seed: int, sample_index: int, m: int, n: int, T: float) -> SheetIncrements:
    """
    Draw the increments of one sheet realization.

    Normals come from ``Generator.standard_normal`` (ziggurat) on a Philox
    stream keyed by (seed, sample_index), filled row by row.

    Args:
        seed (int): Master seed, 0 <= seed < 2**64
        sample_index (int): Sample number, >= 0
        m (int): Time cells
        n (int): Space cells
        T (float): Time horizon

    Returns:
        SheetIncrements: m x n increments with variance (T/m)(pi/n)

    Raises:
        ValueError: If m, n or T is not positive
    """
    _validate_sizes(m, n, T)
    rng = generator_for(seed, sample_index)
    scale = math.sqrt(T / m * math.pi / n)
    dW = scale * rng.standard_normal((int(m), int(n)))
    return SheetIncrements(dW, float(T), int(seed), int(sample_index))


def coarsen(s: SheetIncrements, time_factor: int, space_factor: int) -> SheetIncrements:
    """
    Sum blocks of time_factor x space_factor cells into one coarse cell.

    Args:
        s (SheetIncrements): Fine increments
        time_factor (int): Must divide s.m
        space_factor (int): Must divide s.n

    Returns:
        SheetIncrements: The coarse increments (``s`` itself for factors (1, 1))

    Raises:
        DivisibilityError: If a factor does not divide the matching dimension
    """
    if time_factor < 1 or space_factor < 1:
        raise DivisibilityError("coarsening factors must be positive")
    if s.m % time_factor or s.n % space_factor:
        raise DivisibilityError(
            f"factors ({time_factor}, {space_factor}) do not divide sheet ({s.m}, {s.n})")
    if time_factor == 1 and space_factor == 1:
        return s
    blocks = s.dW.reshape(s.m // time_factor, time_factor, s.n // space_factor, space_factor)
    return SheetIncrements(blocks.sum(axis=(1, 3)), s.T, s.seed, s.sample_index)


def coarsen_to(s: SheetIncrements, m: int, n: int) -> SheetIncrements:
    """Coarsen to an m x n level nested in the sheet."""
    if m < 1 or n < 1 or s.m % m or s.n % n:
        raise DivisibilityError(f"level ({m}, {n}) is not nested in sheet ({s.m}, {s.n})")
    return coarsen(s, s.m // m, s.n // n)


def to_beta(s: SheetIncrements) -> np.ndarray:
    """
    Scaled increments dbeta_i^k = sqrt(n/pi) dW[i][k] of the cell processes.

    Returns:
        ndarray: m x n array with variance T/m per entry
    """
    return math.sqrt(s.n / math.pi) * s.dW


def dump(s: SheetIncrements, path: Union[str, Path]):
    """Write the header and the row-major increments, little-endian."""
    header = np.array([(s.m, s.n, s.T, s.seed, s.sample_index)], dtype=HEADER)
    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(s.dW, dtype="<f8").tobytes())
    logger.debug(f"wrote {s.m}x{s.n} sheet (sample {s.sample_index}) to {path}")


def load(path: Union[str, Path]) -> SheetIncrements:
    """
    Read a sheet written by :func:`dump`.

    Raises:
        ValueError: If the file is truncated or its header is inconsistent
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.itemsize:
        raise ValueError(f"{path}: file shorter than the header")
    header = np.frombuffer(raw[:HEADER.itemsize], dtype=HEADER)[0]
    m, n = int(header["m"]), int(header["n"])
    _validate_sizes(m, n, float(header["T"]))
    body = raw[HEADER.itemsize:]
    if len(body) != 8 * m * n:
        raise ValueError(f"{path}: expected {m * n} increments, found {len(body) // 8}")
    dW = np.frombuffer(body, dtype="<f8").reshape(m, n).astype(float)
    return SheetIncrements(dW, float(header["T"]), int(header["seed"]),
                           int(header["sample_index"]))
