"""Periodic grids, spectral calculus, fields and smooth cutoffs."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft as sfft


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^d``.

    Parameters
    ----------
    dimension : int
        Spatial dimension, 1 or 2.
    box_length : tuple of float
        Box length per axis.
    n_points : tuple of int
        Number of points per axis; powers of two.
    """

    dimension: int
    box_length: tuple[float, ...]
    n_points: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if len(self.box_length) != self.dimension or len(self.n_points) != self.dimension:
            raise ValueError("box_length and n_points need one entry per axis")
        for n in self.n_points:
            if not _is_pow2(int(n)):
                raise ValueError(f"n_points must be powers of two, got {n}")
        for length in self.box_length:
            if not length > 0:
                raise ValueError("box_length must be positive")

    @classmethod
    def cube(cls, dimension: int, box_length: float, n_points: int) -> "Grid":
        return cls(dimension, (float(box_length),) * dimension, (int(n_points),) * dimension)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.n_points)

    @cached_property
    def dx(self) -> tuple[float, ...]:
        return tuple(length / n for length, n in zip(self.box_length, self.n_points))

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            -0.5 * length + h * np.arange(n)
            for length, h, n in zip(self.box_length, self.dx, self.n_points)
        )

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        if self.dimension == 1:
            return (self.axes[0],)
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        ks = tuple(
            2.0 * np.pi * sfft.fftfreq(n, d=h) for n, h in zip(self.n_points, self.dx)
        )
        if self.dimension == 1:
            return ks
        return tuple(np.meshgrid(*ks, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k * k for k in self.wavenumbers)

    @cached_property
    def kmax(self) -> float:
        return float(min(np.pi / h for h in self.dx))

    def radius(self, center: Sequence[float] | None = None) -> np.ndarray:
        """Distance ``|x - center|`` using the minimum periodic image."""
        c = np.zeros(self.dimension) if center is None else np.asarray(center, float)
        acc = np.zeros(self.shape)
        for axis, (xi, ci, length) in enumerate(zip(self.mesh, c, self.box_length)):
            dxi = xi - ci
            dxi = dxi - length * np.round(dxi / length)
            acc = acc + dxi * dxi
        return np.sqrt(acc)

    def displacement(self, center: Sequence[float] | None = None) -> tuple[np.ndarray, ...]:
        """Componentwise ``x - center`` wrapped to the minimum image."""
        c = np.zeros(self.dimension) if center is None else np.asarray(center, float)
        out = []
        for xi, ci, length in zip(self.mesh, c, self.box_length):
            dxi = xi - ci
            out.append(dxi - length * np.round(dxi / length))
        return tuple(out)

    # spectral calculus ------------------------------------------------
    def fft(self, f: np.ndarray) -> np.ndarray:
        return sfft.fftn(f, axes=tuple(range(self.dimension)))

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.ifftn(fh, axes=tuple(range(self.dimension)))

    def gradient(self, f: np.ndarray) -> tuple[np.ndarray, ...]:
        fh = self.fft(f)
        out = tuple(self.ifft(1j * k * fh) for k in self.wavenumbers)
        if np.isrealobj(f):
            out = tuple(g.real for g in out)
        return out

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        g = self.ifft(-self.k2 * self.fft(f))
        return g.real if np.isrealobj(f) else g

    def integrate(self, f: np.ndarray) -> float | complex:
        """Trapezoid (spectrally exact for band-limited periodic) quadrature."""
        return f.sum() * self.cell_volume

    def grad_norm_sq(self, f: np.ndarray) -> float:
        """``∫|∇f|²`` evaluated in Fourier space (Parseval)."""
        fh = self.fft(f)
        n_total = float(np.prod(self.shape))
        return float(np.sum(self.k2 * np.abs(fh) ** 2) * self.cell_volume / n_total)

    def sobolev_norm(self, f: np.ndarray, s: float) -> float:
        """``‖(1+|ξ|²)^{s/2} f̂‖`` normalised so that s=0 gives the L² norm."""
        fh = self.fft(f)
        n_total = float(np.prod(self.shape))
        w = (1.0 + self.k2) ** s
        return float(np.sqrt(np.sum(w * np.abs(fh) ** 2) * self.cell_volume / n_total))

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.dimension, self.box_length, tuple(n * factor for n in self.n_points))


@dataclass(frozen=True, eq=False)
class Field:
    """Complex samples of a solution on a periodic grid at one instant."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.grid.shape}")

    def with_values(self, values: np.ndarray, time: float | None = None) -> "Field":
        return replace(self, values=values, time=self.time if time is None else time)

    @property
    def dimension(self) -> int:
        return self.grid.dimension


# smooth cutoffs -------------------------------------------------------------
def smoothstep(t: np.ndarray | float) -> np.ndarray:
    """C² quintic ramp: 0 for t ≤ 0, 1 for t ≥ 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def smoothstep_derivatives(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of :func:`smoothstep` in ``t``."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    d1 = np.where(inside, 30.0 * tc * tc * (1.0 - tc) ** 2, 0.0)
    d2 = np.where(inside, 60.0 * tc * (1.0 - tc) * (1.0 - 2.0 * tc), 0.0)
    return d1, d2


def plateau(r: np.ndarray | float, inner: float, outer: float) -> np.ndarray:
    """Radial cutoff: 1 for r ≤ inner, 0 for r ≥ outer, C² smoothstep between."""
    if not outer > inner:
        raise ValueError("outer radius must exceed inner radius")
    return 1.0 - smoothstep((np.asarray(r, float) - inner) / (outer - inner))


def plateau_derivatives(r: np.ndarray, inner: float, outer: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values, first and second radial derivatives of :func:`plateau`."""
    w = outer - inner
    t = (np.asarray(r, float) - inner) / w
    d1, d2 = smoothstep_derivatives(t)
    return 1.0 - smoothstep(t), -d1 / w, -d2 / (w * w)
