"""Sampled scalar fields and free-space propagation between parallel planes.

Lengths are in units of the wavelength (``wavelength=1``) and the medium is
vacuum (n = 1). Cells are linearised column-major: ``index = row + rows*col``,
rows run along y and columns along x, and every grid is centred on its own
``center`` (the optical axis by default).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    GeometryMismatch,
    IndexOutOfRange,
    SubWavelengthDistance,
    UndersampledGrid,
)

WAVELENGTH = 1.0
NYQUIST_PITCH = 0.5 * WAVELENGTH
_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice descriptor: ``rows`` x ``cols`` cells of side ``pitch``."""

    rows: int
    cols: int
    pitch: float = NYQUIST_PITCH
    center: tuple[float, float] = (0.0, 0.0)  # (x, y)

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise GeometryMismatch(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.pitch <= 0:
            raise GeometryMismatch(f"pitch must be positive, got {self.pitch}")
        if self.pitch > NYQUIST_PITCH + _TOL:
            raise UndersampledGrid(
                f"pitch {self.pitch} exceeds wavelength/2; propagating modes would alias"
            )
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """1-D x (per column) and y (per row) coordinates."""
        x = (np.arange(self.cols) - (self.cols - 1) / 2) * self.pitch + self.center[0]
        y = (np.arange(self.rows) - (self.rows - 1) / 2) * self.pitch + self.center[1]
        return x, y

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell (x, y) in linear (column-major) order."""
        x, y = self.axes()
        xx, yy = np.meshgrid(x, y)  # shape (rows, cols)
        return xx.ravel(order="F"), yy.ravel(order="F")

    def to_dict(self) -> dict[str, Any]:
        return {"rows": self.rows, "cols": self.cols, "pitch": self.pitch,
                "center": list(self.center)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GridSpec":
        return cls(d["rows"], d["cols"], d.get("pitch", NYQUIST_PITCH),
                   tuple(d.get("center", (0.0, 0.0))))


@dataclass(frozen=True)
class ComplexGrid:
    """A complex field sampled on ``grid``; ``values`` has shape (rows, cols)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 1:
            if v.size != self.grid.size:
                raise GeometryMismatch(f"{v.size} values for a {self.grid.size}-cell grid")
            v = v.reshape(self.grid.shape, order="F")
        if v.shape != self.grid.shape:
            raise GeometryMismatch(f"values shape {v.shape} != grid shape {self.grid.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ComplexGrid":
        return cls(grid, np.zeros(grid.shape, complex))

    def vector(self) -> np.ndarray:
        return self.values.ravel(order="F")


@dataclass(frozen=True)
class ApertureMap:
    """Ordered subset of the cells of ``grid`` that carry light."""

    grid: GridSpec
    kept_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.kept_indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise IndexOutOfRange("aperture keeps no cells")
        if np.any(np.diff(idx) <= 0):
            raise IndexOutOfRange("kept indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.grid.size:
            raise IndexOutOfRange(f"kept indices outside [0, {self.grid.size})")
        idx.setflags(write=False)
        object.__setattr__(self, "kept_indices", idx)

    @property
    def size(self) -> int:
        return int(self.kept_indices.size)

    @classmethod
    def full(cls, grid: GridSpec) -> "ApertureMap":
        return cls(grid, np.arange(grid.size))

    @classmethod
    def centered(cls, grid: GridSpec, rows: int, cols: int) -> "ApertureMap":
        """Keep a rows x cols block in the middle of ``grid``.

        For a parity mismatch the block sits half a cell towards the low
        indices.
        """
        if rows > grid.rows or cols > grid.cols:
            raise IndexOutOfRange(f"{rows}x{cols} block does not fit in {grid.rows}x{grid.cols}")
        r0 = (grid.rows - rows) // 2
        c0 = (grid.cols - cols) // 2
        r, c = np.meshgrid(np.arange(r0, r0 + rows), np.arange(c0, c0 + cols), indexing="ij")
        return cls(grid, np.sort((r + grid.rows * c).ravel()))

    def __eq__(self, other):
        return (isinstance(other, ApertureMap) and self.grid == other.grid
                and np.array_equal(self.kept_indices, other.kept_indices))

    __hash__ = None


def rs_impulse(dx, dy, d, wavelength=WAVELENGTH):
    """Rayleigh-Sommerfeld secondary wave of a point source, without area weight."""
    r = np.sqrt(np.square(dx) + np.square(dy) + d * d)
    return (d / r**2) * (1.0 / (2 * np.pi * r) + 1.0 / (1j * wavelength)) * np.exp(
        2j * np.pi * r / wavelength
    )


def _check_distance(d):
    if d < WAVELENGTH - _TOL:
        raise SubWavelengthDistance(
            f"distance {d} < wavelength; evanescent coupling is outside the model"
        )


def build_rs_kernel(src: GridSpec, dst: GridSpec, d: float) -> "PropagationOperator":
    """Dense propagation matrix; ``matrix[q, p]`` couples src cell p to dst cell q."""
    return PropagationOperator(src, dst, d, form="dense")


def _lattice_shift(src: GridSpec, dst: GridSpec) -> tuple[int, int]:
    """Integer (row, col) offset ``s`` with dst - src coordinates = (k - i + s)*pitch."""
    if abs(src.pitch - dst.pitch) > _TOL:
        raise GeometryMismatch("spectral propagation needs equal pitches")
    p = src.pitch
    sr = (dst.center[1] - src.center[1]) / p - (dst.rows - src.rows) / 2
    sc = (dst.center[0] - src.center[0]) / p - (dst.cols - src.cols) / 2
    if abs(sr - round(sr)) > 1e-9 or abs(sc - round(sc)) > 1e-9:
        raise GeometryMismatch("src and dst grids are not on a common lattice")
    return int(round(sr)), int(round(sc))


class PropagationOperator:
    """Free-space diffraction from ``src`` to ``dst`` over axial distance ``distance``.

    ``form`` selects the discretisation:

    * ``"dense"`` -- explicit matrix of sampled impulse responses (ground truth).
    * ``"convolution"`` -- the same sampled kernel applied as a zero-padded
      linear FFT convolution; agrees with the dense form to round-off.
    * ``"spectral"`` -- angular-spectrum method: band-limited transfer function
      ``exp(j kz d)`` on a canvas ``pad_factor`` times the grid, evanescent
      frequencies zeroed, divided by ``pitch**2`` to share the dense scaling.
    """

    FORMS = ("dense", "convolution", "spectral")

    def __init__(self, src: GridSpec, dst: GridSpec, distance: float, form: str = "dense",
                 pad_factor: int = 2, wavelength: float = WAVELENGTH):
        if form not in self.FORMS:
            raise ValueError(f"unknown propagator form {form!r}")
        _check_distance(distance)
        if wavelength != WAVELENGTH:
            raise ValueError("lengths are normalised to the wavelength; pass wavelength=1")
        self.src = src
        self.dst = dst
        self.distance = float(distance)
        self.wavelength = wavelength
        self.form = form
        self.pad_factor = int(pad_factor)
        self._matrix = None
        self._reverse = None
        if form == "dense":
            self._matrix = self._dense_matrix()
        elif form == "convolution":
            self._shift = _lattice_shift(src, dst)
            self._kernel = self._conv_kernel()
        else:
            if self.pad_factor < 1:
                raise ValueError("pad_factor must be >= 1")
            self._shift = _lattice_shift(src, dst)
            self._setup_spectral()

    def __repr__(self):
        return (f"PropagationOperator({self.src.rows}x{self.src.cols} -> "
                f"{self.dst.rows}x{self.dst.cols}, d={self.distance}, form={self.form!r})")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dst.size, self.src.size)

    def _dense_matrix(self):
        xs, ys = self.src.coords()
        xd, yd = self.dst.coords()
        m = rs_impulse(xd[:, None] - xs[None, :], yd[:, None] - ys[None, :], self.distance)
        m.setflags(write=False)
        return m

    @property
    def matrix(self) -> np.ndarray:
        """Dense N_dst x N_src matrix (materialised on demand for other forms)."""
        if self._matrix is None:
            eye = np.eye(self.src.size, dtype=complex)
            m = self.apply(eye)
            m.setflags(write=False)
            self._matrix = m
        return self._matrix

    def _conv_kernel(self):
        p = self.src.pitch
        sr, sc = self._shift
        mr = np.arange(sr - (self.src.rows - 1), sr + self.dst.rows)
        mc = np.arange(sc - (self.src.cols - 1), sc + self.dst.cols)
        return rs_impulse(mc[None, :] * p, mr[:, None] * p, self.distance)

    def _setup_spectral(self):
        p = self.src.pitch
        sr, sc = self._shift
        # canvas holding both grids, parity matched to src so every cell lands on a sample
        def canvas(n_src, n_dst, s):
            lo = min(0, s)
            hi = max(n_src, n_dst + s)
            extent = hi - lo
            m = self.pad_factor * max(n_src, n_dst, extent)
            return m, -lo + (m - extent) // 2

        self._m_rows, self._r0 = canvas(self.src.rows, self.dst.rows, sr)
        self._m_cols, self._c0 = canvas(self.src.cols, self.dst.cols, sc)
        fy = np.fft.fftfreq(self._m_rows, d=p)
        fx = np.fft.fftfreq(self._m_cols, d=p)
        arg = 1.0 / self.wavelength**2 - fx[None, :] ** 2 - fy[:, None] ** 2
        prop = arg >= 0
        kz = 2 * np.pi * np.sqrt(np.where(prop, arg, 0.0))
        self.transfer = np.where(prop, np.exp(1j * kz * self.distance), 0.0)
        self.transfer.setflags(write=False)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Propagate vectors; ``u`` is (N_src,) or (N_src, batch)."""
        u = np.asarray(u)
        if u.shape[0] != self.src.size:
            raise GeometryMismatch(f"field has {u.shape[0]} cells, operator expects {self.src.size}")
        if self.form == "dense":
            return self._matrix @ u
        squeeze = u.ndim == 1
        ub = u.reshape(self.src.rows, self.src.cols, -1, order="F")
        if self.form == "convolution":
            full = fftconvolve(ub, self._kernel[:, :, None], axes=(0, 1))
            out = full[self.src.rows - 1:self.src.rows - 1 + self.dst.rows,
                       self.src.cols - 1:self.src.cols - 1 + self.dst.cols]
        else:
            canvas = np.zeros((self._m_rows, self._m_cols, ub.shape[2]), complex)
            canvas[self._r0:self._r0 + self.src.rows, self._c0:self._c0 + self.src.cols] = ub
            spec = np.fft.fft2(canvas, axes=(0, 1)) * self.transfer[:, :, None]
            canvas = np.fft.ifft2(spec, axes=(0, 1)) / self.src.pitch**2
            r0 = self._r0 + self._shift[0]
            c0 = self._c0 + self._shift[1]
            out = canvas[r0:r0 + self.dst.rows, c0:c0 + self.dst.cols]
        out = out.reshape(self.dst.size, -1, order="F")
        return out[:, 0] if squeeze else out

    def reverse(self) -> "PropagationOperator":
        """Operator from ``dst`` back to ``src`` over the same distance."""
        if self._reverse is None:
            self._reverse = PropagationOperator(self.dst, self.src, self.distance, self.form,
                                                self.pad_factor, self.wavelength)
        return self._reverse

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        """Conjugate-transpose action ``H^H v``."""
        v = np.asarray(v)
        if v.shape[0] != self.dst.size:
            raise GeometryMismatch(f"adjoint input has {v.shape[0]} cells, expected {self.dst.size}")
        if self.form == "dense":
            return self._matrix.conj().T @ v
        # the kernel is even in the lateral offset, so H^T is the reverse operator
        return np.conj(self.reverse().apply(np.conj(v)))


def propagate(field: ComplexGrid, op: PropagationOperator) -> ComplexGrid:
    if field.grid != op.src:
        raise GeometryMismatch("field grid does not match operator source grid")
    return ComplexGrid(op.dst, op.apply(field.vector()))


def restrict(op: PropagationOperator, input_aperture: ApertureMap,
             output_aperture: ApertureMap) -> np.ndarray:
    """Dense H' with only the kept source columns and kept destination rows."""
    if input_aperture.grid != op.src or output_aperture.grid != op.dst:
        raise GeometryMismatch("apertures must reference the operator's grids")
    m = op.matrix
    return m[np.ix_(output_aperture.kept_indices, input_aperture.kept_indices)]
