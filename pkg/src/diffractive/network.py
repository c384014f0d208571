"""Trainable diffractive surfaces and the K-layer forward model."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GeometryMismatch, SizeGuardExceeded, StaleCache
from .field import ApertureMap, GridSpec, PropagationOperator, build_rs_kernel, restrict

MODES = ("phase", "complex")
DEFAULT_MAX_ENTRIES = 2**20


_A_MIN = np.finfo(float).tiny
_A_MAX = 1.0 - 2 * np.finfo(float).eps


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class SurfaceParams:
    """One diffractive surface; parameters are indexed in column-major cell order."""

    grid: GridSpec
    raw_phase: np.ndarray
    raw_amplitude: np.ndarray
    mode: str = "phase"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.raw_phase = np.array(self.raw_phase, dtype=float).ravel()
        self.raw_amplitude = np.array(self.raw_amplitude, dtype=float).ravel()
        n = self.grid.size
        if self.raw_phase.size != n or self.raw_amplitude.size != n:
            raise GeometryMismatch(f"surface needs {n} phase and amplitude values")

    @classmethod
    def init(cls, grid: GridSpec, mode: str = "phase", rng=None) -> "SurfaceParams":
        """Uniform random phase in [0, 2pi), amplitude half way (sigmoid(0))."""
        rng = np.random.default_rng(rng)
        return cls(grid, rng.uniform(0.0, 2 * np.pi, grid.size), np.zeros(grid.size), mode)

    @property
    def size(self) -> int:
        return self.grid.size

    def copy(self) -> "SurfaceParams":
        return SurfaceParams(self.grid, self.raw_phase.copy(), self.raw_amplitude.copy(), self.mode)


def realize_transmittance(surface: SurfaceParams) -> np.ndarray:
    phase = np.mod(surface.raw_phase, 2 * np.pi)
    unit = np.exp(1j * phase)
    if surface.mode == "phase":
        return unit
    return amplitude(surface.raw_amplitude) * unit


def amplitude(raw) -> np.ndarray:
    """sigmoid(raw) held inside the open interval (0, 1).

    The upper clamp leaves room for the rounding of |exp(j phi)|, so the
    realised modulus never exceeds 1 in floating point.
    """
    return np.clip(sigmoid(raw), _A_MIN, _A_MAX)


class _Link:
    """Propagation between two planes, with optional source/destination cell selection."""

    def __init__(self, op: PropagationOperator, keep_in=None, keep_out=None):
        self.op = op
        self.keep_in = None if keep_in is None else np.asarray(keep_in)
        self.keep_out = None if keep_out is None else np.asarray(keep_out)
        self.n_in = op.src.size if keep_in is None else len(keep_in)
        self.n_out = op.dst.size if keep_out is None else len(keep_out)
        self.matrix = None
        if op.form == "dense":
            src = ApertureMap.full(op.src) if keep_in is None else ApertureMap(op.src, keep_in)
            dst = ApertureMap.full(op.dst) if keep_out is None else ApertureMap(op.dst, keep_out)
            self.matrix = restrict(op, src, dst)

    @staticmethod
    def _embed(v, keep, n):
        if keep is None:
            return v
        out = np.zeros((n,) + v.shape[1:], dtype=complex)
        out[keep] = v
        return out

    def apply(self, u):
        if self.matrix is not None:
            return self.matrix @ u
        y = self.op.apply(self._embed(u, self.keep_in, self.op.src.size))
        return y if self.keep_out is None else y[self.keep_out]

    def adjoint(self, v):
        if self.matrix is not None:
            return self.matrix.conj().T @ v
        g = self.op.adjoint(self._embed(v, self.keep_out, self.op.dst.size))
        return g if self.keep_in is None else g[self.keep_in]


@dataclass
class NetworkSpec:
    """K diffractive surfaces between an input and an output aperture.

    ``distances`` holds the K+1 axial gaps: input plane to surface 1, between
    consecutive surfaces, and surface K to the output plane. ``form`` picks the
    propagator discretisation used by :func:`forward`.
    """

    input_aperture: ApertureMap
    output_aperture: ApertureMap
    layers: list[SurfaceParams]
    distances: Sequence[float]
    form: str = "dense"
    seed: int | None = None
    _links: list | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise GeometryMismatch("a network needs at least one surface")
        self.distances = [float(d) for d in self.distances]
        if len(self.distances) != len(self.layers) + 1:
            raise GeometryMismatch(
                f"{len(self.layers)} surfaces need {len(self.layers) + 1} distances, "
                f"got {len(self.distances)}"
            )

    @property
    def K(self) -> int:
        return len(self.layers)

    @property
    def n_in(self) -> int:
        return self.input_aperture.size

    @property
    def n_out(self) -> int:
        return self.output_aperture.size

    @property
    def layer_sizes(self) -> list[int]:
        return [s.size for s in self.layers]

    @classmethod
    def build(cls, input_grid: GridSpec, output_grid: GridSpec, layer_grids: Sequence[GridSpec],
              distances: Sequence[float], mode: str = "phase", seed=None, form: str = "dense",
              input_aperture: ApertureMap | None = None,
              output_aperture: ApertureMap | None = None) -> "NetworkSpec":
        """Fresh network with seeded random initial surfaces."""
        rng = np.random.default_rng(seed)
        layers = [SurfaceParams.init(g, mode, rng) for g in layer_grids]
        return cls(input_aperture or ApertureMap.full(input_grid),
                   output_aperture or ApertureMap.full(output_grid),
                   layers, distances, form, seed)

    def links(self) -> list[_Link]:
        if self._links is None:
            planes = [self.input_aperture.grid] + [s.grid for s in self.layers] + [
                self.output_aperture.grid
            ]
            links = []
            for k in range(self.K + 1):
                op = PropagationOperator(planes[k], planes[k + 1], self.distances[k], self.form)
                keep_in = self.input_aperture.kept_indices if k == 0 else None
                keep_out = self.output_aperture.kept_indices if k == self.K else None
                links.append(_Link(op, keep_in, keep_out))
            self._links = links
        return self._links

    def transmittances(self) -> list[np.ndarray]:
        return [realize_transmittance(s) for s in self.layers]

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for s in self.layers:
            h.update(s.mode.encode())
            h.update(s.raw_phase.tobytes())
            h.update(s.raw_amplitude.tobytes())
        return h.hexdigest()

    def copy(self) -> "NetworkSpec":
        net = NetworkSpec(self.input_aperture, self.output_aperture,
                          [s.copy() for s in self.layers], list(self.distances), self.form,
                          self.seed)
        net._links = self._links
        return net


@dataclass
class ForwardCache:
    incident: list[np.ndarray]        # field arriving at each surface, before modulation
    transmittances: list[np.ndarray]
    output: np.ndarray
    fingerprint: str


def forward(net: NetworkSpec, x, transmittances=None) -> tuple[np.ndarray, ForwardCache]:
    """Output-aperture field for input ``x`` of shape (N_i,) or (N_i, batch)."""
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != net.n_in:
        raise GeometryMismatch(f"input has {x.shape[0]} cells, aperture has {net.n_in}")
    ts = net.transmittances() if transmittances is None else transmittances
    links = net.links()
    incident = []
    u = links[0].apply(x)
    for k, t in enumerate(ts):
        incident.append(u)
        tk = t if u.ndim == 1 else t[:, None]
        u = links[k + 1].apply(tk * u)
    fp = net.fingerprint() if transmittances is None else ""
    return u, ForwardCache(incident, ts, u, fp)


def backward(net: NetworkSpec, cache: ForwardCache, grad_out) -> list[dict[str, np.ndarray]]:
    """Gradients of a real loss w.r.t. each surface's raw parameters.

    ``grad_out`` is dL/dRe(y) + j dL/dIm(y) for the output field ``y``; for a
    batch it has the shape of the output and contributions are summed over the
    batch. Phase-only surfaces return a zero amplitude gradient.
    """
    if cache.fingerprint != net.fingerprint():
        raise StaleCache("parameters changed since the forward pass")
    links = net.links()
    g = np.asarray(grad_out, dtype=complex)
    grads: list[dict[str, np.ndarray]] = [None] * net.K
    for k in range(net.K - 1, -1, -1):
        g_leave = links[k + 1].adjoint(g)
        u = cache.incident[k]
        t = cache.transmittances[k]
        tb = t if g_leave.ndim == 1 else t[:, None]
        g_t = np.conj(u) * g_leave
        if g_t.ndim > 1:
            g_t = g_t.sum(axis=1)
        surface = net.layers[k]
        d_phase = np.real(np.conj(g_t) * (1j * t))
        if surface.mode == "complex":
            s = sigmoid(surface.raw_amplitude)
            unit = np.exp(1j * np.mod(surface.raw_phase, 2 * np.pi))
            d_amp = np.real(np.conj(g_t) * (s * (1 - s) * unit))
        else:
            d_amp = np.zeros_like(d_phase)
        grads[k] = {"phase": d_phase, "amplitude": d_amp}
        g = np.conj(tb) * g_leave
    return grads


def assemble_operator(net: NetworkSpec, transmittances=None,
                      max_entries: int = DEFAULT_MAX_ENTRIES) -> np.ndarray:
    """End-to-end N_o x N_i matrix A with y = A x."""
    if net.n_in * net.n_out > max_entries:
        raise SizeGuardExceeded(
            f"A would have {net.n_in * net.n_out} entries (limit {max_entries})"
        )
    ts = net.transmittances() if transmittances is None else transmittances
    links = net.links()
    a = links[0].apply(np.eye(net.n_in, dtype=complex))
    for k, t in enumerate(ts):
        a = links[k + 1].apply(t[:, None] * a)
    return a


def lattice_registered(shape: tuple[int, int], host: GridSpec) -> GridSpec:
    """Grid of ``shape`` placed on the lattice of ``host`` as close to centred as possible."""
    r0 = (host.rows - shape[0]) // 2
    c0 = (host.cols - shape[1]) // 2
    x, y = host.axes()
    cx = 0.5 * (x[c0] + x[c0 + shape[1] - 1])
    cy = 0.5 * (y[r0] + y[r0 + shape[0] - 1])
    return GridSpec(shape[0], shape[1], host.pitch, (cx, cy))


def _lattice_indices(grid: GridSpec, host: GridSpec) -> np.ndarray:
    """Linear indices in ``host`` of every cell of ``grid``."""
    xh, yh = host.axes()
    x, y = grid.coords()
    c = (x - xh[0]) / host.pitch
    r = (y - yh[0]) / host.pitch
    ci, ri = np.rint(c).astype(int), np.rint(r).astype(int)
    if (np.abs(c - ci).max() > 1e-9 or np.abs(r - ri).max() > 1e-9 or ci.min() < 0
            or ri.min() < 0 or ci.max() >= host.cols or ri.max() >= host.rows):
        raise GeometryMismatch("surface does not sit on the lattice of the largest surface")
    return ri + host.rows * ci


def padded_chain(net: NetworkSpec, transmittances=None) -> list[np.ndarray]:
    """Explicit matrix factors of A on a common N_x-cell plane.

    Every surface is embedded in the grid of the largest one, so each diagonal
    transmittance matrix is N_x x N_x and smaller surfaces contribute
    structural zeros. Returns ``[H'_1, T_1, H_2, T_2, ..., T_K, H'_{K+1}]``,
    whose right-to-left product equals :func:`assemble_operator`.
    """
    ts = net.transmittances() if transmittances is None else transmittances
    host = max((s.grid for s in net.layers), key=lambda g: g.size)
    full_host = ApertureMap.full(host)
    mats = [restrict(build_rs_kernel(net.input_aperture.grid, host, net.distances[0]),
                     net.input_aperture, full_host)]
    for k, (s, t) in enumerate(zip(net.layers, ts)):
        diag = np.zeros(host.size, complex)
        diag[_lattice_indices(s.grid, host)] = t
        mats.append(np.diag(diag))
        if k < net.K - 1:
            mats.append(build_rs_kernel(host, host, net.distances[k + 1]).matrix)
    mats.append(restrict(build_rs_kernel(host, net.output_aperture.grid, net.distances[-1]),
                         full_host, net.output_aperture))
    return mats
