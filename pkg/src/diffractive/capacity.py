"""Dimensionality of the set of end-to-end transforms a diffractive network can reach.

The attainable set {vec(A(t))} is the image of a polynomial map in the complex
transmittances, so its dimension is the rank of the holomorphic Jacobian at a
generic point. This module builds that Jacobian, estimates its rank by SVD with
a spectral-gap check, evaluates the closed-form law, and runs the two-surface
coefficient/basis generation procedure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateBasePoint,
    EmptyLayer,
    EmptyLayerList,
    LengthMismatch,
    SizeGuardExceeded,
)
from .field import ApertureMap, GridSpec
from .network import DEFAULT_MAX_ENTRIES, NetworkSpec, SurfaceParams

DEFAULT_RTOL = 1e-8
MIN_GAP_RATIO = 1e3


def vectorize(a: np.ndarray) -> np.ndarray:
    """Column-order stacking: ``out[r + rows*c] = a[r, c]``."""
    return np.asarray(a).ravel(order="F")


def kron_diag_apply(t1, t2, h) -> np.ndarray:
    """(T1 (x) T2) h for diagonal T1, T2, evaluated as an elementwise product."""
    t1 = np.asarray(t1)
    t2 = np.asarray(t2)
    h = np.asarray(h)
    if h.shape[0] != t1.size * t2.size:
        raise LengthMismatch(f"h has {h.shape[0]} entries, expected {t1.size * t2.size}")
    return h * np.kron(t1, t2)


@dataclass
class CapacityJacobian:
    matrix: np.ndarray                           # (N_o*N_i, sum N_Lk)
    param_index: list[tuple[int, int]]           # column -> (layer, neuron)
    base_point: list[np.ndarray]
    n_in: int
    n_out: int
    layer_sizes: list[int]
    equal_distances: bool = False                # K=1 with d1 == d2


@dataclass
class RankReport:
    singular_values: np.ndarray
    threshold: float
    estimated_rank: int
    predicted_rank: int | None
    gap_ratio: float

    @property
    def matches(self) -> bool:
        return self.predicted_rank is not None and self.estimated_rank == self.predicted_rank

    def to_dict(self) -> dict:
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "threshold": float(self.threshold),
            "estimated_rank": int(self.estimated_rank),
            "predicted_rank": None if self.predicted_rank is None else int(self.predicted_rank),
            "gap_ratio": float(self.gap_ratio) if np.isfinite(self.gap_ratio) else "inf",
        }


def _partial_products(net: NetworkSpec, ts: Sequence[np.ndarray]):
    """Left factors P_k (N_o x N_Lk) and right factors Q_k (N_Lk x N_i) with A = P_k T_k Q_k."""
    links = net.links()
    q = [None] * net.K
    u = links[0].apply(np.eye(net.n_in, dtype=complex))
    for k, t in enumerate(ts):
        q[k] = u
        u = links[k + 1].apply(t[:, None] * u)
    p = [None] * net.K
    # rows of P_k are obtained from the adjoint chain applied to the output basis
    g = links[net.K].adjoint(np.eye(net.n_out, dtype=complex))   # (N_LK, N_o) = P_K^H
    for k in range(net.K - 1, -1, -1):
        p[k] = g.conj().T
        if k > 0:
            g = links[k].adjoint(np.conj(ts[k])[:, None] * g)
    return p, q


def build_jacobian(net: NetworkSpec, base: Sequence[np.ndarray] | None = None,
                   max_entries: int = DEFAULT_MAX_ENTRIES) -> CapacityJacobian:
    """d vec(A) / d t at ``base`` (complex transmittances, one array per surface).

    Column (k, i) is vec of the chain with T_k replaced by the single-entry
    indicator E_ii, i.e. the outer product P_k[:, i] Q_k[i, :].
    """
    ts = net.transmittances() if base is None else [np.asarray(t, complex) for t in base]
    n_params = sum(net.layer_sizes)
    if net.n_in * net.n_out * n_params > max_entries * 64:
        raise SizeGuardExceeded("Jacobian too large for dense evaluation")
    if net.n_in * net.n_out > max_entries:
        raise SizeGuardExceeded("A too large for dense assembly")
    p, q = _partial_products(net, ts)
    cols = []
    index = []
    for k in range(net.K):
        # row index c*N_o + r, matching column-order vectorisation
        jk = np.einsum("ri,ic->cri", p[k], q[k]).reshape(net.n_in * net.n_out, -1)
        cols.append(jk)
        index.extend((k, i) for i in range(net.layer_sizes[k]))
    equal = net.K == 1 and abs(net.distances[0] - net.distances[1]) < 1e-12
    return CapacityJacobian(np.hstack(cols), index, [t.copy() for t in ts], net.n_in,
                            net.n_out, net.layer_sizes, equal)


def predicted_dimension(n_fov: int, layer_sizes: Sequence[int], d1_equals_d2: bool = False,
                        n_out: int | None = None) -> int:
    """min(N_i N_o, sum N_Lk - (K-1)); a single surface with d1 == d2 caps at (N^2+N)/2.

    ``n_fov`` is N_i; ``n_out`` defaults to it.
    """
    sizes = list(layer_sizes)
    if not sizes:
        raise EmptyLayerList("at least one layer size is required")
    n_out = n_fov if n_out is None else n_out
    k = len(sizes)
    cap = n_fov * n_out
    if k == 1 and d1_equals_d2:
        cap = min(cap, (n_fov * n_out + min(n_fov, n_out)) // 2)
    return min(cap, sum(sizes) - (k - 1))


def estimate_dimension(jac: CapacityJacobian, rtol: float = DEFAULT_RTOL) -> RankReport:
    s = np.linalg.svd(jac.matrix, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        raise DegenerateBasePoint("Jacobian vanishes at the base point")
    threshold = s[0] * rtol
    r = int(np.count_nonzero(s >= threshold))
    gap = np.inf if r >= s.size else float(s[r - 1] / s[r]) if s[r] > 0 else np.inf
    predicted = predicted_dimension(jac.n_in, jac.layer_sizes, jac.equal_distances, jac.n_out)
    return RankReport(s, threshold, r, predicted, gap)


DISTANCE_RANGE = (1.1, 2.5)


def sample_distances(n: int, rng, low: float = DISTANCE_RANGE[0], high: float = DISTANCE_RANGE[1],
                     min_separation: float = 0.05) -> list[float]:
    """Generic axial gaps: uniform in [low, high], pairwise at least ``min_separation`` apart."""
    rng = np.random.default_rng(rng)
    while True:
        d = rng.uniform(low, high, n)
        if n < 2 or np.min(np.diff(np.sort(d))) >= min_separation:
            return [float(v) for v in d]


def _grid_for(size: int, pitch: float = 0.5) -> GridSpec:
    """Most nearly square rows x cols grid with rows*cols == size."""
    rows = int(np.floor(np.sqrt(size)))
    while size % rows:
        rows -= 1
    return GridSpec(rows, size // rows, pitch)


def random_capacity_network(n_fov: int, layer_sizes: Sequence[int], rng,
                            equal_distances: bool = False, distance: float = 2.0,
                            fov_shape: tuple[int, int] | None = None,
                            jitter: bool | None = None,
                            distance_range: tuple[float, float] = DISTANCE_RANGE) -> NetworkSpec:
    """Network with generic geometry and complex-mode surfaces for rank experiments.

    With ``jitter`` each surface is shifted laterally by a random sub-cell
    offset. It defaults to on for equal distances: mirror-symmetric centred
    layouts with d1 == d2 have extra exact degeneracies below the generic cap.
    """
    rng = np.random.default_rng(rng)
    if jitter is None:
        jitter = equal_distances
    fov = GridSpec(*fov_shape) if fov_shape else _grid_for(n_fov)
    k = len(layer_sizes)
    if equal_distances:
        if k != 1:
            raise ValueError("equal distances are only meaningful for a single surface")
        dists = [distance, distance]
    else:
        dists = sample_distances(k + 1, rng, *distance_range)
    grids = []
    for n in layer_sizes:
        g = _grid_for(n)
        if jitter:
            off = rng.uniform(-0.5, 0.5, 2) * g.pitch
            g = GridSpec(g.rows, g.cols, g.pitch, (float(off[0]), float(off[1])))
        grids.append(g)
    layers = [SurfaceParams.init(g, "complex", rng) for g in grids]
    return NetworkSpec(ApertureMap.full(fov), ApertureMap.full(fov), layers, dists)


def random_base_point(net: NetworkSpec, rng) -> list[np.ndarray]:
    """Generic complex transmittances, uniform in the unit disk."""
    rng = np.random.default_rng(rng)
    out = []
    for n in net.layer_sizes:
        r = np.sqrt(rng.uniform(0, 1, n))
        out.append(r * np.exp(1j * rng.uniform(0, 2 * np.pi, n)))
    return out


def rank_case(n_fov: int, layer_sizes: Sequence[int], seed: int, equal_distances: bool = False,
              distance: float = 2.0, rtol: float = DEFAULT_RTOL,
              min_gap: float = MIN_GAP_RATIO, max_resample: int = 3, jitter: bool | None = None,
              distance_range: tuple[float, float] = DISTANCE_RANGE):
    """Estimate the generic rank for one configuration.

    A geometry whose spectrum shows no clean gap at the cut is treated as
    non-generic and resampled, at most ``max_resample`` times. Returns
    ``(report, net, attempts)``.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(1, max_resample + 2):
        net = random_capacity_network(n_fov, layer_sizes, rng, equal_distances, distance,
                                      jitter=jitter, distance_range=distance_range)
        jac = build_jacobian(net, random_base_point(net, rng))
        report = estimate_dimension(jac, rtol)
        if report.gap_ratio > min_gap:
            break
    return report, net, attempt


# --- two-surface coefficient / basis generation -------------------------------------------


@dataclass
class BasisStep:
    layer: int          # 0 for the first surface, 1 for the second, -1 for the seeding pair
    index: int | tuple[int, int]
    coefficient: complex
    basis: np.ndarray
    pairs: list[tuple[int, int]]


@dataclass
class BasisGenReport:
    steps: list[BasisStep]
    consumed_h_count: int
    chunk_lengths: list[int]
    first_chunk_layer: int | None = None
    consumed_pairs: set = field(default_factory=set)

    def reconstruct(self) -> np.ndarray:
        return sum(s.coefficient * s.basis for s in self.steps)


def sample_disk(rng, n: int, r_min: float = 0.1) -> np.ndarray:
    """Uniform samples from the unit disk with the disk of radius ``r_min`` removed."""
    r = np.sqrt(rng.uniform(r_min**2, 1.0, n))
    return r * np.exp(1j * rng.uniform(0, 2 * np.pi, n))


def h_vectors(net: NetworkSpec, index_pairs: bool = False) -> np.ndarray:
    """Columns h_ij of a two-surface network, ordered by ``j + N_L2 * i``.

    h_ij = H_2[j, i] * (H'_1[i, :]^T (x) H'_3[:, j]) is the contribution of the
    path through neuron i of the first surface and neuron j of the second.
    """
    if net.K != 2:
        raise ValueError("h_ij vectors are defined for two-surface networks")
    links = net.links()
    h1 = links[0].apply(np.eye(net.n_in, dtype=complex))          # (N_L1, N_i)
    h2 = links[1].apply(np.eye(net.layer_sizes[0], dtype=complex))  # (N_L2, N_L1)
    h3 = links[2].apply(np.eye(net.layer_sizes[1], dtype=complex))  # (N_o, N_L2)
    # out[c*N_o + r, i, j] = h1[i, c] h2[j, i] h3[r, j]
    cube = np.einsum("ic,ji,rj->crij", h1, h2, h3)
    return cube.reshape(net.n_in * net.n_out, -1)


def generate_basis(t1, t2, h_set, rng=None) -> BasisGenReport:
    """Coefficient/basis generation for a two-surface network.

    ``h_set`` holds the N_L1*N_L2 vectors h_ij as columns ordered ``j + N_L2*i``.
    ``t1``/``t2`` may be None, in which case values are drawn from the unit disk
    minus a small neighbourhood of the origin when each neuron is consumed.
    Each step consumes one neuron from a randomly chosen non-exhausted surface;
    its coefficient is that neuron's transmittance and its basis vector sums
    h_ij over the already consumed neurons of the opposite surface.
    """
    rng = np.random.default_rng(rng)
    h_set = np.asarray(h_set)
    if t1 is not None:
        n1 = len(t1)
    if t2 is not None:
        n2 = len(t2)
    if t1 is None or t2 is None:
        n_total = h_set.shape[1]
        if t1 is None and t2 is None:
            raise ValueError("give at least one of t1, t2 to fix the layer sizes")
        if t1 is None:
            n1 = n_total // n2
        else:
            n2 = n_total // n1
    if n1 < 1 or n2 < 1:
        raise EmptyLayer("both surfaces need at least one neuron")
    if h_set.shape[1] != n1 * n2:
        raise LengthMismatch(f"h_set has {h_set.shape[1]} columns, expected {n1 * n2}")
    t1 = np.full(n1, np.nan, complex) if t1 is None else np.array(t1, complex)
    t2 = np.full(n2, np.nan, complex) if t2 is None else np.array(t2, complex)
    t = (t1, t2)

    def assign(side, idx):
        if np.isnan(t[side][idx]):
            t[side][idx] = sample_disk(rng, 1)[0]
        return t[side][idx]

    def h(i, j):
        return h_set[:, j + n2 * i]

    remaining = [list(range(n1)), list(range(n2))]
    consumed = [[], []]
    pairs_used = set()

    i = remaining[0].pop(int(rng.integers(len(remaining[0]))))
    j = remaining[1].pop(int(rng.integers(len(remaining[1]))))
    consumed[0].append(i)
    consumed[1].append(j)
    pairs_used.add((i, j))
    steps = [BasisStep(-1, (i, j), assign(0, i) * assign(1, j), h(i, j).copy(), [(i, j)])]

    chunks: list[int] = []
    first_chunk = None
    last_side = None
    while remaining[0] or remaining[1]:
        if remaining[0] and remaining[1]:
            side = int(rng.integers(2))
        else:
            side = 0 if remaining[0] else 1
        idx = remaining[side].pop(int(rng.integers(len(remaining[side]))))
        coef = assign(side, idx)
        other = 1 - side
        if side == 0:
            pairs = [(idx, jj) for jj in consumed[1]]
        else:
            pairs = [(ii, idx) for ii in consumed[0]]
        basis = np.zeros(h_set.shape[0], dtype=complex)
        for ii, jj in pairs:
            w = t[other][jj] if side == 0 else t[other][ii]
            basis += w * h(ii, jj)
        dup = pairs_used.intersection(pairs)
        if dup:
            raise AssertionError(f"h vectors consumed twice: {sorted(dup)}")
        pairs_used.update(pairs)
        consumed[side].append(idx)
        steps.append(BasisStep(side, idx, coef, basis, pairs))
        if side == last_side:
            chunks[-1] += 1
        else:
            chunks.append(1)
            if first_chunk is None:
                first_chunk = side
        last_side = side
    n_h = sum(len(s.pairs) for s in steps)
    report = BasisGenReport(steps, n_h, chunks, first_chunk, pairs_used)
    report.t1, report.t2 = t
    return report


def consumed_from_chunks(n1: int, n2: int, chunk_lengths: Sequence[int],
                         first_layer: int | None) -> int:
    """Number of h_ij used, counted chunk by chunk from the partition of the steps.

    While a chunk draws from one surface, every step consumes as many vectors as
    the opposite surface has consumed neurons so far; the seeding step uses one.
    This evaluates the chunked sum of counts independently of the generator.
    """
    total = 1
    used = [1, 1]
    side = first_layer
    for n in chunk_lengths:
        total += n * used[1 - side]
        used[side] += n
        side = 1 - side
    if used != [n1, n2] and chunk_lengths:
        raise ValueError("chunk lengths do not exhaust both surfaces")
    return total


def direct_combination(t1, t2, h_set) -> np.ndarray:
    """sum_ij t1_i t2_j h_ij evaluated term by term."""
    n1, n2 = len(t1), len(t2)
    out = np.zeros(h_set.shape[0], complex)
    for i in range(n1):
        for j in range(n2):
            out += t1[i] * t2[j] * h_set[:, j + n2 * i]
    return out
