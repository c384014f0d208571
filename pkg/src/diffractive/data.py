"""Datasets: the procedural spatial-code task, CIFAR-10 phase objects, detector layouts."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DoesNotFit,
    LabelOutOfRange,
    TooFewCells,
    TruncatedFile,
    UnknownClass,
    ValueOutOfRange,
)
from .field import ApertureMap, GridSpec

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
LUMA = (0.299, 0.587, 0.114)
AMPLITUDE_RANGE = (0.2, 1.0)


@dataclass(frozen=True)
class ClassMap:
    """Random partition of the object cells (each ``cell`` wavelengths wide) into classes."""

    rows: int
    cols: int
    assignment: np.ndarray     # (rows, cols) class id per object cell
    classes: int
    seed: int | None = None

    def cells_of(self, c: int) -> np.ndarray:
        """Column-major linear indices of the cells of class ``c``."""
        if not 0 <= c < self.classes:
            raise UnknownClass(f"class {c} not in [0, {self.classes})")
        return np.flatnonzero(self.assignment.ravel(order="F") == c)

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment.ravel(), minlength=self.classes)


def gen_class_map(fov_cells: tuple[int, int], classes: int = 9, seed=None) -> ClassMap:
    rows, cols = fov_cells
    n = rows * cols
    if n < classes:
        raise TooFewCells(f"{n} cells cannot hold {classes} classes")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = labels
    return ClassMap(rows, cols, assignment.reshape(rows, cols, order="F"), classes, seed)


@dataclass
class Sample:
    input: np.ndarray      # complex, column-major on the input aperture
    label: int


def object_to_aperture(obj: np.ndarray, block: int, aperture_shape=None) -> np.ndarray:
    """Nearest-neighbour upsampling: each object cell fills a block x block patch.

    When ``aperture_shape`` is larger, the patch image is centred with zeros
    around it; when smaller, the excess is cropped symmetrically.
    """
    up = np.kron(obj, np.ones((block, block)))
    if aperture_shape is None:
        return up
    out = np.zeros(aperture_shape, dtype=up.dtype)
    r_tgt, c_tgt = aperture_shape
    r_src, c_src = up.shape

    def spans(n_src, n_tgt):
        if n_src >= n_tgt:
            o = (n_src - n_tgt) // 2
            return slice(o, o + n_tgt), slice(0, n_tgt)
        o = (n_tgt - n_src) // 2
        return slice(0, n_src), slice(o, o + n_src)

    rs, rt = spans(r_src, r_tgt)
    cs, ct = spans(c_src, c_tgt)
    out[rt, ct] = up[rs, cs]
    return out


def sample_spatial_image(cmap: ClassMap, c: int, f: float, rng, block: int = 2) -> Sample:
    """One image of class ``c``: round(f*|cells_c|) (at least 1) of its cells lit.

    Lit cells get amplitudes uniform in (0.2, 1]; every other cell is dark.
    """
    if not 0 < f <= 1:
        raise ValueOutOfRange(f"fraction must be in (0, 1], got {f}")
    cells = cmap.cells_of(c)
    n_on = max(1, int(round(f * cells.size)))
    on = rng.choice(cells, size=n_on, replace=False)
    lo, hi = AMPLITUDE_RANGE
    obj = np.zeros(cmap.rows * cmap.cols)
    obj[on] = hi - rng.uniform(0.0, hi - lo, n_on)
    obj = obj.reshape(cmap.rows, cmap.cols, order="F")
    field = object_to_aperture(obj, block).astype(complex)
    return Sample(field.ravel(order="F"), int(c))


def single_point_images(cmap: ClassMap, block: int = 2) -> list[Sample]:
    """Every object cell lit alone at unit amplitude, one sample per cell."""
    out = []
    labels = cmap.assignment.ravel(order="F")
    for idx in range(cmap.rows * cmap.cols):
        obj = np.zeros(cmap.rows * cmap.cols)
        obj[idx] = 1.0
        field = object_to_aperture(obj.reshape(cmap.rows, cmap.cols, order="F"), block)
        out.append(Sample(field.astype(complex).ravel(order="F"), int(labels[idx])))
    return out


@dataclass
class Dataset:
    inputs: np.ndarray     # (N_i, n_samples) complex
    labels: np.ndarray     # (n_samples,) int
    classes: int

    def __len__(self):
        return self.labels.size

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[:, idx], self.labels[idx], self.classes)

    def checksum(self, n: int = 10) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs[:, :n]).tobytes())
        h.update(self.labels[:n].astype(np.int64).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a procedurally regenerated dataset."""

    kind: str = "spatial-code"
    fov_cells: tuple[int, int] = (16, 16)
    classes: int = 9
    fraction: float = 0.03
    count: int = 2000
    seed: int = 0
    split: str = "train"
    block: int = 2
    map_seed: int = 0

    def __post_init__(self):
        if self.kind == "spatial-code" and not 0 < self.fraction <= 1:
            raise ValueOutOfRange(f"fraction must be in (0, 1], got {self.fraction}")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")

    def stream_seed(self) -> list[int]:
        return [self.seed, 0 if self.split == "train" else 1]


def make_spatial_dataset(spec: DatasetSpec) -> Dataset:
    cmap = gen_class_map(spec.fov_cells, spec.classes, spec.map_seed)
    rng = np.random.default_rng(spec.stream_seed())
    labels = rng.integers(0, spec.classes, spec.count)
    samples = [sample_spatial_image(cmap, int(c), spec.fraction, rng, spec.block) for c in labels]
    return Dataset(np.stack([s.input for s in samples], axis=1), labels.astype(np.int64),
                   spec.classes)


# --- CIFAR-10 ------------------------------------------------------------------------------


def _cifar_files(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("data_batch_*.bin")) + sorted(path.glob("test_batch.bin"))
        if not files:
            files = sorted(path.glob("*.bin"))
        if not files:
            raise FileNotFoundError(f"no CIFAR-10 .bin batches under {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(path)
    return [path]


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw (n, 3, 32, 32) uint8 images and labels from one binary batch file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise TruncatedFile(f"{path}: {raw.size} bytes is not a multiple of {CIFAR_RECORD}")
    recs = raw.reshape(-1, CIFAR_RECORD)
    labels = recs[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.flatnonzero(labels > 9)[0])
        raise LabelOutOfRange(f"{path}: record {bad} has label {labels[bad]}")
    return recs[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE), labels


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Y (luma) channel rounded to uint8, then scaled to [0, 1]."""
    r, g, b = (rgb[:, i].astype(float) for i in range(3))
    y = LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
    return np.clip(np.rint(y), 0, 255) / 255.0


def load_cifar10(path) -> tuple[np.ndarray, np.ndarray]:
    """Grayscale (n, 32, 32) images in [0, 1] and labels from a file or batch directory."""
    imgs, labels = [], []
    for f in _cifar_files(path):
        rgb, lab = read_cifar_batch(f)
        imgs.append(to_grayscale(rgb))
        labels.append(lab)
    return np.concatenate(imgs), np.concatenate(labels)


def encode_phase_object(gray: np.ndarray, block: int = 1, aperture_shape=None) -> np.ndarray:
    """Unit-modulus field exp(j 2 pi v), pixels upsampled to block x block patches."""
    gray = np.asarray(gray, dtype=float)
    if gray.size and (gray.min() < 0 or gray.max() > 1):
        raise ValueOutOfRange("gray levels must lie in [0, 1]")
    phase = object_to_aperture(gray, block, aperture_shape)
    field = np.exp(2j * np.pi * phase)
    if aperture_shape is not None:
        # cells outside the image carry the unmodulated plane wave
        up = object_to_aperture(np.ones_like(gray), block, aperture_shape)
        field = np.where(up > 0, field, 1.0 + 0j)
    return field.ravel(order="F")


def cifar_dataset(path, classes: Sequence[int], count: int | None = None, block: int = 1,
                  aperture_shape=None, seed=0) -> Dataset:
    """Phase-encoded CIFAR-10 subset restricted to ``classes`` (relabelled 0..C-1)."""
    imgs, labels = load_cifar10(path)
    classes = list(classes)
    keep = np.flatnonzero(np.isin(labels, classes))
    if count is not None and count < keep.size:
        keep = np.sort(np.random.default_rng(seed).choice(keep, count, replace=False))
    remap = {c: i for i, c in enumerate(classes)}
    inputs = np.stack([encode_phase_object(imgs[i], block, aperture_shape) for i in keep], axis=1)
    return Dataset(inputs, np.array([remap[int(labels[i])] for i in keep]), len(classes))


def default_cifar_path() -> str | None:
    return os.environ.get("DIFFRACTIVE_CIFAR10")


# --- detectors -----------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    row0: int
    col0: int
    rows: int
    cols: int

    def cells(self, grid: GridSpec) -> np.ndarray:
        r, c = np.meshgrid(np.arange(self.row0, self.row0 + self.rows),
                           np.arange(self.col0, self.col0 + self.cols), indexing="ij")
        return np.sort((r + grid.rows * c).ravel())

    def overlaps(self, other: "Region") -> bool:
        return not (self.row0 + self.rows <= other.row0 or other.row0 + other.rows <= self.row0
                    or self.col0 + self.cols <= other.col0 or other.col0 + other.cols <= self.col0)


@dataclass(frozen=True)
class DetectorLayout:
    """Class detectors as rectangles of output-aperture cells.

    The aperture is assumed to be a full rectangular grid; ``members[c]`` are
    positions of region ``c``'s cells within the aperture vector.
    """

    aperture: ApertureMap
    regions: tuple[Region, ...]
    members: tuple[np.ndarray, ...]

    @property
    def classes(self) -> int:
        return len(self.regions)

    def region_size(self, c: int) -> int:
        return int(self.members[c].size)

    def centers(self) -> list[tuple[float, float]]:
        x, y = self.aperture.grid.axes()
        out = []
        for r in self.regions:
            out.append((0.5 * (x[r.col0] + x[r.col0 + r.cols - 1]),
                        0.5 * (y[r.row0] + y[r.row0 + r.rows - 1])))
        return out

    def to_dict(self) -> dict:
        return {"regions": [[r.row0, r.col0, r.rows, r.cols] for r in self.regions]}


def layout_from_regions(aperture: ApertureMap, regions: Sequence[Region]) -> DetectorLayout:
    grid = aperture.grid
    if len(regions) < 2:
        raise DoesNotFit("a layout needs at least two detectors")
    pos = -np.ones(grid.size, dtype=np.int64)
    pos[aperture.kept_indices] = np.arange(aperture.size)
    members = []
    for i, r in enumerate(regions):
        if r.row0 < 0 or r.col0 < 0 or r.row0 + r.rows > grid.rows or r.col0 + r.cols > grid.cols:
            raise DoesNotFit(f"detector {i} extends beyond the output grid")
        for j in range(i):
            if r.overlaps(regions[j]):
                raise DoesNotFit(f"detectors {j} and {i} overlap")
        m = pos[r.cells(grid)]
        if np.any(m < 0):
            raise DoesNotFit(f"detector {i} covers cells outside the output aperture")
        members.append(m)
    return DetectorLayout(aperture, tuple(regions), tuple(members))


def _tiled(n_rows: int, n_cols: int, side_r: int, side_c: int, gut_r: int, gut_c: int,
           grid: GridSpec, count: int) -> list[Region]:
    span_r = n_rows * side_r + (n_rows - 1) * gut_r
    span_c = n_cols * side_c + (n_cols - 1) * gut_c
    if span_r > grid.rows or span_c > grid.cols:
        raise DoesNotFit(f"{span_r}x{span_c} detector block exceeds {grid.rows}x{grid.cols} aperture")
    r0 = (grid.rows - span_r) // 2
    c0 = (grid.cols - span_c) // 2
    regions = []
    for i in range(n_rows):
        for j in range(n_cols):
            if len(regions) == count:
                break
            regions.append(Region(r0 + i * (side_r + gut_r), c0 + j * (side_c + gut_c),
                                  side_r, side_c))
    return regions


def make_detector_layout(preset: str, aperture: ApertureMap, classes: int | None = None,
                         ) -> DetectorLayout:
    """Detector layouts.

    ``fig3``: 3x3 grid of 25-wavelength squares. ``cifar10``: two rows of five
    6.4-wavelength squares. ``desk``: 3x3 squares of side aperture/5 cells with
    2-cell gutters; fewer classes fill the rows of that arrangement in order.
    """
    grid = aperture.grid
    if preset == "fig3":
        side = int(round(25.0 / grid.pitch))
        gr = (grid.rows - 3 * side) // 4
        gc = (grid.cols - 3 * side) // 4
        regions = _tiled(3, 3, side, side, max(gr, 0), max(gc, 0), grid, 9)
    elif preset == "cifar10":
        side = int(round(6.4 / grid.pitch))
        gr = (grid.rows - 2 * side) // 3
        gc = (grid.cols - 5 * side) // 6
        regions = _tiled(2, 5, side, side, max(gr, 0), max(gc, 0), grid, 10)
    elif preset == "desk":
        n = 9 if classes is None else classes
        sr, sc = grid.rows // 5, grid.cols // 5
        n_cols = min(n, 3)
        n_rows = -(-n // 3)
        regions = _tiled(n_rows, n_cols, sr, sc, 2, 2, grid, n)
    else:
        raise ValueError(f"unknown detector preset {preset!r}")
    if classes is not None and classes != len(regions):
        if classes > len(regions):
            raise DoesNotFit(f"preset {preset} has {len(regions)} detectors, {classes} requested")
        regions = regions[:classes]
    return layout_from_regions(aperture, regions)
