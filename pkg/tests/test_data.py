import numpy as np
import pytest

from diffractive import data
from diffractive.errors import (DoesNotFit, LabelOutOfRange, TooFewCells, TruncatedFile,
                                UnknownClass, ValueOutOfRange)
from diffractive.field import ApertureMap, GridSpec


def write_cifar(path, labels, pixels=None, rng=None):
    rng = rng or np.random.default_rng(0)
    n = len(labels)
    body = rng.integers(0, 256, (n, 3072), dtype=np.uint8) if pixels is None else pixels
    recs = np.concatenate([np.asarray(labels, np.uint8)[:, None], body], axis=1)
    recs.tofile(path)
    return path


def test_class_map_balance():
    cmap = data.gen_class_map((9, 9), 9, seed=0)
    assert np.all(cmap.class_sizes() == 9)
    big = data.gen_class_map((80, 80), 9, seed=1)
    sizes = big.class_sizes()
    assert set(sizes) <= {711, 712} and sizes.sum() == 6400


def test_class_map_partition_and_determinism():
    a = data.gen_class_map((7, 5), 4, seed=3)
    b = data.gen_class_map((7, 5), 4, seed=3)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    cells = np.concatenate([a.cells_of(c) for c in range(4)])
    assert sorted(cells) == list(range(35))
    assert a.class_sizes().max() - a.class_sizes().min() <= 1
    with pytest.raises(TooFewCells):
        data.gen_class_map((2, 2), 9)
    with pytest.raises(UnknownClass):
        a.cells_of(4)


def lit_object_cells(sample, cmap, block):
    amp = np.abs(sample.input).reshape(cmap.rows * block, cmap.cols * block, order="F")
    obj = amp[::block, ::block]
    return np.flatnonzero(obj.ravel(order="F") > 0), obj


def test_spatial_samples_stay_in_class():
    cmap = data.gen_class_map((16, 16), 9, seed=0)
    rng = np.random.default_rng(1)
    for _ in range(10_000 // 50):
        c = int(rng.integers(9))
        for _ in range(50):
            s = data.sample_spatial_image(cmap, c, 0.2, rng, block=1)
            on = np.flatnonzero(np.abs(s.input) > 0)
            assert np.isin(on, cmap.cells_of(c)).all()
            amps = np.abs(s.input[on])
            assert amps.min() > 0.2 and amps.max() <= 1.0


def test_spatial_sample_fraction_rules():
    cmap = data.gen_class_map((9, 9), 9, seed=2)
    rng = np.random.default_rng(3)
    s = data.sample_spatial_image(cmap, 4, 1.0, rng, block=2)
    on, obj = lit_object_cells(s, cmap, 2)
    assert sorted(on) == sorted(cmap.cells_of(4))
    # each lit object cell fills a 2x2 patch
    amp = np.abs(s.input).reshape(18, 18, order="F")
    np.testing.assert_array_equal(amp, np.kron(obj, np.ones((2, 2))))
    s = data.sample_spatial_image(cmap, 4, 1 / 9, rng, block=2)
    assert len(lit_object_cells(s, cmap, 2)[0]) == 1
    s = data.sample_spatial_image(cmap, 4, 1e-6, rng, block=2)
    assert len(lit_object_cells(s, cmap, 2)[0]) == 1
    with pytest.raises(ValueOutOfRange):
        data.sample_spatial_image(cmap, 4, 0.0, rng)
    with pytest.raises(UnknownClass):
        data.sample_spatial_image(cmap, 9, 0.5, rng)


def test_single_point_images_are_distinct():
    cmap = data.gen_class_map((4, 4), 3, seed=0)
    samples = data.single_point_images(cmap, block=2)
    assert len(samples) == 16
    assert len({s.input.tobytes() for s in samples}) == 16
    for s in samples:
        on, _ = lit_object_cells(s, cmap, 2)
        assert np.isin(on, cmap.cells_of(s.label)).all()


def test_dataset_stream_is_reproducible():
    spec = data.DatasetSpec(count=50, seed=4)
    a, b = data.make_spatial_dataset(spec), data.make_spatial_dataset(spec)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.checksum() == b.checksum()
    test = data.make_spatial_dataset(data.DatasetSpec(count=50, seed=4, split="test"))
    assert test.checksum() != a.checksum()
    assert a.inputs.shape == (32 * 32, 50)


def test_cifar_batch_parsing(tmp_path):
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 10, 20)
    f = write_cifar(tmp_path / "data_batch_1.bin", labels, rng=rng)
    rgb, lab = data.read_cifar_batch(f)
    assert rgb.shape == (20, 3, 32, 32)
    np.testing.assert_array_equal(lab, labels)
    gray, lab2 = data.load_cifar10(tmp_path)
    assert gray.shape == (20, 32, 32) and gray.min() >= 0 and gray.max() <= 1


def test_cifar_record_count_arithmetic():
    assert 30_730_000 // data.CIFAR_RECORD == 10_000
    assert 30_730_000 % data.CIFAR_RECORD == 0


def test_cifar_errors(tmp_path):
    f = tmp_path / "short.bin"
    f.write_bytes(bytes(3073 + 5))
    with pytest.raises(TruncatedFile):
        data.read_cifar_batch(f)
    bad = write_cifar(tmp_path / "bad.bin", [3, 10])
    with pytest.raises(LabelOutOfRange):
        data.read_cifar_batch(bad)
    with pytest.raises(FileNotFoundError):
        data.load_cifar10(tmp_path / "missing.bin")


def test_grayscale_of_neutral_pixel():
    rgb = np.full((1, 3, 32, 32), 128, np.uint8)
    gray = data.to_grayscale(rgb)
    np.testing.assert_allclose(gray, 128 / 255, atol=1e-15)


def test_phase_encoding():
    v = np.array([[0.0, 0.5], [0.25, 1.0]])
    f = data.encode_phase_object(v).reshape(2, 2, order="F")
    assert f[0, 0] == 1 + 0j
    np.testing.assert_allclose(f[0, 1], -1 + 0j, atol=1e-15)
    rng = np.random.default_rng(6)
    img = rng.random((32, 32))
    for shape in (None, (40, 40), (24, 24)):
        field = data.encode_phase_object(img, 1, shape)
        assert np.max(np.abs(np.abs(field) - 1)) < 1e-15
    with pytest.raises(ValueOutOfRange):
        data.encode_phase_object(np.array([[1.5]]))


def test_cifar_dataset_relabels(tmp_path):
    rng = np.random.default_rng(7)
    write_cifar(tmp_path / "data_batch_1.bin", [0, 1, 2, 1, 0, 5], rng=rng)
    ds = data.cifar_dataset(tmp_path, [1, 5])
    assert ds.labels.tolist() == [0, 0, 1]
    assert ds.inputs.shape == (1024, 3)


def test_fig3_layout():
    ap = ApertureMap.full(GridSpec(160, 160))
    lay = data.make_detector_layout("fig3", ap)
    assert lay.classes == 9
    assert all(r.rows == 50 and r.cols == 50 for r in lay.regions)
    assert sum(m.size for m in lay.members) == 22_500


def test_desk_layout():
    ap = ApertureMap.full(GridSpec(32, 32))
    lay = data.make_detector_layout("desk", ap)
    assert lay.classes == 9
    rows = sorted({r.row0 for r in lay.regions})
    cols = sorted({r.col0 for r in lay.regions})
    assert all(r.rows == 6 and r.cols == 6 for r in lay.regions)
    assert np.diff(rows).tolist() == [8, 8] and np.diff(cols).tolist() == [8, 8]
    for r in lay.regions:
        assert 0 <= r.row0 and r.row0 + r.rows <= 32 and 0 <= r.col0 and r.col0 + r.cols <= 32


def test_cifar_layout():
    ap = ApertureMap.full(GridSpec(160, 160, pitch=0.5))
    lay = data.make_detector_layout("cifar10", ap)
    assert lay.classes == 10
    assert len({r.row0 for r in lay.regions}) == 2
    assert len({r.col0 for r in lay.regions}) == 5


@pytest.mark.parametrize("preset,side", [("fig3", 160), ("cifar10", 160), ("desk", 32),
                                         ("desk", 45)])
def test_layouts_disjoint(preset, side):
    lay = data.make_detector_layout(preset, ApertureMap.full(GridSpec(side, side)))
    seen = np.concatenate(lay.members)
    assert seen.size == np.unique(seen).size


def test_layout_errors():
    ap = ApertureMap.full(GridSpec(20, 20))
    with pytest.raises(DoesNotFit):
        data.make_detector_layout("fig3", ap)
    with pytest.raises(DoesNotFit):
        data.layout_from_regions(ap, [data.Region(0, 0, 4, 4), data.Region(2, 2, 4, 4)])
    with pytest.raises(DoesNotFit):
        data.layout_from_regions(ap, [data.Region(0, 0, 4, 4), data.Region(18, 18, 4, 4)])
