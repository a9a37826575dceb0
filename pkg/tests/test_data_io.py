import struct

import numpy as np
import pytest

from ktddl import data_io
from ktddl.data_io import HsiCube, LabelMap
from ktddl.exceptions import (DimensionMismatchError, InvalidInputError, MalformedHeaderError,
                              NaNPayloadError)


def _random_cube(rng, h=4, w=5, b=6):
    return HsiCube(rng.uniform(0.1, 2.0, size=(h, w, b)))


def test_cube_round_trip_is_bit_identical(tmp_path):
    cube = _random_cube(np.random.default_rng(0))
    data_io.write_cube(tmp_path / "c.cube", cube)
    back = data_io.read_cube(tmp_path / "c.cube")
    assert back.values.tobytes() == cube.values.tobytes()


def test_load_normalizes_and_drops_bands(tmp_path):
    values = np.random.default_rng(1).uniform(0.1, 2.0, size=(3, 3, 6))
    values[1, 1] = 0.0
    data_io.write_cube(tmp_path / "c.cube", HsiCube(values))
    cube = data_io.load_cube(tmp_path / "c.cube", [0, 4])
    assert cube.bands == 4 and cube.band_mask == (1, 2, 3, 5)
    norms = np.linalg.norm(cube.values, axis=-1)
    assert norms[1, 1] == 0.0
    mask = np.ones((3, 3), bool)
    mask[1, 1] = False
    assert np.all(np.abs(norms[mask] - 1.0) <= 1e-9)


def test_normalization_is_idempotent():
    v = data_io.normalize_pixels(np.random.default_rng(2).normal(size=(4, 4, 5)))
    assert np.array_equal(data_io.normalize_pixels(v), v)


def test_drop_every_band_is_rejected():
    with pytest.raises(InvalidInputError):
        data_io.preprocess_cube(np.ones((2, 2, 3)), [0, 1, 2])
    with pytest.raises(InvalidInputError):
        data_io.preprocess_cube(np.ones((2, 2, 3)), [3])


def test_indian_pines_water_bands():
    assert len(data_io.INDIAN_PINES_WATER_BANDS) == 20
    cube = data_io.preprocess_cube(np.ones((2, 2, 220)), data_io.INDIAN_PINES_WATER_BANDS)
    assert cube.bands == 200


def test_load_errors_are_distinct(tmp_path):
    bad = tmp_path / "bad.cube"
    bad.write_bytes(b"XXXX" + struct.pack("<IIII", 1, 1, 1, 1) + b"\0" * 8)
    with pytest.raises(MalformedHeaderError):
        data_io.read_cube(bad)
    short = tmp_path / "short.cube"
    short.write_bytes(data_io.CUBE_MAGIC + struct.pack("<IIII", 1, 2, 2, 2) + b"\0" * 8)
    with pytest.raises(DimensionMismatchError):
        data_io.read_cube(short)
    nan = tmp_path / "nan.cube"
    nan.write_bytes(data_io.CUBE_MAGIC + struct.pack("<IIII", 1, 1, 1, 1) + struct.pack("<d", np.nan))
    with pytest.raises(NaNPayloadError):
        data_io.read_cube(nan)
    version = tmp_path / "v.cube"
    version.write_bytes(data_io.CUBE_MAGIC + struct.pack("<IIII", 9, 1, 1, 1) + b"\0" * 8)
    with pytest.raises(MalformedHeaderError):
        data_io.read_cube(version)


def test_label_round_trip_and_pairing(tmp_path):
    labels = LabelMap(np.array([[0, 1, 2], [2, 1, 0]]))
    data_io.write_labels(tmp_path / "l.labels", labels)
    back = data_io.load_labels(tmp_path / "l.labels")
    assert np.array_equal(back.values, labels.values)
    data_io.check_pair(HsiCube(np.ones((2, 3, 4))), back)
    with pytest.raises(DimensionMismatchError):
        data_io.check_pair(HsiCube(np.ones((3, 2, 4))), back)
    with pytest.raises(InvalidInputError):
        data_io.check_pair(HsiCube(np.ones((2, 3, 4))), LabelMap(np.array([[1, 3, 3], [1, 1, 0]])))


def _label_map(counts, width=50, seed=0):
    ids = np.concatenate([np.full(c, k + 1) for k, c in enumerate(counts)])
    total = int(np.ceil(ids.size / width)) * width
    flat = np.zeros(total, dtype=int)
    flat[:ids.size] = np.random.default_rng(seed).permutation(ids)
    return LabelMap(flat.reshape(-1, width))


def test_split_partitions_labeled_pixels():
    labels = _label_map([30, 50, 7])
    train, test = data_io.split(labels, 0.2, seed=1)
    labeled = np.flatnonzero(labels.values.ravel() > 0)
    assert np.intersect1d(train, test).size == 0
    assert np.array_equal(np.union1d(train, test), labeled)
    flat = labels.values.ravel()
    assert np.bincount(flat[train])[1:].tolist() == [6, 10, 1]


def test_split_deterministic_and_floor():
    labels = _label_map([100, 3, 4])
    a = data_io.split(labels, 0.05, seed=5)
    b = data_io.split(labels, 0.05, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.bincount(labels.values.ravel()[a[0]])[1:].tolist() == [5, 1, 1]


def test_split_errors():
    with pytest.raises(InvalidInputError):
        data_io.split(_label_map([10, 1]), 0.5)
    with pytest.raises(InvalidInputError):
        data_io.split(_label_map([10, 10]), 1.0)


def test_split_fraction_on_indian_pines_scale():
    # 16 classes, 9370 labeled pixels, fraction 997 / 9370
    counts = np.array([46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93])
    counts = np.round(counts * 9370 / counts.sum()).astype(int)
    counts[np.argmax(counts)] += 9370 - counts.sum()
    train, _ = data_io.split(_label_map(counts, width=145), 0.1064, seed=0)
    assert abs(train.size - 997) <= len(counts) // 2


def test_split_exact_sizes():
    labels = _label_map([300, 300, 300])
    train, test = data_io.split(labels, seed=0, train_size=200, test_size=600)
    assert train.size == 200 and test.size == 600
    assert np.intersect1d(train, test).size == 0


def test_neighbor_offsets():
    assert data_io.neighbor_offsets(1).tolist() == [[0, 0]]
    assert data_io.neighbor_offsets(5).tolist() == [[0, 0], [-1, 0], [0, -1], [0, 1], [1, 0]]
    assert sorted(map(tuple, data_io.neighbor_offsets(9).tolist())) == [
        (r, c) for r in (-1, 0, 1) for c in (-1, 0, 1)]


def test_neighborhood_corner_replicates_edges():
    values = np.arange(9, dtype=float).reshape(3, 3, 1) + 1.0
    cube = HsiCube(values)
    N = data_io.neighborhood(cube, 0, 0, 9)[0]
    # offsets: (0,0) (-1,0) (0,-1) (0,1) (1,0) (-1,-1) (-1,1) (1,-1) (1,1) clamped at the corner
    assert N.tolist() == [1, 1, 1, 2, 4, 1, 2, 4, 5]
    assert data_io.neighborhood(cube, 1, 1, 1).ravel().tolist() == [5.0]
    with pytest.raises(InvalidInputError):
        data_io.neighborhood(cube, 3, 0, 1)


def test_neighborhood_translation_consistent():
    cube = HsiCube(np.random.default_rng(3).normal(size=(9, 9, 2)))
    a = data_io.neighborhood(cube, 3, 3, 13)
    b = data_io.neighborhood(cube, 5, 4, 13)
    shifted = HsiCube(np.roll(np.roll(cube.values, -2, axis=0), -1, axis=1))
    assert np.array_equal(data_io.neighborhood(shifted, 3, 3, 13), b)
    assert a.shape == (2, 13)


def test_extract_matches_single_neighborhoods():
    cube = HsiCube(np.random.default_rng(4).normal(size=(5, 6, 3)))
    ids = np.array([0, 7, 29, 14])
    batch = data_io.extract_neighborhoods(cube, ids, 9)
    for k, i in enumerate(ids):
        assert np.array_equal(batch[k], data_io.neighborhood(cube, *divmod(int(i), 6), 9))


def test_synth_noise_free_pixels_equal_prototypes():
    cube, labels = data_io.synth_benchmark(3, 10, 20, noise_sigma=0.0, seed=2)
    protos = data_io.synth_prototypes(3, 10, seed=2)
    flat, ids = cube.values.reshape(-1, 10), labels.values.ravel()
    for k in range(3):
        assert np.allclose(flat[ids == k + 1], protos[:, k], atol=1e-15, rtol=0)


def test_synth_is_deterministic_and_valid():
    a = data_io.synth_benchmark(4, 12, 50, 0.2, seed=9)
    b = data_io.synth_benchmark(4, 12, 50, 0.2, seed=9)
    assert np.array_equal(a[0].values, b[0].values) and np.array_equal(a[1].values, b[1].values)
    assert np.bincount(a[1].values.ravel())[1:].tolist() == [50] * 4
    P = data_io.synth_prototypes(4, 12, seed=9)
    cos = np.abs(P.T @ P)
    np.fill_diagonal(cos, 0)
    assert cos.max() < 0.5
    with pytest.raises(InvalidInputError):
        data_io.synth_prototypes(5, 3)


def test_synth_nearest_prototype_sanity_floor():
    cube, labels = data_io.synth_benchmark(3, 20, 300, 0.1, seed=0)
    P = data_io.synth_prototypes(3, 20, seed=0)
    ids = labels.values.ravel()
    X = cube.values.reshape(-1, 20)[ids > 0]
    pred = np.argmax(X @ P, axis=1) + 1
    assert np.mean(pred == ids[ids > 0]) > 0.99
