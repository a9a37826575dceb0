"""Hyperspectral cube and label-map files, splitting, neighborhoods, synthetic data.

Binary layouts (little-endian):

* cube: ``b"KJHC"``, version u32, height u32, width u32, bands u32, then
  float64 values in (row, col, band) order;
* labels: ``b"KJHL"``, version u32, height u32, width u32, then u16 class ids
  in row-major order (0 = unlabeled).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .exceptions import (DimensionMismatchError, InvalidInputError, MalformedHeaderError,
                         NaNPayloadError)

CUBE_MAGIC = b"KJHC"
LABEL_MAGIC = b"KJHL"
FORMAT_VERSION = 1

# 0-based indices of the 20 water-absorption bands of the 220-band Indian Pines
# cube (1-based bands 104-108, 150-163 and 220).
INDIAN_PINES_WATER_BANDS = tuple(range(103, 108)) + tuple(range(149, 163)) + (219,)

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class HsiCube:
    """``values`` has shape ``(height, width, bands)``."""

    values: np.ndarray
    band_mask: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise InvalidInputError(f"cube values must be 3-d, got shape {v.shape}")
        if not self.band_mask:
            object.__setattr__(self, "band_mask", tuple(range(v.shape[2])))
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]

    def pixel(self, row, col):
        return self.values[row, col]

    def is_normalized(self, tol=1e-9) -> bool:
        norms = np.linalg.norm(self.values, axis=2)
        return bool(np.all((norms == 0) | (np.abs(norms - 1.0) <= tol)))


@dataclass(frozen=True)
class LabelMap:
    """Integer grid, 0 = unlabeled, 1..C = class id."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise InvalidInputError("label map must be 2-d")
        if v.size and v.min() < 0:
            raise InvalidInputError("label ids must be nonnegative")
        object.__setattr__(self, "values", v.astype(np.int64))

    @property
    def n_classes(self) -> int:
        return int(self.values.max()) if self.values.size else 0

    def labeled_ids(self) -> np.ndarray:
        """Flat row-major indices of labeled pixels."""
        return np.flatnonzero(self.values.ravel() > 0)

    def check_contiguous(self):
        present = np.unique(self.values[self.values > 0])
        if present.size and not np.array_equal(present, np.arange(1, present.size + 1)):
            raise InvalidInputError(f"class ids must be contiguous from 1, got {present.tolist()}")


def normalize_pixels(values) -> np.ndarray:
    """l2-normalize the last axis; zero pixels and unit pixels stay untouched."""
    values = np.array(values, dtype=float)
    norms = np.linalg.norm(values, axis=-1)
    fix = (norms > 0) & (np.abs(norms - 1.0) > _NORM_TOL)
    values[fix] /= norms[fix][:, None]
    return values


def write_cube(path, cube: HsiCube):
    h, w, b = cube.values.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC + struct.pack("<IIII", FORMAT_VERSION, h, w, b))
        fh.write(np.ascontiguousarray(cube.values, dtype="<f8").tobytes())


def read_cube(path) -> HsiCube:
    """Read a cube file verbatim, without band removal or normalization."""
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != CUBE_MAGIC:
        raise MalformedHeaderError(f"{path}: not a cube file (bad magic or truncated header)")
    version, h, w, b = struct.unpack("<IIII", raw[4:20])
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported cube version {version}")
    payload = raw[20:]
    if len(payload) != h * w * b * 8:
        raise DimensionMismatchError(
            f"{path}: header says {h}x{w}x{b} but payload has {len(payload)} bytes")
    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape(h, w, b)
    if np.isnan(values).any():
        raise NaNPayloadError(f"{path}: payload contains NaN")
    return HsiCube(values)


def load_cube(path, band_drop_list=()) -> HsiCube:
    """Read a cube, remove ``band_drop_list`` (0-based) and l2-normalize pixels."""
    cube = read_cube(path)
    return preprocess_cube(cube.values, band_drop_list)


def preprocess_cube(values, band_drop_list=()) -> HsiCube:
    values = np.asarray(values, dtype=float)
    n = values.shape[2]
    drop = sorted(set(int(b) for b in band_drop_list))
    if any(b < 0 or b >= n for b in drop):
        raise InvalidInputError(f"band indices out of range for {n} bands: {drop}")
    keep = [b for b in range(n) if b not in set(drop)]
    if not keep:
        raise InvalidInputError("band drop list removes every band")
    return HsiCube(normalize_pixels(values[:, :, keep]), tuple(keep))


def write_labels(path, labels: LabelMap):
    h, w = labels.values.shape
    if labels.values.size and labels.values.max() > np.iinfo(np.uint16).max:
        raise InvalidInputError("class ids must fit in u16")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC + struct.pack("<III", FORMAT_VERSION, h, w))
        fh.write(np.ascontiguousarray(labels.values, dtype="<u2").tobytes())


def load_labels(path) -> LabelMap:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != LABEL_MAGIC:
        raise MalformedHeaderError(f"{path}: not a label file (bad magic or truncated header)")
    version, h, w = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported label version {version}")
    payload = raw[16:]
    if len(payload) != h * w * 2:
        raise DimensionMismatchError(
            f"{path}: header says {h}x{w} but payload has {len(payload)} bytes")
    return LabelMap(np.frombuffer(payload, dtype="<u2").astype(np.int64).reshape(h, w))


def check_pair(cube: HsiCube, labels: LabelMap):
    if labels.values.shape != (cube.height, cube.width):
        raise DimensionMismatchError(
            f"label map {labels.values.shape} does not match cube {(cube.height, cube.width)}")
    labels.check_contiguous()


def _allocate(counts, total):
    """Largest-remainder allocation of ``total`` over classes, at least one each."""
    quotas = counts * total / counts.sum()
    alloc = np.floor(quotas).astype(int)
    order = np.argsort(-(quotas - alloc), kind="stable")
    alloc[order[: total - alloc.sum()]] += 1
    return alloc


def split(labels: LabelMap, train_fraction=0.1, seed=0, train_size=None, test_size=None):
    """Stratified random split of labeled pixels.

    Each class contributes ``round(train_fraction * count)`` training pixels,
    clipped to ``[1, count - 1]``. Passing ``train_size`` instead allocates an
    exact total proportionally (largest remainder). ``test_size`` subsamples
    the remaining pixels, again stratified.

    Returns
    -------
    train_ids, test_ids : ndarray of int
        Sorted flat row-major pixel indices.
    """
    flat = labels.values.ravel()
    classes = np.unique(flat[flat > 0])
    if classes.size == 0:
        raise InvalidInputError("label map has no labeled pixels")
    members = [np.flatnonzero(flat == c) for c in classes]
    counts = np.array([m.size for m in members])
    if counts.min() < 2:
        raise InvalidInputError(f"class {classes[counts.argmin()]} has fewer than 2 labeled pixels")
    if train_size is None:
        if not 0 < train_fraction < 1:
            raise InvalidInputError("train_fraction must lie in (0, 1)")
        n_train = np.rint(train_fraction * counts).astype(int)
    else:
        if not 0 < train_size < counts.sum():
            raise InvalidInputError("train_size must be between 1 and the labeled count - 1")
        n_train = _allocate(counts, int(train_size))
    n_train = np.clip(n_train, 1, counts - 1)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for m, k in zip(members, n_train):
        perm = rng.permutation(m)
        train.append(perm[:k])
        test.append(perm[k:])
    if test_size is not None:
        rest = np.array([t.size for t in test])
        if not 0 < test_size <= rest.sum():
            raise InvalidInputError("test_size exceeds the remaining labeled pixels")
        keep = np.minimum(_allocate(rest, int(test_size)), rest)
        test = [t[:k] for t, k in zip(test, keep)]
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@lru_cache(maxsize=64)
def neighbor_offsets(S: int) -> np.ndarray:
    """The ``S`` grid offsets closest to the origin, origin first.

    Ordered by Euclidean distance, ties by row-major scan order.
    """
    if S < 1:
        raise InvalidInputError("S must be >= 1")
    r = int(np.ceil(np.sqrt(S))) + 1
    dr, dc = np.mgrid[-r:r + 1, -r:r + 1]
    dr, dc = dr.ravel(), dc.ravel()
    order = np.lexsort((dc, dr, dr * dr + dc * dc))
    out = np.stack([dr[order], dc[order]], axis=1)[:S]
    out.setflags(write=False)
    return out


def neighborhood(cube: HsiCube, row, col, S) -> np.ndarray:
    """``(n, S)`` matrix: the center pixel then its ``S - 1`` nearest pixels.

    Positions falling off the image are clamped to the border (edge
    replication).
    """
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise InvalidInputError(f"pixel ({row}, {col}) outside {cube.height}x{cube.width} image")
    off = neighbor_offsets(int(S))
    rows = np.clip(row + off[:, 0], 0, cube.height - 1)
    cols = np.clip(col + off[:, 1], 0, cube.width - 1)
    return cube.values[rows, cols].T


def extract_neighborhoods(cube: HsiCube, flat_ids, S) -> np.ndarray:
    """Neighborhoods of many pixels, shape ``(N, n, S)``."""
    flat_ids = np.asarray(flat_ids, dtype=int)
    r, c = np.divmod(flat_ids, cube.width)
    if flat_ids.size and (r.min() < 0 or r.max() >= cube.height):
        raise InvalidInputError("pixel ids out of range")
    off = neighbor_offsets(int(S))
    rows = np.clip(r[:, None] + off[None, :, 0], 0, cube.height - 1)
    cols = np.clip(c[:, None] + off[None, :, 1], 0, cube.width - 1)
    return np.transpose(cube.values[rows, cols], (0, 2, 1))


def synth_prototypes(C, n, seed=0, max_cosine=0.5, max_tries=1000) -> np.ndarray:
    """``C`` random unit spectra (columns of an ``(n, C)`` matrix) with pairwise |cosine| < ``max_cosine``."""
    if C < 2 or n < C:
        raise InvalidInputError("need C >= 2 and n >= C")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    for _ in range(max_tries):
        P = rng.normal(size=(n, C))
        P /= np.linalg.norm(P, axis=0)
        cos = np.abs(P.T @ P)
        np.fill_diagonal(cos, 0.0)
        if cos.max() < max_cosine:
            return P
    raise InvalidInputError(f"could not draw {C} prototypes with |cosine| < {max_cosine} in {max_tries} tries")


def synth_benchmark(C=3, n=20, pixels_per_class=300, noise_sigma=0.1, spatial_layout="bands",
                    seed=0):
    """Synthetic labeled cube with ``C`` contiguous class regions.

    Pixels are filled in row-major order, ``pixels_per_class`` per class, on a
    near-square image; leftover positions in the last row are unlabeled and
    carry noisy copies of the last class. Every pixel is
    ``normalize(prototype + noise_sigma * N(0, I))``.

    Returns
    -------
    cube : HsiCube
    labels : LabelMap
    """
    if spatial_layout != "bands":
        raise InvalidInputError(f"unknown spatial layout {spatial_layout!r}")
    if pixels_per_class < 1:
        raise InvalidInputError("pixels_per_class must be >= 1")
    if noise_sigma < 0:
        raise InvalidInputError("noise_sigma must be nonnegative")
    P = synth_prototypes(C, n, seed)
    total = C * pixels_per_class
    width = int(np.ceil(np.sqrt(total)))
    height = int(np.ceil(total / width))
    flat_labels = np.zeros(height * width, dtype=np.int64)
    flat_labels[:total] = np.repeat(np.arange(1, C + 1), pixels_per_class)
    source = np.where(flat_labels > 0, flat_labels, C) - 1
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    noise = rng.normal(size=(height * width, n))
    pixels = P[:, source].T
    if noise_sigma > 0:
        pixels = pixels + noise_sigma * noise
    values = normalize_pixels(pixels).reshape(height, width, n)
    return HsiCube(values), LabelMap(flat_labels.reshape(height, width))
