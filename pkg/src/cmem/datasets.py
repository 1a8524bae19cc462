"""MNIST IDX parsing and double / colored-double digit corpora.

A corpus is described by a manifest: for every sample, the pool indices of
its left and right digit exemplars plus optional color ids. Pixels are only
materialized on demand, so full-size manifests (400k samples) stay cheap.
"""

import gzip
import itertools
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import png, weights

DIGIT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
COLORS = ("red", "green", "blue")
COLOR_PAIRS = tuple(itertools.product(range(3), range(3)))

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


def _read_maybe_gz(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic):
    raw = _read_maybe_gz(path)
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) < header + n:
        raise IdxTruncatedError(f"{path}: expected {n} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def write_idx(path, array):
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">I{arr.ndim}I", magic, *arr.shape))
        fh.write(arr.tobytes())


@dataclass
class DigitPool:
    """Single-digit exemplars: ``images`` (n, 28, 28) float32 in [0, 1], ``labels`` (n,)."""

    images: np.ndarray
    labels: np.ndarray
    source: str = "idx"

    def __len__(self):
        return len(self.labels)

    def indices_of(self, digit):
        return np.flatnonzero(self.labels == digit)


def load_mnist_idx(image_path, label_path):
    images = read_idx(image_path, IDX_IMAGE_MAGIC)
    labels = read_idx(label_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return DigitPool((images.astype(np.float32) / 255.0), labels.astype(np.int64), source="idx")


def bundled_digit_pool():
    """Handwritten digits shipped with scikit-learn, resampled to MNIST geometry.

    The 8x8 scans are cubic-upsampled into a 20x20 box centred on a 28x28
    canvas (the MNIST convention) and quantized to bytes.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    bunch = load_digits()
    small = bunch.images.astype(np.float64) / 16.0
    big = np.stack([zoom(im, 2.5, order=3) for im in small])
    big = np.clip((big - 0.15) / 0.7, 0.0, 1.0)
    canvas = np.zeros((len(big), 28, 28))
    canvas[:, 4:24, 4:24] = big
    canvas = np.round(canvas * 255) / 255
    return DigitPool(canvas.astype(np.float32), bunch.target.astype(np.int64), source="sklearn-digits")


def _find_idx_pair(data_dir):
    for stem_img, stem_lbl in (("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                               ("train-images.idx3-ubyte", "train-labels.idx1-ubyte")):
        for suffix in ("", ".gz"):
            img, lbl = Path(data_dir) / (stem_img + suffix), Path(data_dir) / (stem_lbl + suffix)
            if img.exists() and lbl.exists():
                return img, lbl
    return None


def load_digit_pool(data_dir=None):
    """MNIST train split from ``data_dir`` / ``$CMEM_DATA_DIR`` if present, else the bundled pool."""
    data_dir = data_dir or os.environ.get("CMEM_DATA_DIR")
    if data_dir:
        found = _find_idx_pair(data_dir)
        if found:
            return load_mnist_idx(*found)
    return bundled_digit_pool()


class ComboClass(NamedTuple):
    digits: tuple
    colors: Optional[tuple] = None

    def tokens(self):
        if self.colors is None:
            return [DIGIT_WORDS[d] for d in self.digits]
        return [w for c, d in zip(self.colors, self.digits) for w in (COLORS[c], DIGIT_WORDS[d])]

    @property
    def name(self):
        return " ".join(self.tokens())

    @classmethod
    def parse(cls, text):
        words = text.lower().split()
        try:
            if len(words) == 2:
                return cls(tuple(DIGIT_WORDS.index(w) for w in words))
            if len(words) == 4:
                return cls((DIGIT_WORDS.index(words[1]), DIGIT_WORDS.index(words[3])),
                           (COLORS.index(words[0]), COLORS.index(words[2])))
        except ValueError:
            pass
        raise ValueError(f"cannot parse class {text!r}; expected e.g. 'seven five' or 'red five blue one'")


ALL_DIGIT_PAIRS = tuple(itertools.product(range(10), range(10)))


@dataclass(frozen=True)
class SplitSpec:
    held_out: tuple
    rng_seed: int
    per_class_count: int

    def __post_init__(self):
        if not self.held_out:
            raise ValueError("held-out set must be non-empty")

    @classmethod
    def draw(cls, seed, n_held_out=16, per_class_count=1000):
        rng = np.random.default_rng([seed, 0])
        picks = rng.choice(len(ALL_DIGIT_PAIRS), size=n_held_out, replace=False)
        return cls(tuple(sorted(ALL_DIGIT_PAIRS[i] for i in picks)), seed, per_class_count)

    @property
    def train_pairs(self):
        held = set(self.held_out)
        return tuple(p for p in ALL_DIGIT_PAIRS if p not in held)

    def to_json(self):
        return {"held_out": [list(p) for p in self.held_out], "rng_seed": self.rng_seed,
                "per_class_count": self.per_class_count}

    @classmethod
    def from_json(cls, d):
        return cls(tuple(tuple(p) for p in d["held_out"]), d["rng_seed"], d["per_class_count"])


def colorize(image, color):
    """Place grayscale intensity in the single channel named by ``color``."""
    if isinstance(color, str):
        if color not in COLORS:
            raise ValueError(f"unknown color {color!r}; expected one of {COLORS}")
        color = COLORS.index(color)
    elif color not in (0, 1, 2):
        raise ValueError(f"unknown color id {color!r}")
    image = np.asarray(image)
    out = np.zeros(image.shape + (3,), dtype=image.dtype)
    out[..., color] = image
    return out


@dataclass
class DigitPairSet:
    """A lazily materialized double-digit corpus.

    Per sample: ``left``/``right`` pool indices, ``pair`` digit ids (n, 2) and
    ``colors`` (n, 2) color ids, all -1 for uncolored sets.
    """

    pool: DigitPool
    left: np.ndarray
    right: np.ndarray
    pairs: np.ndarray
    colors: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.colors is None:
            self.colors = np.full((len(self.left), 2), -1, dtype=np.int64)

    def __len__(self):
        return len(self.left)

    @property
    def colored(self):
        return bool(len(self.colors)) and self.colors[0, 0] >= 0

    @property
    def geometry(self):
        return (28, 56, 3) if self.colored else (28, 56, 1)

    def combo(self, i):
        digits = (int(self.pairs[i, 0]), int(self.pairs[i, 1]))
        if not self.colored:
            return ComboClass(digits)
        return ComboClass(digits, (int(self.colors[i, 0]), int(self.colors[i, 1])))

    def class_keys(self):
        """Integer class id per sample: 10*d1 + d2, plus 100*(3*c1 + c2) when colored."""
        keys = self.pairs[:, 0] * 10 + self.pairs[:, 1]
        if self.colored:
            keys = keys + 100 * (self.colors[:, 0] * 3 + self.colors[:, 1])
        return keys

    def combos(self):
        return sorted({self.combo(i) for i in np.unique(self.class_keys(), return_index=True)[1]})

    def images(self, index=None, dtype=np.float32):
        """Materialize pixels as (n, 28, 56) or (n, 28, 56, 3)."""
        idx = np.arange(len(self)) if index is None else np.atleast_1d(np.asarray(index))
        halves = np.concatenate([self.pool.images[self.left[idx]], self.pool.images[self.right[idx]]], axis=2)
        halves = halves.astype(dtype, copy=False)
        if not self.colored:
            return halves
        out = np.zeros(halves.shape + (3,), dtype=dtype)
        n = len(idx)
        rows = np.arange(n)[:, None, None]
        cols = np.arange(56)[None, None, :]
        channel = np.where(cols < 28, self.colors[idx, 0][:, None, None], self.colors[idx, 1][:, None, None])
        out[rows, np.arange(28)[None, :, None], cols, channel] = halves
        return out

    def image(self, i):
        return self.images([i])[0]

    def manifest_rows(self):
        return [[int(a), int(b), int(c1), int(c2)] for a, b, (c1, c2) in zip(self.left, self.right, self.colors)]


def _build(pool, pairs, count, rng, colored):
    by_digit = {d: pool.indices_of(d) for d in range(10)}
    missing = [d for d, ix in by_digit.items() if len(ix) == 0]
    if missing:
        raise ValueError(f"digit pool lacks digits {missing}")
    left, right, pair_ids, colors = [], [], [], []
    for d1, d2 in pairs:
        left.append(by_digit[d1][rng.integers(0, len(by_digit[d1]), size=count)])
        right.append(by_digit[d2][rng.integers(0, len(by_digit[d2]), size=count)])
        pair_ids.append(np.tile([d1, d2], (count, 1)))
        if colored:
            # balanced over the 9 color pairs, order shuffled
            cp = rng.permutation(np.resize(np.arange(len(COLOR_PAIRS)), count))
            colors.append(np.asarray(COLOR_PAIRS)[cp])
    cat = lambda xs: np.concatenate(xs).astype(np.int64)  # noqa: E731
    return DigitPairSet(pool, cat(left), cat(right), cat(pair_ids), cat(colors) if colored else None)


def _synth(pool, spec, colored):
    rng = np.random.default_rng([spec.rng_seed, 1])
    train = _build(pool, spec.train_pairs, spec.per_class_count, rng, colored)
    test = _build(pool, spec.held_out, spec.per_class_count, rng, colored)
    train_pairs = {tuple(p) for p in np.unique(train.pairs, axis=0)}
    assert not train_pairs & set(spec.held_out), "held-out combination leaked into the training split"
    return train, test


def synth_double(pool, spec):
    """Horizontally concatenated digit pairs; train on the non-held-out combos."""
    return _synth(pool, spec, colored=False)


def synth_colored_double(pool, spec):
    """As ``synth_double`` but every digit is colorized; 9 color pairs per digit combo."""
    return _synth(pool, spec, colored=True)


def manifest(spec, kind, train, test, pool):
    return {
        "kind": kind,
        "seed": spec.rng_seed,
        "split": spec.to_json(),
        "counts": {"train": len(train), "test": len(test), "pool": len(pool)},
        "pool_source": pool.source,
        "geometry": list(train.geometry),
        "provenance": {
            "columns": ["left_index", "right_index", "left_color", "right_color"],
            "train": train.manifest_rows(),
            "test": test.manifest_rows(),
        },
    }


def _image_bytes(ds, chunk=4096):
    """uint8 pixels of every sample, converted in chunks to bound peak memory."""
    out = np.empty((len(ds),) + ds.geometry[:2] + ((3,) if ds.colored else ()), dtype=np.uint8)
    for start in range(0, len(ds), chunk):
        idx = np.arange(start, min(start + chunk, len(ds)))
        out[idx] = png.to_bytes(ds.images(idx))
    return out


def save_dataset(directory, spec, kind, train, test):
    """Write ``manifest.json`` and ``tensors.cmem`` (uint8 pixels, pool and provenance)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    man = manifest(spec, kind, train, test, train.pool)
    (directory / "manifest.json").write_text(json.dumps(man, separators=(",", ":")) + "\n")
    tensors = {
        "pool_images": png.to_bytes(train.pool.images),
        "pool_labels": train.pool.labels,
    }
    for split, ds in (("train", train), ("test", test)):
        tensors[f"{split}_images"] = _image_bytes(ds)
        tensors[f"{split}_pairs"] = ds.pairs
        tensors[f"{split}_provenance"] = np.asarray(ds.manifest_rows(), dtype=np.int64).reshape(-1, 4)
    weights.save_tensors(directory / "tensors.cmem", tensors)
    return directory


def load_dataset(directory):
    """Inverse of ``save_dataset``: returns (spec, kind, train, test)."""
    directory = Path(directory)
    man = json.loads((directory / "manifest.json").read_text())
    t = weights.load_tensors(directory / "tensors.cmem")
    pool = DigitPool(t["pool_images"].astype(np.float32) / 255.0, t["pool_labels"], man["pool_source"])
    sets = []
    for split in ("train", "test"):
        prov = t[f"{split}_provenance"]
        colors = prov[:, 2:4] if man["kind"] == "colored" else None
        sets.append(DigitPairSet(pool, prov[:, 0].copy(), prov[:, 1].copy(), t[f"{split}_pairs"], colors))
    return SplitSpec.from_json(man["split"]), man["kind"], sets[0], sets[1]


def export_sample_png(dataset, index, path):
    return png.write_png(path, dataset.image(index))
