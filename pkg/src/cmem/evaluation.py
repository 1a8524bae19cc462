"""PSNR against the nearest test image, Table-1 style reports and image grids."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import png

PSNR_CAP = 100.0
DATASET_LABELS = {"double": "Two digit", "colored": "Colored two digit"}
MODALITY_LABELS = {"text": "text", "speech": "speech"}


class MissingClassError(LookupError):
    pass


def nearest(pred, candidates):
    """(index, squared distance) of the Euclidean-nearest candidate; ties go to the lowest index."""
    pred = np.asarray(pred, dtype=np.float64)
    cands = np.asarray(candidates, dtype=np.float64)
    if len(cands) == 0:
        raise ValueError("candidate set is empty")
    if cands.shape[1:] != pred.shape:
        raise ValueError(f"candidate shape {cands.shape[1:]} != prediction shape {pred.shape}")
    d = ((cands.reshape(len(cands), -1) - pred.reshape(1, -1)) ** 2).sum(axis=1)
    i = int(np.argmin(d))
    return i, float(d[i])


def psnr(pred, reference, max_intensity=1.0, per_pixel=True, cap=PSNR_CAP):
    """20 log10(max / err), err = RMSE per pixel (or the raw L2 norm with ``per_pixel=False``)."""
    sq = float(((np.asarray(pred, np.float64) - np.asarray(reference, np.float64)) ** 2).sum())
    return _psnr_from_sq(sq, np.size(pred), max_intensity, per_pixel, cap)


def _psnr_from_sq(sq, n, max_intensity, per_pixel, cap):
    err = math.sqrt(sq / n) if per_pixel else math.sqrt(sq)
    if err == 0.0:
        return cap
    return min(cap, 20.0 * math.log10(max_intensity / err))


def psnr_nearest(pred, candidates, max_intensity=1.0, per_pixel=True, cap=PSNR_CAP):
    _, sq = nearest(pred, candidates)
    return _psnr_from_sq(sq, np.size(pred), max_intensity, per_pixel, cap)


def evaluate_method(generate, classes, test_set, candidate_pool="class", per_pixel=True):
    """Per-class PSNR of one generated image per class.

    ``generate(classes)`` returns one image per class. Each image is scored
    against the nearest test image of its own class (``candidate_pool="class"``)
    or of the whole test set (``"all"``). Returns ``(per_class, mean)``.
    """
    classes = list(classes)
    keys = test_set.class_keys()
    key_of = {test_set.combo(i): k for k, i in zip(*np.unique(keys, return_index=True))}
    missing = [c.name for c in classes if c not in key_of]
    if missing:
        raise MissingClassError(f"classes absent from the test set: {missing}")
    images = np.asarray(generate(classes))
    if len(images) != len(classes):
        raise MissingClassError(f"generator produced {len(images)} images for {len(classes)} classes")
    all_images = test_set.images() if candidate_pool == "all" else None
    per_class = {}
    for cls, img in zip(classes, images):
        cands = all_images if all_images is not None else test_set.images(np.flatnonzero(keys == key_of[cls]))
        per_class[cls.name] = psnr_nearest(img, cands, per_pixel=per_pixel)
    return per_class, float(np.mean(list(per_class.values())))


@dataclass
class EvalReport:
    """Cells keyed ``(method, modality, dataset)`` holding per-seed results."""

    config: dict = field(default_factory=dict)
    cells: dict = field(default_factory=dict)
    grids: list = field(default_factory=list)

    def add(self, method, modality, dataset, seed, per_class, mean):
        cell = self.cells.setdefault((method, modality, dataset), {})
        cell[int(seed)] = {"mean": float(mean), "per_class": {k: float(v) for k, v in per_class.items()}}

    def mean(self, method, modality, dataset):
        seeds = self.cells[(method, modality, dataset)]
        return float(np.mean([r["mean"] for r in seeds.values()]))

    def to_json(self):
        cells = []
        for (method, modality, dataset), seeds in sorted(self.cells.items()):
            cells.append({
                "method": method, "modality": modality, "dataset": dataset,
                "mean_psnr_db": self.mean(method, modality, dataset),
                "per_seed": [{"seed": s, "mean_psnr_db": r["mean"], "per_class_psnr_db": r["per_class"]}
                             for s, r in sorted(seeds.items())],
            })
        return {"config": self.config, "cells": cells, "grids": sorted(self.grids)}

    def dumps(self):
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d):
        rep = cls(config=d["config"], grids=list(d["grids"]))
        for cell in d["cells"]:
            for row in cell["per_seed"]:
                rep.add(cell["method"], cell["modality"], cell["dataset"], row["seed"],
                        row["per_class_psnr_db"], row["mean_psnr_db"])
        return rep

    def table(self):
        """Aligned text table: one row per method (plus per-seed rows), one column per cell."""
        columns = sorted({(mod, ds) for _, mod, ds in self.cells},
                         key=lambda c: (c[0] != "text", c[1] != "double", c))
        methods = sorted({m for m, _, _ in self.cells}, key=lambda m: (m != "direct", m))
        heads = [f"{MODALITY_LABELS.get(m, m)} / {DATASET_LABELS.get(d, d)}" for m, d in columns]
        rows = []
        for method in methods:
            rows.append([method] + [f"{self.mean(method, *c):.2f}" if (method, *c) in self.cells else "-"
                                    for c in columns])
            seeds = sorted({s for c in columns for s in self.cells.get((method, *c), {})})
            if len(seeds) > 1:
                for s in seeds:
                    rows.append([f"  seed {s}"] + [
                        f"{self.cells[(method, *c)][s]['mean']:.2f}"
                        if s in self.cells.get((method, *c), {}) else "-" for c in columns])
        widths = [max(len(r[i]) for r in rows + [["PSNR (dB)"] + heads]) for i in range(len(heads) + 1)]
        fmt = lambda r: "  ".join(v.ljust(widths[0]) if i == 0 else v.rjust(widths[i])  # noqa: E731
                                  for i, v in enumerate(r))
        lines = [fmt(["PSNR (dB)"] + heads), "  ".join("-" * w for w in widths)]
        lines += [fmt(r) for r in rows]
        return "\n".join(lines) + "\n"


def tile(images, cols, sep=2, sep_value=0.5):
    """Row-major mosaic with ``sep``-pixel separators around and between tiles."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("render_grid needs at least one image")
    h, w = images[0].shape[:2]
    rgb = any(im.ndim == 3 for im in images)
    if rgb:
        images = [im if im.ndim == 3 else np.repeat(im[..., None], 3, axis=2) for im in images]
    cols = max(1, min(cols, len(images)))
    rows = math.ceil(len(images) / cols)
    shape = (rows * h + (rows + 1) * sep, cols * w + (cols + 1) * sep) + ((3,) if rgb else ())
    canvas = np.full(shape, sep_value)
    for k, im in enumerate(images):
        if im.shape[:2] != (h, w):
            raise ValueError(f"image {k} has shape {im.shape[:2]}, expected {(h, w)}")
        r, c = divmod(k, cols)
        y, x = sep + r * (h + sep), sep + c * (w + sep)
        canvas[y:y + h, x:x + w] = im
    return canvas


def render_grid(images, cols, path, sep=2):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    png.write_png(path, tile(images, cols, sep))
    return path
