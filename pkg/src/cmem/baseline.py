"""Direct regression from a modality embedding to pixels (no latent model).

dense d_y -> 16x7x14, then two [upsample, conv 3x3 (8), ReLU] stages reach
28x56, and a final 3x3 conv with sigmoid emits the image.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import weights
from .image_models import TrainingDivergedError, from_nchw, to_nchw
from .nn import AdamState, LayerSpec as L, Sequential, adam_step
from .nn.losses import bce_sigmoid_grad, loss_bce

log = logging.getLogger(__name__)


def architecture(d_y, geometry):
    h, w, c = geometry
    h4, w4 = h // 4, w // 4
    return [L("dense", (d_y, 16 * h4 * w4)), L("relu"), L("reshape", (16, h4, w4)),
            L("upsample2x2"), L("conv2d", (16, 8, 3)), L("relu"),
            L("upsample2x2"), L("conv2d", (8, 8, 3)), L("relu"),
            L("conv2d", (8, c, 3)), L("sigmoid")]


@dataclass
class DirectRegressor:
    d_y: int
    geometry: tuple
    seed: int
    net: Sequential
    loss_history: list = field(default_factory=list)


def build_direct(d_y, geometry=(28, 56, 1), seed=0, dtype=np.float32):
    geometry = tuple(geometry)
    net = Sequential(architecture(d_y, geometry), dtype=dtype, rng=np.random.default_rng([seed, 41]))
    return DirectRegressor(d_y, geometry, seed, net)


def train_direct(regressor, y_z, images, epochs=10, batch=128, seed=None, lr=0.001):
    """Minimize pixel-summed BCE between predictions and paired images with Adam."""
    seed = regressor.seed if seed is None else seed
    net = regressor.net
    y_all = np.asarray(y_z, dtype=net.dtype)
    x_all = np.ascontiguousarray(to_nchw(images, regressor.geometry), dtype=net.dtype)
    if len(y_all) != len(x_all):
        raise ValueError(f"{len(y_all)} embeddings but {len(x_all)} images")
    if x_all.size and (x_all.min() < 0 or x_all.max() > 1):
        raise ValueError("image pixels must lie in [0, 1]")
    n_pix = x_all[0].size if len(x_all) else 0
    rng = np.random.default_rng([seed, 42])
    state = AdamState(lr=lr)
    params = net.params()
    for epoch in range(epochs):
        order = rng.permutation(len(x_all))
        total = 0.0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            probs = net.forward(y_all[idx])
            loss = loss_bce(probs, x_all[idx]) * n_pix
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"direct regressor: non-finite loss at epoch {epoch}")
            g = bce_sigmoid_grad(probs, x_all[idx], 1.0 / len(idx))
            net.layers[-1]._pop_cache()
            for layer in reversed(net.layers[:-1]):
                g = layer.backward(g)
            adam_step(params, net.grads(), state)
            total += loss * len(idx)
        regressor.loss_history.append(total / len(order))
        log.info("direct epoch %d loss %.4f", epoch + 1, regressor.loss_history[-1])
    return regressor


def predict_direct(regressor, y_z):
    y_z = np.asarray(y_z, dtype=regressor.net.dtype)
    single = y_z.ndim == 1
    y2 = np.atleast_2d(y_z)
    if y2.shape[1] != regressor.d_y:
        raise ValueError(f"embedding dimension {y2.shape[1]} != {regressor.d_y}")
    out = from_nchw(regressor.net.forward(y2, train=False), regressor.geometry)
    return out[0] if single else out


def save(regressor, path, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights.save_tensors(path.with_suffix(".cmem"), regressor.net.params())
    meta = {"kind": "direct_conv", "d_y": regressor.d_y, "geometry": list(regressor.geometry),
            "seed": regressor.seed, "architecture": regressor.net.architecture(),
            "loss_history": [float(v) for v in regressor.loss_history]}
    meta.update(extra or {})
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")
    return path.with_suffix(".cmem")


def load(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    reg = build_direct(meta["d_y"], tuple(meta["geometry"]), meta["seed"])
    reg.net.load_params(weights.load_tensors(path.with_suffix(".cmem")))
    reg.loss_history = list(meta["loss_history"])
    return reg
