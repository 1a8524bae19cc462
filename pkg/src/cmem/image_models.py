"""Image embedding auto-encoders: conv-VAE, mlp-VAE, conv-AE and mlp-AE.

Images are (n, 28, 56) grayscale or (n, 28, 56, 3) RGB in [0, 1]; the
networks work channels-first internally. Every kind embeds to 100 dims.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import weights
from .nn import AdamState, Dense, LayerSpec as L, Sequential, adam_step
from .nn.losses import bce_sigmoid_grad, kl_diag_gaussian, kl_diag_gaussian_grad, loss_bce

log = logging.getLogger(__name__)

KINDS = ("conv_vae", "mlp_vae", "conv_ae", "mlp_ae")
GEOMETRIES = ((28, 56, 1), (28, 56, 3))
EMBED_DIM = 100


class TrainingDivergedError(FloatingPointError):
    pass


def architecture(kind, geometry):
    """(encoder specs, decoder specs) for one kind; VAE heads are added separately."""
    h, w, c = geometry
    flat = h * w * c
    if kind == "conv_vae":
        enc = [L("conv2d", (c, 8, 5)), L("relu"), L("maxpool2x2"), L("flatten"),
               L("dense", (8 * (h // 2) * (w // 2), 256)), L("relu")]
        dec = [L("dense", (EMBED_DIM, 8 * (h // 2) * (w // 2))), L("relu"), L("reshape", (8, h // 2, w // 2)),
               L("conv2d", (8, 8, 5)), L("relu"), L("upsample2x2"),
               L("conv2d", (8, c, 5)), L("sigmoid")]
    elif kind == "mlp_vae":
        enc = [L("flatten"), L("dense", (flat, 256)), L("relu")]
        dec = [L("dense", (EMBED_DIM, 256)), L("relu"), L("dense", (256, flat)), L("sigmoid"),
               L("reshape", (c, h, w))]
    elif kind == "conv_ae":
        # two pools leave 8 x 7 x 14 = 784 values, which is the decoder's dense width
        inner = 8 * (h // 4) * (w // 4)
        enc = [L("conv2d", (c, 16, 3)), L("relu"), L("maxpool2x2"),
               L("conv2d", (16, 8, 3)), L("relu"), L("maxpool2x2"), L("flatten"),
               L("dense", (inner, EMBED_DIM)), L("relu")]
        dec = [L("dense", (EMBED_DIM, inner)), L("relu"), L("reshape", (8, h // 4, w // 4)),
               L("conv2d", (8, 8, 3)), L("relu"), L("upsample2x2"),
               L("conv2d", (8, 16, 3)), L("relu"), L("upsample2x2"),
               L("conv2d", (16, c, 5)), L("sigmoid")]
    elif kind == "mlp_ae":
        enc = [L("flatten"), L("dense", (flat, 256)), L("relu"), L("dense", (256, EMBED_DIM)), L("relu")]
        dec = [L("dense", (EMBED_DIM, 256)), L("relu"), L("dense", (256, flat)), L("sigmoid"),
               L("reshape", (c, h, w))]
    else:
        raise ValueError(f"unknown image model kind {kind!r}; expected one of {KINDS}")
    return enc, dec


def to_nchw(images, geometry):
    images = np.asarray(images)
    h, w, c = geometry
    if images.shape[1:] == (h, w) and c == 1:
        return images[:, None, :, :]
    if images.shape[1:] == (h, w, c):
        return images.transpose(0, 3, 1, 2)
    raise ValueError(f"images of shape {images.shape[1:]} do not match geometry {geometry}")


def from_nchw(x, geometry):
    return x[:, 0] if geometry[2] == 1 else x.transpose(0, 2, 3, 1)


@dataclass
class ImageAutoencoder:
    kind: str
    geometry: tuple
    seed: int
    encoder: Sequential
    decoder: Sequential
    heads: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)
    dtype: np.dtype = np.float32

    @property
    def variational(self):
        return self.kind.endswith("vae")

    # parameter plumbing -------------------------------------------------
    def params(self):
        out = {f"enc.{k}": v for k, v in self.encoder.params().items()}
        for name, head in self.heads.items():
            out.update({f"{name}.{k}": v for k, v in head.params.items()})
        out.update({f"dec.{k}": v for k, v in self.decoder.params().items()})
        return out

    def grads(self):
        out = {f"enc.{k}": v for k, v in self.encoder.grads().items()}
        for name, head in self.heads.items():
            out.update({f"{name}.{k}": v for k, v in head.grads.items()})
        out.update({f"dec.{k}": v for k, v in self.decoder.grads().items()})
        return out

    def load_params(self, named):
        self.encoder.load_params({k[4:]: v for k, v in named.items() if k.startswith("enc.")})
        self.decoder.load_params({k[4:]: v for k, v in named.items() if k.startswith("dec.")})
        for name, head in self.heads.items():
            for k in head.params:
                head.params[k][...] = named[f"{name}.{k}"]

    # forward passes -----------------------------------------------------
    def encode_params(self, x, train=False):
        """(mu, log_var) for VAEs, (code, None) for plain auto-encoders; x is NCHW."""
        hidden = self.encoder.forward(x, train=train)
        if self.variational:
            return self.heads["mu"].forward(hidden, train=train), self.heads["log_var"].forward(hidden, train=train)
        return hidden, None

    def decode_nchw(self, z, train=False):
        return self.decoder.forward(z, train=train)

    def shape_trace(self):
        h, w, c = self.geometry
        trace = [("input", (c, h, w))]
        trace += [("enc." + k, s) for k, s in self.encoder.shape_trace((c, h, w))]
        hidden = trace[-1][1]
        for name, head in self.heads.items():
            trace.append((name, tuple(head.infer_shape(hidden))))
        trace += [("dec." + k, s) for k, s in self.decoder.shape_trace((EMBED_DIM,))]
        return trace


def build(kind, geometry=(28, 56, 1), seed=0, dtype=np.float32):
    geometry = tuple(geometry)
    if geometry not in GEOMETRIES:
        raise ValueError(f"unsupported geometry {geometry}; supported: {GEOMETRIES}")
    enc_specs, dec_specs = architecture(kind, geometry)
    rng = np.random.default_rng([seed, 11])
    encoder = Sequential(enc_specs, dtype=dtype, rng=rng)
    heads = {}
    if kind.endswith("vae"):
        heads = {"mu": Dense(256, EMBED_DIM, rng=rng, dtype=dtype),
                 "log_var": Dense(256, EMBED_DIM, rng=rng, dtype=dtype)}
    decoder = Sequential(dec_specs, dtype=dtype, rng=rng)
    return ImageAutoencoder(kind, geometry, seed, encoder, decoder, heads, dtype=np.dtype(dtype))


def _decoder_logit_grad(model, probs, target, scale):
    # drop the trailing reshape of mlp decoders: it commutes with the elementwise sigmoid
    g = bce_sigmoid_grad(probs, target, scale)
    layers = model.decoder.layers
    if layers[-1].spec.kind == "reshape":
        g = layers[-1].backward(g)
    return g


def _decoder_backward(model, g_logits):
    dec = model.decoder
    layers = dec.layers[:-1] if dec.layers[-1].spec.kind == "reshape" else dec.layers
    layers[-1]._pop_cache()  # sigmoid: gradient already taken w.r.t. its input
    for layer in reversed(layers[:-1]):
        g_logits = layer.backward(g_logits)
    return g_logits


def loss_and_grads(model, x, eps=None):
    """Forward + backward on an NCHW batch. Returns (total, recon, kl) per-sample means.

    Reconstruction is BCE summed over pixels; VAEs add the KL term (weight 1).
    """
    n = x.shape[0]
    n_pix = x[0].size
    mu, log_var = model.encode_params(x, train=True)
    if model.variational:
        if eps is None:
            raise ValueError("VAE training step needs eps draws")
        z = mu + np.exp(0.5 * log_var) * eps
    else:
        z = mu
    probs = model.decoder.forward(z, train=True)
    recon = loss_bce(probs, x) * n_pix
    g = _decoder_logit_grad(model, probs, x, 1.0 / n)
    dz = _decoder_backward(model, g)
    if model.variational:
        kl = kl_diag_gaussian(mu, log_var) / n
        gmu_kl, glv_kl = kl_diag_gaussian_grad(mu, log_var)
        std = np.exp(0.5 * log_var)
        dmu = dz + gmu_kl / n
        dlv = dz * eps * 0.5 * std + glv_kl / n
        dh = model.heads["mu"].backward(dmu.astype(x.dtype)) + model.heads["log_var"].backward(dlv.astype(x.dtype))
    else:
        kl = 0.0
        dh = dz
    model.encoder.backward(dh)
    return recon + kl, recon, kl


def loss_terms(model, x, eps=None):
    """Per-element terms whose sum is the training loss of ``loss_and_grads``.

    Leaves activation caches populated so ``activation_pattern`` can read them.
    """
    n = len(x)
    mu, log_var = model.encode_params(x, train=True)
    z = mu if log_var is None else mu + np.exp(0.5 * log_var) * eps
    p = np.clip(model.decoder.forward(z, train=True), 1e-7, 1 - 1e-7)
    bce = -(x * np.log(p) + (1 - x) * np.log(1 - p)) / n
    if log_var is None:
        return bce.ravel()
    kl = -0.5 * (1 + log_var - mu ** 2 - np.exp(log_var)) / n
    return np.concatenate([bce.ravel(), kl.ravel()])


def activation_pattern(model):
    """ReLU masks and pooling argmax cached by the last training-mode forward pass."""
    layers = model.encoder.layers + model.decoder.layers
    return [layer._cache for layer in layers if layer.spec.kind in ("relu", "maxpool2x2")]


def train_image_model(model, images, epochs=10, batch=128, seed=0, lr=0.001):
    """Adam training on BCE (+ KL for VAEs). Appends one mean loss per epoch."""
    x_all = np.ascontiguousarray(to_nchw(images, model.geometry), dtype=model.dtype)
    if x_all.size and (x_all.min() < 0 or x_all.max() > 1):
        raise ValueError("image pixels must lie in [0, 1]")
    rng = np.random.default_rng([seed, 21])
    state = AdamState(lr=lr)
    params = model.params()
    for epoch in range(epochs):
        order = rng.permutation(len(x_all))
        total, count = 0.0, 0
        for start in range(0, len(order), batch):
            xb = x_all[order[start:start + batch]]
            eps = rng.standard_normal((len(xb), EMBED_DIM)).astype(model.dtype) if model.variational else None
            loss, recon, kl = loss_and_grads(model, xb, eps)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"{model.kind}: non-finite loss at epoch {epoch}, batch offset {start} "
                    f"(reconstruction={recon}, kl={kl})")
            adam_step(params, model.grads(), state)
            total += loss * len(xb)
            count += len(xb)
        model.loss_history.append(total / count)
        log.info("%s epoch %d loss %.4f", model.kind, epoch + 1, model.loss_history[-1])
    return model, list(model.loss_history)


def encode(model, images, batch=512):
    """Deterministic embeddings (the posterior mean for VAEs), shape (n, 100)."""
    images = np.asarray(images)
    single = images.ndim == len(model.geometry) - (model.geometry[2] == 1)
    if single:
        images = images[None]
    x = to_nchw(images, model.geometry).astype(model.dtype)
    out = np.concatenate([model.encode_params(x[i:i + batch])[0] for i in range(0, len(x), batch)]) \
        if len(x) else np.zeros((0, EMBED_DIM), model.dtype)
    return out[0] if single else out


def decode(model, z, batch=512):
    z = np.asarray(z, dtype=model.dtype)
    single = z.ndim == 1
    if single:
        z = z[None]
    if z.shape[1] != EMBED_DIM:
        raise ValueError(f"embedding dimension {z.shape[1]} != {EMBED_DIM}")
    out = np.concatenate([model.decode_nchw(z[i:i + batch]) for i in range(0, len(z), batch)])
    out = from_nchw(out, model.geometry)
    return out[0] if single else out


def reconstruction_bce(model, images):
    return loss_bce(decode(model, encode(model, images)), np.asarray(images, dtype=model.dtype))


def save(model, path, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights.save_tensors(path.with_suffix(".cmem"), model.params())
    sidecar = {
        "kind": model.kind,
        "geometry": list(model.geometry),
        "seed": model.seed,
        "embed_dim": EMBED_DIM,
        "loss_history": [float(v) for v in model.loss_history],
        "shape_trace": [[name, list(shape)] for name, shape in model.shape_trace()],
    }
    if model.kind == "conv_ae":
        sidecar["decoder_dense_width"] = int(np.prod(model.decoder.specs[2].sizes))
    sidecar.update(extra or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return path.with_suffix(".cmem")


def load(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    model = build(meta["kind"], tuple(meta["geometry"]), meta["seed"])
    model.load_params(weights.load_tensors(path.with_suffix(".cmem")))
    model.loss_history = list(meta["loss_history"])
    return model
