"""Paired latent auto-encoders tied by a latent-equality penalty, plus latent-swap inference.

Image side: either fixed z-score normalization of the image embeddings
(``variant="normalization"``) or a trainable dense encoder/decoder pair
(``variant="trainable"``). Modality side: dense d_y -> 256 -> 100 encoder
and its mirror decoder. Training minimizes

    w1 * mse(l_x, l_y) + w2 * mse(x_z, x~_z) + w3 * mse(y_z, y~_z)
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import image_models, weights
from .nn import AdamState, LayerSpec as L, Sequential, adam_step, loss_mse, loss_mse_grad

log = logging.getLogger(__name__)

LATENT_DIM = 100
SIGMA_FLOOR = 1e-6
VARIANTS = ("normalization", "trainable")


class MappingDivergedError(FloatingPointError):
    pass


def fit_normalization(x_z):
    x_z = np.asarray(x_z, dtype=np.float64)
    if x_z.ndim != 2 or len(x_z) == 0:
        raise ValueError("fit_normalization needs a non-empty (n, d) array of embeddings")
    if len(x_z) < 2:
        raise ValueError("fit_normalization needs at least two embeddings")
    return x_z.mean(axis=0), np.maximum(x_z.std(axis=0), SIGMA_FLOOR)


def _mlp(d_in, d_out, hidden, rng):
    return Sequential([L("dense", (d_in, hidden)), L("relu"), L("dense", (hidden, d_out))],
                      dtype=np.float64, rng=rng)


@dataclass
class MappingConfig:
    variant: str = "normalization"
    epochs: int = 50
    batch: int = 128
    lr: float = 0.001
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    hidden: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown mapping variant {self.variant!r}; expected one of {VARIANTS}")


@dataclass
class MappingModel:
    config: MappingConfig
    d_x: int
    d_y: int
    f_y: Sequential
    f_y_inv: Sequential
    mu_x: np.ndarray = None
    sigma_x: np.ndarray = None
    f_x: Sequential = None
    f_x_inv: Sequential = None
    traces: dict = field(default_factory=lambda: {"L1": [], "L2": [], "L3": [], "total": []})
    initial: dict = field(default_factory=dict)

    @property
    def variant(self):
        return self.config.variant

    @property
    def trained(self):
        return bool(self.traces["total"])

    # image side ----------------------------------------------------------
    def encode_x(self, x_z, train=False):
        if self.variant == "normalization":
            return (np.asarray(x_z, dtype=np.float64) - self.mu_x) / self.sigma_x
        return self.f_x.forward(np.asarray(x_z, dtype=np.float64), train=train)

    def decode_x(self, l, train=False):
        if self.variant == "normalization":
            return np.asarray(l, dtype=np.float64) * self.sigma_x + self.mu_x
        return self.f_x_inv.forward(np.asarray(l, dtype=np.float64), train=train)

    # modality side -------------------------------------------------------
    def encode_y(self, y_z, train=False):
        y_z = np.asarray(y_z, dtype=np.float64)
        if y_z.shape[-1] != self.d_y:
            raise ValueError(f"modality embedding dimension {y_z.shape[-1]} != {self.d_y}")
        return self.f_y.forward(np.atleast_2d(y_z), train=train)

    def decode_y(self, l, train=False):
        return self.f_y_inv.forward(np.atleast_2d(l), train=train)

    def networks(self):
        nets = {"f_y": self.f_y, "f_y_inv": self.f_y_inv}
        if self.variant == "trainable":
            nets.update(f_x=self.f_x, f_x_inv=self.f_x_inv)
        return nets

    def params(self):
        return {f"{n}.{k}": v for n, net in self.networks().items() for k, v in net.params().items()}

    def grads(self):
        return {f"{n}.{k}": v for n, net in self.networks().items() for k, v in net.grads().items()}


def init_mapping(d_x, d_y, config=None, x_z=None):
    config = config or MappingConfig()
    rng = np.random.default_rng([config.seed, 31])
    model = MappingModel(config, d_x, d_y,
                         f_y=_mlp(d_y, LATENT_DIM, config.hidden, rng),
                         f_y_inv=_mlp(LATENT_DIM, d_y, config.hidden, rng))
    if config.variant == "normalization":
        if d_x != LATENT_DIM:
            raise ValueError(f"normalization variant needs d_x == {LATENT_DIM}, got {d_x}")
        if x_z is None:
            model.mu_x, model.sigma_x = np.zeros(d_x), np.ones(d_x)
        else:
            model.mu_x, model.sigma_x = fit_normalization(x_z)
    else:
        model.f_x = _mlp(d_x, LATENT_DIM, config.hidden, rng)
        model.f_x_inv = _mlp(LATENT_DIM, d_x, config.hidden, rng)
    return model


def step(model, xb, yb):
    """Forward/backward on one batch; returns (L1, L2, L3) and leaves grads on the nets."""
    cfg = model.config
    l_y = model.encode_y(yb, train=True)
    y_rec = model.decode_y(l_y, train=True)
    l3 = loss_mse(y_rec, yb)
    g_ly = model.f_y_inv.backward(cfg.w3 * loss_mse_grad(y_rec, yb))
    if model.variant == "normalization":
        l_x = model.encode_x(xb)
        l1 = loss_mse(l_y, l_x)
        g_ly = g_ly + cfg.w1 * loss_mse_grad(l_y, l_x)
        l2 = 0.0  # f'_x(f_x(.)) is the identity by construction
    else:
        l_x = model.encode_x(xb, train=True)
        x_rec = model.decode_x(l_x, train=True)
        l1 = loss_mse(l_y, l_x)
        l2 = loss_mse(x_rec, xb)
        g1 = cfg.w1 * loss_mse_grad(l_y, l_x)
        g_ly = g_ly + g1
        g_lx = model.f_x_inv.backward(cfg.w2 * loss_mse_grad(x_rec, xb)) - g1
        model.f_x.backward(g_lx)
    model.f_y.backward(g_ly)
    return l1, l2, l3


def objective(model, x_z, y_z):
    """(total, L1, L2, L3) over the full set without touching gradients."""
    cfg = model.config
    l_y = model.encode_y(y_z)
    l_x = model.encode_x(x_z)
    l1 = loss_mse(l_y, l_x)
    l2 = 0.0 if model.variant == "normalization" else loss_mse(model.decode_x(l_x), x_z)
    l3 = loss_mse(model.decode_y(l_y), y_z)
    return cfg.w1 * l1 + cfg.w2 * l2 + cfg.w3 * l3, l1, l2, l3


def train_mapping(x_z, y_z, config=None, model=None):
    """Fit a mapping on aligned pairs (row i of ``x_z`` pairs with row i of ``y_z``).

    The image-side embeddings are taken as given (the image model is frozen).
    Returns the model; per-epoch means of each loss land in ``model.traces``.
    """
    x_z = np.asarray(x_z, dtype=np.float64)
    y_z = np.asarray(y_z, dtype=np.float64)
    if x_z.ndim != 2 or y_z.ndim != 2 or len(x_z) != len(y_z):
        raise ValueError(f"paired embeddings must be aligned 2-D arrays, got {x_z.shape} and {y_z.shape}")
    config = config or MappingConfig()
    if model is None:
        model = init_mapping(x_z.shape[1], y_z.shape[1], config, x_z)
    elif model.d_x != x_z.shape[1] or model.d_y != y_z.shape[1]:
        raise ValueError(f"model expects d_x={model.d_x}, d_y={model.d_y}; got {x_z.shape[1]}, {y_z.shape[1]}")
    if not model.initial:
        total, l1, l2, l3 = objective(model, x_z, y_z)
        model.initial = {"L1": l1, "L2": l2, "L3": l3, "total": total}
    rng = np.random.default_rng([config.seed, 32])
    state = AdamState(lr=config.lr)
    params = model.params()
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_z))
        sums = np.zeros(3)
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            terms = step(model, x_z[idx], y_z[idx])
            if not np.all(np.isfinite(terms)):
                raise MappingDivergedError(f"non-finite mapping loss {terms} at epoch {epoch}")
            adam_step(params, model.grads(), state)
            sums += np.asarray(terms) * len(idx)
        l1, l2, l3 = sums / len(order)
        model.traces["L1"].append(l1)
        model.traces["L2"].append(l2)
        model.traces["L3"].append(l3)
        model.traces["total"].append(config.w1 * l1 + config.w2 * l2 + config.w3 * l3)
        log.debug("mapping epoch %d L1 %.4f L2 %.4f L3 %.4f", epoch + 1, l1, l2, l3)
    return model


def _require_trained(mapping):
    if not mapping.trained:
        raise RuntimeError("mapping model is untrained")


def cross_embed(y_z, mapping):
    """Image embedding predicted from a modality embedding: f'_x(f_y(y_z))."""
    _require_trained(mapping)
    return mapping.decode_x(mapping.encode_y(y_z))


def translate_to_image(y_z, mapping, image_model):
    """Generate images from modality embeddings alone.

    Only ``y_z`` is read: its latent stands in for the image latent and is
    decoded by the image side.
    """
    y_z = np.asarray(y_z, dtype=np.float64)
    x_tilde = cross_embed(y_z, mapping)
    images = image_models.decode(image_model, x_tilde.astype(image_model.dtype))
    return images[0] if y_z.ndim == 1 else images


@dataclass
class ClassIndex:
    """One fixed embedding per known class, searched by Euclidean distance."""

    classes: list
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if len(self.classes) != len(self.vectors):
            raise ValueError("class list and embedding rows disagree in length")

    def rank(self, query):
        if not self.classes:
            raise ValueError("class index is empty")
        d = np.sqrt(((self.vectors - np.asarray(query, dtype=np.float64)) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")
        return [(self.classes[i], float(d[i])) for i in order]


def retrieve(x_z, mapping, index):
    """Rank known classes by distance to f'_y(f_x(x_z)) for one image embedding."""
    _require_trained(mapping)
    if not index.classes:
        raise ValueError("class index is empty")
    y_tilde = mapping.decode_y(mapping.encode_x(np.atleast_2d(x_z)))[0]
    return index.rank(y_tilde)


def translate_to_modality(image, mapping, image_model, index):
    """Rank known classes by distance to f'_y(f_x(encode(image)))."""
    return retrieve(image_models.encode(image_model, image), mapping, index)


def save(mapping, path, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = dict(mapping.params())
    if mapping.variant == "normalization":
        tensors["mu_x"] = mapping.mu_x
        tensors["sigma_x"] = mapping.sigma_x
    weights.save_tensors(path.with_suffix(".cmem"), tensors)
    sidecar = {
        "variant": mapping.variant,
        "config": asdict(mapping.config),
        "d_x": mapping.d_x,
        "d_y": mapping.d_y,
        "traces": {k: [float(v) for v in vs] for k, vs in mapping.traces.items()},
        "initial": {k: float(v) for k, v in mapping.initial.items()},
    }
    sidecar.update(extra or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return path.with_suffix(".cmem")


def load(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    model = init_mapping(meta["d_x"], meta["d_y"], MappingConfig(**meta["config"]))
    tensors = weights.load_tensors(path.with_suffix(".cmem"))
    for name, net in model.networks().items():
        net.load_params({k[len(name) + 1:]: v for k, v in tensors.items() if k.startswith(name + ".")})
    if model.variant == "normalization":
        model.mu_x, model.sigma_x = tensors["mu_x"], tensors["sigma_x"]
    model.traces = meta["traces"]
    model.initial = meta["initial"]
    return model
