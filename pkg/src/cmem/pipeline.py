"""Run configuration and the end-to-end stages behind the CLI.

Every artifact lives under ``<out_dir>/seed_<s>/`` so several seeds can share
one output directory; reports go to ``<out_dir>/report/``.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baseline, datasets, evaluation, image_models, mapping
from .embeddings import ClassEmbedder, load_token_table, load_word_clips, synth_token_table

log = logging.getLogger(__name__)

PAPER_PER_CLASS = {"double": 1000, "colored": 4000}


class MissingArtifactError(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    dataset: str = "double"
    seeds: list = field(default_factory=lambda: [0])
    per_class_count: int = None
    scale: float = 1.0
    held_out: int = 16
    methods: list = field(default_factory=lambda: ["conv_vae"])
    modalities: list = field(default_factory=lambda: ["text", "speech"])
    mapping_variant: str = "normalization"
    embed_dim: int = 13
    ae_epochs: int = 20
    map_epochs: int = 100
    baseline_epochs: int = 20
    batch: int = 128
    lr: float = 0.001
    text_table: str = None
    speech_dir: str = None
    sample_rate: int = 24000
    mnist_dir: str = None
    candidate_pool: str = "class"
    literal_psnr: bool = False
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.dataset not in PAPER_PER_CLASS:
            raise ValueError(f"unknown dataset kind {self.dataset!r}; expected 'double' or 'colored'")
        for m in self.methods:
            if m not in image_models.KINDS:
                raise ValueError(f"unknown image model kind {m!r}")
        for m in self.modalities:
            if m not in ("text", "speech"):
                raise ValueError(f"unknown modality {m!r}")
        if self.candidate_pool not in ("class", "all"):
            raise ValueError("candidate_pool must be 'class' or 'all'")

    @property
    def count(self):
        base = self.per_class_count or PAPER_PER_CLASS[self.dataset]
        return max(1, int(round(base * self.scale)))

    @property
    def geometry(self):
        return (28, 56, 3) if self.dataset == "colored" else (28, 56, 1)

    def snapshot(self):
        """Config fields that determine results (output location excluded)."""
        d = asdict(self)
        d.pop("out_dir")
        d["per_class_count"] = self.count
        d.pop("scale")
        return d

    def content_hash(self):
        body = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def seed_dir(cfg, seed):
    return Path(cfg.out_dir) / f"seed_{seed}"


def _paths(cfg, seed):
    root = seed_dir(cfg, seed)
    return {
        "data": root / "data",
        "image": lambda kind: root / "models" / f"image_{kind}.cmem",
        "map": lambda kind, mod: root / "models" / f"map_{kind}_{mod}.cmem",
        "direct": lambda mod: root / "models" / f"direct_{mod}.cmem",
    }


def _provenance(cfg, seed, **kw):
    return {"run_seed": seed, "config_hash": cfg.content_hash(), **kw}


def _write_trace(path, history):
    records = [{"epoch": i + 1, **({"loss": v} if not isinstance(v, dict) else v)} for i, v in enumerate(history)]
    Path(path).with_suffix(".trace.json").write_text(json.dumps(records, indent=1) + "\n")


def _require(path, what):
    if not Path(path).exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


# --- stages -------------------------------------------------------------------

def synth_data(cfg, seed):
    pool = datasets.load_digit_pool(cfg.mnist_dir)
    spec = datasets.SplitSpec.draw(seed, cfg.held_out, cfg.count)
    synth = datasets.synth_colored_double if cfg.dataset == "colored" else datasets.synth_double
    train, test = synth(pool, spec)
    out = datasets.save_dataset(_paths(cfg, seed)["data"], spec, cfg.dataset, train, test)
    log.info("seed %d: %d train / %d test samples -> %s", seed, len(train), len(test), out)
    return out


def load_data(cfg, seed):
    data = _paths(cfg, seed)["data"]
    _require(data / "manifest.json", "dataset")
    return datasets.load_dataset(data)


def embedder(cfg, modality, seed):
    if modality == "text":
        table = load_token_table(cfg.text_table) if cfg.text_table else synth_token_table(d_tok=cfg.embed_dim, seed=seed)
        return ClassEmbedder("text", table=table)
    clips = load_word_clips(cfg.speech_dir, sample_rate=cfg.sample_rate) if cfg.speech_dir else None
    return ClassEmbedder("speech", clips=clips, sample_rate=cfg.sample_rate)


def _sample_embeddings(emb, dataset):
    keys = dataset.class_keys()
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    table = emb.matrix([dataset.combo(i) for i in first])
    return table[inverse]


def train_ae(cfg, seed):
    _, _, train, _ = load_data(cfg, seed)
    images = train.images()
    out = []
    for kind in cfg.methods:
        model = image_models.build(kind, cfg.geometry, seed)
        image_models.train_image_model(model, images, cfg.ae_epochs, cfg.batch, seed, cfg.lr)
        path = image_models.save(model, _paths(cfg, seed)["image"](kind), _provenance(cfg, seed))
        _write_trace(path, model.loss_history)
        out.append(path)
    return out


def train_map(cfg, seed):
    p = _paths(cfg, seed)
    image_paths = {kind: _require(p["image"](kind), "image model") for kind in cfg.methods}
    _, _, train, _ = load_data(cfg, seed)
    images = train.images()
    out = []
    for kind, ipath in image_paths.items():
        model = image_models.load(ipath)
        x_z = image_models.encode(model, images)
        for modality in cfg.modalities:
            y_z = _sample_embeddings(embedder(cfg, modality, seed), train)
            mcfg = mapping.MappingConfig(variant=cfg.mapping_variant, epochs=cfg.map_epochs,
                                         batch=cfg.batch, lr=cfg.lr, seed=seed)
            m = mapping.train_mapping(x_z, y_z, mcfg)
            path = mapping.save(m, p["map"](kind, modality),
                                _provenance(cfg, seed, image_model=kind, modality=modality))
            _write_trace(path, [{"L1": a, "L2": b, "L3": c, "total": t} for a, b, c, t in
                                zip(m.traces["L1"], m.traces["L2"], m.traces["L3"], m.traces["total"])])
            out.append(path)
    return out


def train_baseline(cfg, seed):
    _, _, train, _ = load_data(cfg, seed)
    images = train.images()
    out = []
    for modality in cfg.modalities:
        y_z = _sample_embeddings(embedder(cfg, modality, seed), train)
        reg = baseline.build_direct(y_z.shape[1], cfg.geometry, seed)
        baseline.train_direct(reg, y_z, images, cfg.baseline_epochs, cfg.batch, seed, cfg.lr)
        path = baseline.save(reg, _paths(cfg, seed)["direct"](modality), _provenance(cfg, seed, modality=modality))
        _write_trace(path, reg.loss_history)
        out.append(path)
    return out


def held_out_classes(spec, dataset_kind):
    if dataset_kind == "colored":
        return [datasets.ComboClass(tuple(p), cp) for p in spec.held_out for cp in datasets.COLOR_PAIRS]
    return [datasets.ComboClass(tuple(p)) for p in spec.held_out]


def generator(cfg, seed, method, modality):
    """Callable mapping a list of ComboClass to generated images."""
    p = _paths(cfg, seed)
    emb = embedder(cfg, modality, seed)
    if method == "direct":
        reg = baseline.load(_require(p["direct"](modality), "direct baseline model"))
        return lambda classes: baseline.predict_direct(reg, emb.matrix(classes))
    image_model = image_models.load(_require(p["image"](method), "image model"))
    m = mapping.load(_require(p["map"](method, modality), "mapping model"))
    return lambda classes: mapping.translate_to_image(emb.matrix(classes), m, image_model)


def evaluate(cfg, grid_cols=4):
    report = evaluation.EvalReport(config=cfg.snapshot())
    out_root = Path(cfg.out_dir)
    for seed in cfg.seeds:
        spec, kind, _, test = load_data(cfg, seed)
        classes = held_out_classes(spec, kind)
        for method in ["direct"] + list(cfg.methods):
            for modality in cfg.modalities:
                gen = generator(cfg, seed, method, modality)
                generated = []

                def record(cls_list, gen=gen):
                    imgs = gen(cls_list)
                    generated.append(imgs)
                    return imgs

                per_class, mean = evaluation.evaluate_method(record, classes, test, cfg.candidate_pool,
                                                             per_pixel=not cfg.literal_psnr)
                report.add(method, modality, kind, seed, per_class, mean)
                rel = Path("report") / "grids" / f"seed_{seed}_{method}_{modality}.png"
                evaluation.render_grid(generated[0], grid_cols, out_root / rel)
                report.grids.append(str(rel))
    (out_root / "report").mkdir(parents=True, exist_ok=True)
    (out_root / "report" / "eval_report.json").write_text(report.dumps())
    (out_root / "report" / "table.txt").write_text(report.table())
    return report


def generate(cfg, seed, modality, class_texts, method=None):
    method = method or cfg.methods[0]
    classes = [datasets.ComboClass.parse(t) for t in class_texts]
    if any((c.colors is not None) != (cfg.dataset == "colored") for c in classes):
        raise ValueError(f"class tokens do not match the {cfg.dataset!r} dataset")
    images = generator(cfg, seed, method, modality)(classes)
    out = Path(cfg.out_dir) / "generated"
    out.mkdir(parents=True, exist_ok=True)
    from . import png
    paths = []
    for cls, img in zip(classes, images):
        paths.append(png.write_png(out / f"seed_{seed}_{method}_{modality}_{cls.name.replace(' ', '_')}.png", img))
    grid = evaluation.render_grid(list(images), 4, out / f"seed_{seed}_{method}_{modality}_grid.png")
    return paths, grid


def run_all(cfg):
    for seed in cfg.seeds:
        synth_data(cfg, seed)
        train_ae(cfg, seed)
        train_map(cfg, seed)
        train_baseline(cfg, seed)
    return evaluate(cfg)
