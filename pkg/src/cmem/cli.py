"""Command-line entry point: ``cmem <subcommand> [options]``.

Settings are resolved in three layers: ``RunConfig`` defaults, then an
optional ``--config`` JSON file, then explicit flags. The resolved config is
written to ``<out>/run_config.json`` by every command so a run can be repeated
from its output directory alone.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, image_models, mapping
from .embeddings import UnknownTokenError
from .evaluation import MissingClassError
from .pipeline import (
    MissingArtifactError,
    RunConfig,
    evaluate,
    generate,
    run_all,
    synth_data,
    train_ae,
    train_baseline,
    train_map,
)

log = logging.getLogger("cmem")


def _csv(kind=str):
    return lambda text: [kind(v) for v in text.split(",") if v.strip()]


def _seeds(text):
    """``--seeds 3`` means seeds 0, 1, 2; ``--seeds 4,9`` lists them."""
    if "," not in text and text.strip().isdigit():
        return list(range(int(text)))
    return _csv(int)(text)


def _common_parser():
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", default=S, help="JSON file with RunConfig fields")
    g.add_argument("--out", dest="out_dir", default=S, help="output directory")
    g.add_argument("--dataset", choices=("double", "colored"), default=S)
    g.add_argument("--scale", type=float, default=S, help="multiplier on images per class (0.1 = desk scale)")
    g.add_argument("--per-class-count", type=int, default=S)
    g.add_argument("--held-out", type=int, default=S, help="number of held-out digit pairs")
    g.add_argument("--seed", type=int, default=S, help="single run seed")
    g.add_argument("--seeds", type=_seeds, default=S, help="seed count N (0..N-1) or comma list")
    g.add_argument("--methods", type=_csv(), default=S, help=f"comma list from {','.join(image_models.KINDS)}")
    g.add_argument("--modalities", type=_csv(), default=S, help="comma list from text,speech")
    g.add_argument("--variant", dest="mapping_variant", choices=mapping.VARIANTS, default=S)
    g.add_argument("--ae-epochs", type=int, default=S)
    g.add_argument("--map-epochs", type=int, default=S)
    g.add_argument("--baseline-epochs", type=int, default=S)
    g.add_argument("--batch", type=int, default=S)
    g.add_argument("--lr", type=float, default=S)
    g.add_argument("--text-table", default=S, help="external token table (token + floats per line)")
    g.add_argument("--speech-dir", default=S, help="directory of <word>.wav clips")
    g.add_argument("--sample-rate", type=int, default=S)
    g.add_argument("--mnist-dir", default=S, help="directory with MNIST IDX files (else $CMEM_DATA_DIR)")
    g.add_argument("--candidate-pool", choices=("class", "all"), default=S)
    g.add_argument("--literal-psnr", action="store_true", default=S,
                   help="divide by the full Euclidean norm instead of per-pixel RMSE")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="cmem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("synth-data", "synthesize the digit-pair dataset"),
        ("train-ae", "train the image auto-encoders"),
        ("train-map", "train the constrained embedding mappings"),
        ("train-baseline", "train the direct regression baseline"),
        ("evaluate", "score held-out classes and write the report"),
        ("pipeline", "run every stage in order"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    gen = sub.add_parser("generate", parents=[common], help="generate images for named classes")
    gen.add_argument("--from", dest="modality", choices=("text", "speech"), default="text")
    gen.add_argument("--class", dest="classes", action="append", required=True,
                     help="class words, e.g. 'seven five' or 'red five blue one' (repeatable)")
    gen.add_argument("--method", default=None, help="image model kind or 'direct'")
    return parser


def resolve_config(args):
    """Merge defaults, the optional JSON config and explicit flags into a RunConfig."""
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "modality", "classes", "method")}
    data = {}
    if "config" in flags:
        data.update(json.loads(Path(flags.pop("config")).read_text(encoding="utf-8")))
    if "seed" in flags:
        flags["seeds"] = [flags.pop("seed")]
    data.update(flags)
    return RunConfig.from_dict(data)


def _save_config(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {**cfg.snapshot(), "scale": cfg.scale, "config_hash": cfg.content_hash()}
    (out / "run_config.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")


def _run(args, cfg):
    cmd = args.command
    per_seed = {"synth-data": synth_data, "train-ae": train_ae, "train-map": train_map,
                "train-baseline": train_baseline}
    if cmd in per_seed:
        for seed in cfg.seeds:
            out = per_seed[cmd](cfg, seed)
            for p in out if isinstance(out, list) else [out]:
                print(p)
    elif cmd == "generate":
        for seed in cfg.seeds:
            paths, grid = generate(cfg, seed, args.modality, args.classes, args.method)
            for p in paths + [grid]:
                print(p)
    elif cmd in ("evaluate", "pipeline"):
        report = run_all(cfg) if cmd == "pipeline" else evaluate(cfg)
        print(report.table(), end="")
        print(Path(cfg.out_dir) / "report" / "eval_report.json")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        _save_config(cfg)
        _run(args, cfg)
    except (MissingArtifactError, MissingClassError, UnknownTokenError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cmem: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
