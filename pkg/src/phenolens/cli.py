"""Command-line interface: ``phenolens <command> ...``.

Errors print a single line ``ERROR(<category>): <message>`` on stderr and
exit with 2 (arguments/config), 3 (file format / data), 4 (numeric) or
1 (unexpected).
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import jsonschema

from . import __version__
from .analytics import class_centers, drift_score, pca2
from .contrastive import train_ssl
from .data import SyntheticConfig, generate_dataset, read_dataset, write_dataset
from .errors import ConfigError, DataError, PhenolensError
from .io import (
    atomic_write,
    dump_json,
    load_checkpoint,
    load_json,
    parse_run_config,
    read_embeddings,
    save_checkpoint,
    write_embeddings,
)
from .pipeline import analyze, embed_samples, run_pipeline
from .probe import ProbeConfig, evaluate, train_probe

logger = logging.getLogger("phenolens")

SCHEMA_PATH = os.path.join(os.path.dirname(__file__), "report_schema.json")


class UsageError(ConfigError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed_arg(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=_seed_arg, default=argparse.SUPPRESS, help="global seed (u64)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="phenolens", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"phenolens {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="render a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="contrastive pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", parents=[common], help="write backbone representations")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe", parents=[common], help="train and evaluate a linear probe")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--config", help="JSON with an optional 'probe' section")

    p = sub.add_parser("analyze", parents=[common], help="latent-space analysis report")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--centers-from", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--pca")
    p.add_argument("--novel-threshold", type=float, default=0.7)
    p.add_argument("--healthy-label", default="Normal")

    p = sub.add_parser("drift", parents=[common], help="drift score of a window against reference centers")
    p.add_argument("--ref", required=True)
    p.add_argument("--window", required=True)
    p.add_argument("--report")

    p = sub.add_parser("run", parents=[common], help="full pipeline from one config")
    p.add_argument("--config", required=True)
    p.add_argument("--report", required=True)
    return parser


def validate_report(report):
    with open(SCHEMA_PATH) as fh:
        schema = json.load(fh)
    jsonschema.validate(report, schema)


def _write_report(path, report):
    atomic_write(path, dump_json(report))


def _seed(args, doc=None):
    if "seed" in args:
        return args.seed
    if doc is not None and "seed" in doc:
        return doc["seed"]
    raise ConfigError("missing seed: pass --seed or set 'seed' in the config", "seed")


def cmd_gen_data(args):
    doc = load_json(args.config)
    seed = _seed(args, doc)
    if "data" in doc or "seed" in doc:
        cfg = parse_run_config(doc, seed).data
    else:
        try:
            cfg = SyntheticConfig(**doc)
        except TypeError as exc:
            raise ConfigError(f"data: {exc}", "data") from None
    samples = generate_dataset(cfg, seed)
    write_dataset(samples, args.out)
    logger.info("wrote %d samples to %s", len(samples), args.out)


def cmd_train(args):
    doc = load_json(args.config)
    cfg = parse_run_config(doc, args.seed if "seed" in args else None)
    samples = read_dataset(args.data)
    if not samples:
        raise DataError(f"{args.data}: dataset is empty")
    side = samples[0].image.shape[0]
    arch = dataclasses.replace(cfg.arch, input_dim=side * side)
    params, log = train_ssl(cfg.ssl, samples, arch)
    steps = len(log.lr_trace)
    schedule = None
    if steps:
        schedule = cfg.ssl.schedule(steps // cfg.ssl.epochs).to_dict()
    save_checkpoint("encoder", params, args.out, schedule=schedule, step=steps, seed=cfg.ssl.seed)
    atomic_write(args.out + ".trainlog.json", dump_json(log.to_dict()))


def cmd_embed(args):
    params = load_checkpoint(args.model, kind="encoder")
    samples = read_dataset(args.data)
    write_embeddings(embed_samples(params, samples), args.out)


def cmd_probe(args):
    cfg = ProbeConfig()
    if args.config:
        doc = load_json(args.config)
        section = dict(doc.get("probe") or {})
        if "seed" in args:
            section["seed"] = args.seed
        try:
            cfg = ProbeConfig(**section)
        except TypeError as exc:
            raise ConfigError(f"probe: {exc}", "probe") from None
    elif "seed" in args:
        cfg = ProbeConfig(seed=args.seed)
    train, val, test = (read_embeddings(p) for p in (args.train, args.val, args.test))
    probe, best_val = train_probe(train, val, cfg)
    metrics = evaluate(probe, test)
    save_checkpoint("probe", probe, args.out)
    _write_report(
        args.report,
        {"classes": list(probe.classes), "best_val_accuracy": best_val, "test": metrics.to_dict()},
    )


def cmd_analyze(args):
    E_test = read_embeddings(args.embeddings)
    E_train = read_embeddings(args.centers_from)
    report, _ = analyze(E_test, E_train, args.novel_threshold, args.healthy_label)
    if args.pca:
        coords, _, explained = pca2(E_test)
        lines = ["id,label,pc1,pc2"]
        for i, (x, y) in enumerate(coords):
            label = "" if E_test.labels is None else E_test.labels[i]
            lines.append(f"{E_test.ids[i]},{label},{x:.17g},{y:.17g}")
        atomic_write(args.pca, "\n".join(lines) + "\n")
        report["pca_explained_variance"] = [float(v) for v in explained]
    _write_report(args.report, report)


def cmd_drift(args):
    ref = read_embeddings(args.ref)
    window = read_embeddings(args.window)
    centers = class_centers(ref)
    score = drift_score(window, centers)
    out = {"drift_score": score, "n_window": len(window), "classes": list(centers.classes)}
    if args.report:
        _write_report(args.report, out)
    print(json.dumps(out, sort_keys=True))


def cmd_run(args):
    doc = load_json(args.config)
    cfg = parse_run_config(doc, args.seed if "seed" in args else None)
    report = run_pipeline(cfg)
    validate_report(report)
    _write_report(args.report, report)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "embed": cmd_embed,
    "probe": cmd_probe,
    "analyze": cmd_analyze,
    "drift": cmd_drift,
    "run": cmd_run,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required; see --help")
        logging.basicConfig(
            level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        COMMANDS[args.command](args)
    except PhenolensError as exc:
        print(f"ERROR({exc.category}): {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except jsonschema.ValidationError as exc:
        print(f"ERROR(schema): report failed validation: {_one_line(exc.message)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
