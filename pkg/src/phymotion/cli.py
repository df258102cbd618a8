"""Command-line entry point: generate, train, evaluate, ablate, heatmap."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import jsonschema
from threadpoolctl import threadpool_limits

from . import __version__
from . import evalbench as eb
from .errors import DataError, DivergenceError, LeakageError, ParameterError, PhyMotionError, RangeError
from .model import ModelConfig
from .physim import Dataset, DatasetSpec, generate_dataset, load_dataset
from .training import TrainConfig, config_hash, load_model, train

log = logging.getLogger("phymotion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

SECTIONS = {"dataset": DatasetSpec, "train": TrainConfig, "model": ModelConfig}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- schema
def _field_schema(name, default):
    if name == "hsic_bandwidth":
        return {"anyOf": [{"const": "median"}, {"type": "number", "exclusiveMinimum": 0}]}
    if name in ("lam_phys", "lam_app"):
        return {"type": ["number", "null"], "minimum": 0}
    if isinstance(default, bool):
        return {"type": "boolean"}
    if isinstance(default, int):
        return {"type": "integer"}
    if isinstance(default, float):
        return {"type": "number"}
    if isinstance(default, str):
        return {"type": "string"}
    if isinstance(default, (list, tuple)):
        return {"type": "array"}
    if isinstance(default, dict):
        return {"type": "object"}
    return {}


_BOUNDS = {
    "lam": {"minimum": 0},
    "lr": {"exclusiveMinimum": 0},
    "weight_decay": {"minimum": 0},
    "clip_max_norm": {"exclusiveMinimum": 0},
    "horizon": {"minimum": 1},
    "epochs": {"minimum": 1},
    "batch_size": {"minimum": 2},
    "noise_std": {"minimum": 0},
    "dt": {"exclusiveMinimum": 0},
    "phys_reduction": {"enum": ["sum", "mean"]},
    "hsic_mode": {"enum": ["clip", "frame"]},
    "solver": {"enum": ["rk4", "euler"]},
}


def _section_schema(cls):
    props = {}
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        props[f.name] = {**_field_schema(f.name, default), **_BOUNDS.get(f.name, {})}
    return {"type": "object", "properties": props, "additionalProperties": False}


def config_schema():
    return {
        "type": "object",
        "properties": {
            **{name: _section_schema(cls) for name, cls in SECTIONS.items()},
            "seed": {"type": "integer"},
            "data_dir": {"type": "string"},
            "out_dir": {"type": "string"},
        },
        "additionalProperties": False,
    }


def validate_config(cfg):
    errors = sorted(jsonschema.Draft7Validator(config_schema()).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        lines = []
        for e in errors:
            where = ".".join(str(p) for p in e.path) or "<root>"
            lines.append(f"  {where}: {e.message}")
        raise UsageError("config does not match the schema:\n" + "\n".join(lines))


# ---------------------------------------------------------------- overrides
def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_override(cfg, assignment):
    """Apply ``key=value``; ``key`` is dotted (``train.lam``) or a unique field name."""
    if "=" not in assignment:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    value = _parse_value(raw)
    path = key.split(".")
    if len(path) == 1 and key not in ("seed", "data_dir", "out_dir"):
        owners = [s for s, cls in SECTIONS.items() if key in {f.name for f in dataclasses.fields(cls)}]
        if len(owners) != 1:
            hint = f"ambiguous between {owners}" if owners else "not a known setting"
            raise UsageError(f"--set {key}: {hint}; use a dotted path such as train.{key}")
        path = [owners[0], key]
    node = cfg
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise UsageError(f"--set {key}: {part} is not a section")
    node[path[-1]] = value


def load_config(path, overrides=(), seed=None):
    cfg = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise DataError(f"config file not found: {p}")
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {p} is not valid JSON: {exc}") from exc
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    validate_config(cfg)
    return cfg


def effective_configs(cfg):
    seed = cfg.get("seed", 0)
    train_d = {"seed": seed, **cfg.get("train", {})}
    tcfg = TrainConfig.from_dict(train_d)
    model_d = {"horizon": tcfg.horizon, "seed": tcfg.seed, **cfg.get("model", {})}
    mcfg = ModelConfig.from_dict(model_d)
    dspec = DatasetSpec.from_dict(cfg.get("dataset", {}))
    return dspec, tcfg, mcfg


def write_run_info(out_dir, cfg, extra=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    info = {
        "library_version": __version__,
        "seed": cfg.get("seed", 0),
        "config": cfg,
        "config_hash": config_hash(cfg),
        "command": sys.argv[1:] if sys.argv else [],
        **(extra or {}),
    }
    (out / "run_info.json").write_text(json.dumps(info, sort_keys=True, indent=1, default=str) + "\n")


def _dataset_for(cfg, dspec, data_dir):
    data_dir = data_dir or cfg.get("data_dir")
    if data_dir:
        return load_dataset(data_dir)
    return Dataset.from_spec(dspec, cfg.get("seed", 0))


def _full_config(cfg, dspec, tcfg, mcfg):
    return {**cfg, "dataset": dspec.to_dict(), "train": tcfg.to_dict(), "model": mcfg.to_dict()}


# ----------------------------------------------------------------- commands
def cmd_generate(args):
    spec_path = Path(args.spec) if args.spec else None
    if spec_path is not None and not spec_path.exists():
        raise DataError(f"dataset spec file not found: {spec_path}")
    raw = json.loads(spec_path.read_text()) if spec_path else {}
    raw = raw.get("dataset", raw)
    for item in args.set:
        key, _, value = item.partition("=")
        raw[key.split(".")[-1]] = _parse_value(value)
    errors = list(jsonschema.Draft7Validator(_section_schema(DatasetSpec)).iter_errors(raw))
    if errors:
        raise UsageError("dataset spec does not match the schema:\n" + "\n".join(
            f"  {'.'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors))
    spec = DatasetSpec.from_dict(raw)
    digest = generate_dataset(spec, args.seed, args.out)
    write_run_info(args.out, {"dataset": spec.to_dict(), "seed": args.seed}, {"manifest_sha256": digest})
    print(f"wrote {sum(spec.counts.values())} episodes to {args.out} (manifest sha256 {digest})")


def cmd_train(args):
    cfg = load_config(args.config, args.set, args.seed)
    dspec, tcfg, mcfg = effective_configs(cfg)
    dataset = _dataset_for(cfg, dspec, args.data)
    out = Path(args.out or cfg.get("out_dir") or "runs/train")
    write_run_info(out, _full_config(cfg, dspec, tcfg, mcfg), {"dataset_hash": dataset.hash})
    result = train(dataset, tcfg, mcfg, out_dir=out)
    print(json.dumps({"final": result.final.to_dict(), "val_accuracy": result.val_accuracy[-1]}, sort_keys=True))


def cmd_evaluate(args):
    dataset = load_dataset(args.data)
    if not Path(args.checkpoint).exists():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    model, meta = load_model(args.checkpoint)
    meta.setdefault("checkpoint_id", str(args.checkpoint))
    report = eb.evaluate((model, meta), dataset, args.split)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
        write_run_info(Path(args.out).parent, {"seed": (meta.get("train_config") or {}).get("seed", 0),
                                               "checkpoint": str(args.checkpoint), "split": args.split},
                       {"dataset_hash": dataset.hash})
    print(text)


def cmd_ablate(args):
    cfg = load_config(args.config, args.set, args.seed)
    dspec, tcfg, mcfg = effective_configs(cfg)
    dataset = _dataset_for(cfg, dspec, args.data)
    out = Path(args.out or cfg.get("out_dir") or "runs/ablation")
    write_run_info(out, _full_config(cfg, dspec, tcfg, mcfg), {"dataset_hash": dataset.hash})
    if args.lam:
        grid = eb.sweep_lambda(dataset, tcfg, mcfg, args.lam, out_dir=out, split=args.split)
        for lam, res in grid.items():
            print(f"lam={lam:g}")
            print(eb.ablation_table(res), end="")
        results = [r for res in grid.values() for r in res]
    else:
        results = eb.run_ablation(dataset, tcfg, mcfg, out_dir=out, split=args.split)
        print(eb.ablation_table(results), end="")
    if all(r.failed for r in results):
        raise DivergenceError("every ablation arm diverged")


def cmd_heatmap(args):
    dataset = load_dataset(args.data)
    if not Path(args.checkpoint).exists():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    model, meta = load_model(args.checkpoint)
    eb.check_leakage(dataset, args.split, meta)
    hm = eb.prediction_heatmap(model, dataset.split(args.split), args.context, args.horizon)
    stem = Path(args.out)
    hm.save(stem)
    write_run_info(stem.parent, {"checkpoint": str(args.checkpoint), "split": args.split,
                                 "context": args.context, "horizon": args.horizon,
                                 "seed": (meta.get("train_config") or {}).get("seed", 0)},
                   {"dataset_hash": dataset.hash, "episodes": hm.n_episodes, "skipped": hm.n_skipped})
    print(hm.to_csv(), end="")


# ------------------------------------------------------------------- parser
def build_parser():
    p = argparse.ArgumentParser(prog="phymotion", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = bitwise-reproducible reference)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic motion dataset")
    g.add_argument("--spec", help="dataset spec JSON (defaults used when omitted)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    g.set_defaults(func=cmd_generate)

    def run_opts(sp):
        sp.add_argument("--config", help="run config JSON with dataset/train/model sections")
        sp.add_argument("--data", help="dataset directory (otherwise generated from the config)")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override, e.g. train.lam=0.5 or lam=0.5")

    t = sub.add_parser("train", help="train a model")
    run_opts(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train and score the four loss arms")
    run_opts(a)
    a.add_argument("--split", default="test")
    a.add_argument("--lam", type=float, action="append", default=[],
                   help="repeat to sweep the loss weight, e.g. --lam 0.01 --lam 0.1 --lam 1")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("evaluate", help="score a checkpoint on a held-out split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="write the report JSON here")
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("heatmap", help="predicted-vs-encoded motion feature similarity")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--data", required=True)
    h.add_argument("--split", default="test")
    h.add_argument("--context", type=int, default=9)
    h.add_argument("--horizon", type=int, default=3)
    h.add_argument("--out", required=True, help="output stem; .csv and .pgm are written")
    h.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (UsageError, ParameterError, RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LeakageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except PhyMotionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
