"""Command-line entry point: ``snacflow {gen,train,eval,sample,compare,check}``.

Exit codes: 0 success, 1 check failure, 2 I/O or configuration error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checks, evalkit, synthdata
from .errors import ConfigError, NonFiniteError, SnacFlowError
from .synthdata import DatasetSpec, load_dataset, make_dataset
from .trainer import Checkpoint, TrainConfig, config_from_dict, train, write_atomic

log = logging.getLogger("snacflow")


@dataclass(frozen=True)
class EvalOptions:
    n_generate: int = 10_000
    seed: int = 0
    svg: bool = True
    svg_points: int = 1000


@dataclass(frozen=True)
class CliConfig:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    output_dir: str = "runs"

    def to_dict(self) -> dict:
        return {"data": asdict(self.data), "train": asdict(self.train),
                "eval": asdict(self.eval), "output_dir": self.output_dir}

    def digest(self) -> str:
        canonical = json.dumps({k: v for k, v in self.to_dict().items() if k != "output_dir"},
                               sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir).resolve() / f"run-{self.digest()}"


SECTIONS = {"data": DatasetSpec, "train": TrainConfig, "eval": EvalOptions}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place (value parsed as JSON)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a section")
    node[parts[-1]] = _parse_value(raw)


def load_config(path: str | None, overrides: list[str] = ()) -> CliConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
    for item in overrides:
        apply_override(doc, item)
    unknown = sorted(set(doc) - set(SECTIONS) - {"output_dir"})
    if unknown:
        raise ConfigError(f"unknown key(s) in config: {', '.join(unknown)}")
    kwargs = {}
    for name, cls in SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        kwargs[name] = config_from_dict(cls, section, f"config section '{name}'")
    if "output_dir" in doc:
        kwargs["output_dir"] = str(doc["output_dir"])
    return CliConfig(**kwargs)


def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".17g") if isinstance(v, (float, np.floating)) else str(v)


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _dataset_for(args, spec: DatasetSpec):
    if getattr(args, "dataset", None):
        d = Path(args.dataset)
        return load_dataset(d / "dataset.csv", d / "conditions.json")
    return make_dataset(spec)


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.out).resolve() if args.out else cfg.run_dir
    ds = make_dataset(cfg.data)
    write_atomic(out / "dataset.csv", synthdata.dataset_csv(ds))
    write_atomic(out / "conditions.json", synthdata.conditions_json(ds))
    dims = cfg.data.frames * cfg.data.channels
    entropy = -float(np.mean([synthdata.true_loglik(x, ds.condition(int(c)), cfg.data.base_shape)
                              for x, c in zip(ds.x, ds.cond_ids)])) / dims if len(ds.x) else 0.0
    print(f"wrote {out}")
    print(f"conditions: {len(ds.split_ids('seen'))} seen, {len(ds.split_ids('unseen'))} unseen")
    print(f"samples: {len(ds.x)} x {cfg.data.frames} frames x {cfg.data.channels} channels")
    print(f"entropy estimate: {entropy:.6f} nats/dim")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.out).resolve() if args.out else cfg.run_dir
    resume = Checkpoint.load(args.resume) if args.resume else None
    ds = _dataset_for(args, cfg.data)
    ckpt = train(cfg.train, ds, resume=resume)
    ckpt.save(out / "checkpoint.json")
    rows = [(h["step"], h["train_nll"], h["unseen_nll"]) for h in ckpt.history]
    write_atomic(out / "loss.csv", _csv(["step", "train_nll", "unseen_nll"], rows))
    m = ckpt.metrics
    print(f"wrote {out / 'checkpoint.json'}")
    print(f"mode {ckpt.arch.mode}  steps {ckpt.step}  seen_nll {_fmt(m['seen_nll'])}  "
          f"unseen_nll {_fmt(m['unseen_nll'])}")
    return 0


def cmd_eval(args) -> int:
    ckpts = [Checkpoint.load(p) for p in args.checkpoint]
    out = Path(args.out).resolve() if args.out else Path(args.checkpoint[0]).resolve().parent
    opts = load_config(args.config, args.set).eval if args.config or args.set else EvalOptions()
    ds = _dataset_for(args, ckpts[0].data)
    rows = []
    for ckpt in ckpts:
        report = evalkit.evaluate(ckpt, ds, n_generate=opts.n_generate, seed=opts.seed)
        mode = ckpt.arch.mode
        write_atomic(out / f"report-{mode}.json", report.to_json())
        rows.append(evalkit.report_row(report))
        print(f"{mode}: seen_nll {_fmt(report.seen_nll)}  unseen_nll {_fmt(report.unseen_nll)}  "
              f"moment_distance {report.mean_moment_distance:.4f}  "
              f"roundtrip {report.roundtrip_error:.2e}")
        if opts.svg and ds.spec.channels >= 2:
            stack = ckpt.stack()
            for cid in ds.split_ids("unseen"):
                x, _, _ = ds.subset(cond_id=cid)
                gen = evalkit.generate(stack, ds.embeddings[cid], opts.svg_points,
                                       ds.spec.frames, seed=opts.seed + cid)
                svg = evalkit.scatter_svg(x[:opts.svg_points], gen,
                                          f"{mode}: condition {cid} (unseen)")
                write_atomic(out / f"scatter-{mode}-cond{cid}.svg", svg)
    if len(ckpts) > 1:
        rows.append(evalkit.oracle_row(ds, opts.n_generate, opts.seed))
        write_atomic(out / "comparison.csv", evalkit.comparison_csv(rows))
        print(f"wrote {out / 'comparison.csv'}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.out).resolve() if args.out else cfg.run_dir
    ds = _dataset_for(args, cfg.data)
    rows, reports = evalkit.compare_modes(cfg.train, ds, n_generate=cfg.eval.n_generate)
    for mode, report in reports.items():
        write_atomic(out / f"report-{mode}.json", report.to_json())
    text = evalkit.comparison_csv(rows)
    write_atomic(out / "comparison.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_sample(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    if args.embedding:
        g = np.asarray(json.loads(Path(args.embedding).read_text()), dtype=np.float64)
    else:
        conds = {c.id: c for c in synthdata.make_conditions(ckpt.data)}
        if args.condition_id not in conds:
            raise ConfigError(f"unknown condition id {args.condition_id}")
        g = synthdata.condition_embedding(ckpt.data, conds[args.condition_id])
    if g.shape != (ckpt.arch.embed_dim,):
        raise ConfigError(f"embedding must have length {ckpt.arch.embed_dim}, got {g.shape}")
    if args.n < 0:
        raise ConfigError("-n must be >= 0")
    x = evalkit.generate(ckpt.stack(), g, args.n, ckpt.data.frames, seed=args.seed)
    D = ckpt.arch.channels
    rows = ([i, t] + list(frame) for i, obs in enumerate(x) for t, frame in enumerate(obs))
    text = _csv(["sample", "frame"] + [f"ch{j}" for j in range(D)], rows)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_check(args) -> int:
    results = checks.run_checks(args.inject_fault or ())
    print(checks.format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snacflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, required=False):
        p.add_argument("--config", required=required, help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry by dotted path, e.g. train.steps=100")
        return p

    p = with_config(sub.add_parser("gen", help="generate the synthetic dataset"))
    p.add_argument("--out", help="output directory (default: run directory)")
    p.set_defaults(fn=cmd_gen)

    p = with_config(sub.add_parser("train", help="train a flow by maximum likelihood"))
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--dataset", help="directory with dataset.csv and conditions.json")
    p.set_defaults(fn=cmd_train)

    p = with_config(sub.add_parser("eval", help="evaluate one or more checkpoints"))
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = with_config(sub.add_parser("compare", help="train both modes and tabulate"))
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sample", help="draw samples for a condition")
    p.add_argument("--checkpoint", required=True)
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--condition-id", type=int)
    who.add_argument("--embedding", help="JSON file holding one embedding vector")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("check", help="run the built-in verification suite")
    p.add_argument("--inject-fault", action="append", choices=checks.FAULTS,
                   help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SnacFlowError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
