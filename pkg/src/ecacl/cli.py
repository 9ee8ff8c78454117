"""Command-line entry point.

    ecacl generate-data --out data/
    ecacl train --config run.json --out runs/p0
    ecacl eval --checkpoint runs/p0/model.eckl --config run.json
    ecacl ablate --config run.json --seeds 0,1,2,3,4 --out runs/ablation
    ecacl sweep --param sigma --values 0.65,0.8,0.95 --out runs/sigma
    ecacl gradcheck

Exit status: 0 success, 2 configuration error, 3 numeric failure, 4 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .checkpoint import load_checkpoint
from .config import TrainConfig, dump_config, load_config, schema
from .data import write_idx
from .errors import ConfigError, EcaclError, FormatError, NumericError
from .experiments import ablation_runs, set_path, summarize, sweep_runs
from .gradcheck import run_gradcheck
from .report import plot_ablation, plot_sweep, plot_training_curve, write_csv
from .trainer import evaluate, prepare_domains, train

log = logging.getLogger("ecacl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as configuration errors (exit 2)."""

    def error(self, message):
        raise ConfigError(message)


def _config(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        config = set_path(config, key.strip(), value)
    return config


def _seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}") from exc


def _values(text: str) -> list:
    out = []
    for s in text.split(","):
        s = s.strip()
        try:
            out.append(json.loads(s))
        except json.JSONDecodeError:
            out.append(s)
    return out


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_json(obj, path: Path) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def cmd_generate_data(args) -> int:
    config = _config(args)
    out = _out_dir(args.out)
    source, landmarks, unlabeled = prepare_domains(config)
    target = unlabeled.as_eval_dataset()
    write_idx(source, out / "source-images.idx", out / "source-labels.idx")
    write_idx(target, out / "target-images.idx", out / "target-labels.idx")
    write_idx(landmarks, out / "landmark-images.idx", out / "landmark-labels.idx")
    print(f"wrote {len(source.labels)} source, {len(landmarks.labels)} landmark, {len(target.labels)} unlabeled target images to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args)
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    summary = train(config, out_dir=out)
    records = [json.loads(r.to_json()) for r in summary["records"]]
    plot_training_curve(records, out / "curve.png")
    print(f"target MCA {summary['target_mca']:.4f} after {config.steps} steps ({time.perf_counter() - t0:.1f}s); outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config(args)
    model = load_checkpoint(args.checkpoint)
    source, landmarks, unlabeled = prepare_domains(config)
    dataset = {"target": unlabeled, "source": source, "landmarks": landmarks}[args.split]
    rec = evaluate(model, dataset, split=args.split)
    text = rec.to_json()
    if args.out:
        try:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot write {args.out}: {exc}") from exc
    print(text)
    return EXIT_OK


def _progress(res) -> None:
    print(f"  {res.label:<14} seed {res.seed}: MCA {100 * res.target_mca:6.2f}  ({res.seconds:.1f}s)", flush=True)


def cmd_ablate(args) -> int:
    config = _config(args)
    out = _out_dir(args.out)
    seeds = _seeds(args.seeds)
    dump_config(config, out / "config.json")
    results = ablation_runs(config, seeds, progress=_progress)
    rows = summarize(results)
    write_csv([r.as_row() for r in results], out / "runs.csv")
    write_csv(rows, out / "ablation.csv")
    plot_ablation(rows, out / "ablation.png")
    _write_json({"seeds": seeds, "rows": rows}, out / "summary.json")
    for r in rows:
        print(f"{r['label']:<14} {100 * r['mean_mca']:6.2f} +- {100 * r['std_mca']:5.2f}  ({r.get('delta_vs_st', 0.0) * 100:+.2f} vs ST)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config(args)
    out = _out_dir(args.out)
    seeds = _seeds(args.seeds)
    values = _values(args.values)
    dump_config(config, out / "config.json")
    results = sweep_runs(config, args.param, values, seeds, progress=_progress)
    rows = summarize(results)
    write_csv([r.as_row() for r in results], out / "runs.csv")
    write_csv(rows, out / "sweep.csv")
    plot_sweep(rows, args.param, out / "sweep.png")
    _write_json({"param": args.param, "values": values, "seeds": seeds, "rows": rows}, out / "summary.json")
    for r in rows:
        print(f"{r['label']:<20} {100 * r['mean_mca']:6.2f} +- {100 * r['std_mca']:5.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = run_gradcheck(seed=args.seed, trials=args.trials, h=args.h, tol=args.tol)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<16} max rel err {r.max_rel_err:.3e} over {r.num_coords} coords")
    print(f"{time.perf_counter() - t0:.2f}s")
    if not all(r.passed for r in results):
        raise NumericError("finite-difference check failed")
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(schema(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ecacl", description="Semi-supervised domain adaptation with enhanced categorical alignment and consistency learning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="JSON run config (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. --set sigma=0.9 or --set data.jitter=0.5")

    sp = sub.add_parser("generate-data", help="render the synthetic domains to IDX files")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("train", help="train one model; writes metrics, summary, checkpoint and a curve")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    with_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("target", "source", "landmarks"), default="target")
    sp.add_argument("--out", help="also write the metrics record here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="baseline plus the 8-row component grid, per split seed")
    with_config(sp)
    sp.add_argument("--seeds", default="0,1,2,3,4")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep", help="vary one config field, per split seed")
    with_config(sp)
    sp.add_argument("--param", required=True, help="dotted config field, e.g. sigma or variant")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--seeds", default="0,1,2,3,4")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=3)
    sp.add_argument("--h", type=float, default=1e-6)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("schema", help="print config fields with types and defaults")
    sp.set_defaults(func=cmd_schema)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except EcaclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
