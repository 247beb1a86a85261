"""Command-line entry point: ``sarcasm-detect <subcommand> [options] [--section.key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, load_run_config, write_run_config
from .data_io import SPLITS, match_reference, parse_manifest, synth_dataset
from .errors import ConfigError, DataError, GradCheckError, SarcasmDetectError
from .pipeline import ablation_csv, evaluate_checkpoint, predict_csv, run_ablation, run_training
from .verification import MODULE_CASES, run_suite

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_VERIFY = 4


def _split_overrides(extra: Sequence[str]) -> list[str]:
    """Accept both ``--a.b=v`` and ``--a.b v``; anything else is a usage error."""
    out, i = [], 0
    while i < len(extra):
        item = extra[i]
        if not item.startswith("--") or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"unrecognized argument {item!r}")
        if "=" not in item:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {item!r} has no value")
            item = f"{item}={extra[i + 1]}"
            i += 1
        out.append(item)
        i += 1
    return out


def _config(args, extra: Sequence[str]) -> RunConfig:
    overrides = _split_overrides(extra)
    # dedicated flags are shorthands for [run] settings
    for key in ("manifest", "out_dir", "checkpoint", "split"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"--run.{key}={value}")
    return load_run_config(args.config, overrides)


def _require(value: str, what: str) -> str:
    if not value:
        raise ConfigError(f"missing {what}")
    return value


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)


def cmd_train(args, extra) -> int:
    cfg = _config(args, extra)
    _require(cfg.run.manifest, "manifest (--manifest or --run.manifest)")
    run = run_training(cfg)
    summary = {
        "out_dir": cfg.run.out_dir,
        "best_epoch": run.result.best_epoch,
        "epochs_run": len(run.result.history),
        "stopped_early": run.result.stopped_early,
        "seed": cfg.train.seed,
    }
    if run.splits.get("test"):
        summary["test"] = run.metrics("test").as_dict(4)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    cfg = _config(args, extra)
    report = evaluate_checkpoint(
        _require(cfg.run.checkpoint, "checkpoint"), _require(cfg.run.manifest, "manifest"), cfg.run.split
    )
    print(report.to_text())
    return EXIT_OK


def cmd_predict(args, extra) -> int:
    cfg = _config(args, extra)
    text = predict_csv(
        _require(cfg.run.checkpoint, "checkpoint"), _require(cfg.run.manifest, "manifest"), cfg.run.split
    )
    _emit(text, args.output)
    return EXIT_OK


def cmd_ablate(args, extra) -> int:
    cfg = _config(args, extra)
    rows = run_ablation(_require(cfg.run.manifest, "manifest"), cfg.model, cfg.train)
    text = ablation_csv(rows)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, out / "config.ini")
    (out / "ablation.csv").write_text(text, encoding="utf-8", newline="")
    _emit(text, args.output)
    return EXIT_OK


def cmd_gradcheck(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    only = list(MODULE_CASES) if args.variants else None
    if args.case:
        only = args.case
    start = time.perf_counter()
    results = run_suite(seed=args.seed, h=args.h, tol=args.tol, max_entries=args.max_entries, only=only)
    failed = 0
    for r in results:
        worst = r.report.worst()
        status = "ok" if r.report.passed else "FAIL"
        failed += not r.report.passed
        print(f"{r.name:28s} max_rel_error={r.report.max_rel_error:.3e} worst={worst.name} {status} ({r.seconds:.1f}s)")
    print(f"{len(results) - failed}/{len(results)} passed in {time.perf_counter() - start:.1f}s (tol {args.tol:g})")
    return EXIT_OK if not failed else EXIT_VERIFY


def cmd_synth(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    path = synth_dataset(
        args.out, n=args.n, seed=args.seed, d_signal=args.d_signal, regions=args.regions, noise=args.noise
    )
    print(path)
    return EXIT_OK


def cmd_stats(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    stats = parse_manifest(args.manifest).stats()
    print("split,sarcastic,non_sarcastic,unlabeled,total")
    for name in SPLITS:
        s = stats[name]
        print(f"{name},{s.sarcastic},{s.non_sarcastic},{s.unlabeled},{s.total}")
    print(f"all,{sum(s.sarcastic for s in stats.values())},{sum(s.non_sarcastic for s in stats.values())},"
          f"{sum(s.unlabeled for s in stats.values())},{sum(s.total for s in stats.values())}")
    print(f"reference: {match_reference(stats) or 'none'}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sarcasm-detect", description="Cross-modal incongruity sarcasm detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p, *flags):
        p.add_argument("--config", help="INI file with [model], [train], [run] sections")
        for flag in flags:
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, default=None)
        return p

    p = with_config(sub.add_parser("train", help="train a model and write a checkpoint"), "manifest", "out_dir")
    p.set_defaults(func=cmd_train)
    p = with_config(sub.add_parser("eval", help="metrics of a checkpoint on one split"), "manifest", "checkpoint", "split")
    p.set_defaults(func=cmd_eval)
    p = with_config(sub.add_parser("predict", help="per-sample predictions as CSV"), "manifest", "checkpoint", "split")
    p.add_argument("--output", "-o", help="CSV destination (default: stdout)")
    p.set_defaults(func=cmd_predict)
    p = with_config(sub.add_parser("ablate", help="train the full model and three variants"), "manifest", "out_dir")
    p.add_argument("--output", "-o", help="extra CSV destination (default: stdout)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every module and the full loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--tol", type=float, default=1e-4, help="maximum relative error")
    p.add_argument("--max-entries", type=int, default=None, help="sample at most this many entries per tensor")
    p.add_argument("--variants", action="store_true", help="also check every ablation variant")
    p.add_argument("--case", action="append", choices=sorted(MODULE_CASES), help="run only these cases")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic manifest with planted cross-modal incongruity")
    p.add_argument("--out", required=True, help="output folder")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-signal", type=int, default=16, help="region feature width")
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="per-split label counts and matching reference dataset")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"sarcasm-detect: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"sarcasm-detect: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GradCheckError as exc:
        print(f"sarcasm-detect: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except SarcasmDetectError as exc:
        print(f"sarcasm-detect: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
