"""Command-line front end: ``a3sn <command> [flags]``.

Exit status is 0 on success, 1 for usage/configuration problems, 2 for bad
input data or files, 3 for numeric failures.  Errors go to stderr as a single
line starting with ``a3sn: error[<kind>]:``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from typing import Sequence

import numpy as np

from .config import AblationMode, TrainConfig
from .encoding import LABELS, Example, Segment, dump_jsonl, encode, load_jsonl, synth_dataset, tokenize, tokens_of
from .errors import A3SNError, ConfigurationError, DataError, NumericError, UsageError
from .gradcheck import gradcheck_suite
from .model import forward, load_checkpoint, save_params
from .training import ablation_markdown, evaluate, history_csv, run_ablations, train

log = logging.getLogger("a3sn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_data(path: str) -> list[Example]:
    try:
        data = load_jsonl(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not data:
        raise DataError(f"{path}: no records")
    return data


def _config(args) -> TrainConfig:
    if getattr(args, "config", None):
        try:
            cfg = TrainConfig.from_file(args.config)
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
    else:
        cfg = TrainConfig()
    pairs = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key] = value
    cfg = cfg.with_overrides(pairs)
    if getattr(args, "mode", None):
        cfg = cfg.replace(mode=AblationMode.parse(args.mode))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg.validate()


def _metrics_line(name: str, m) -> str:
    return f"{name}: accuracy={m.accuracy:.4f} macro_f1={m.macro_f1:.4f} loss={m.loss:.4f}"


# ----------------------------------------------------------------- commands


def cmd_synth_data(args) -> int:
    if args.n <= 0:
        raise UsageError(f"--n must be positive, got {args.n}")
    extra = {} if args.distractor_rate is None else {"distractor_rate": args.distractor_rate}
    data = synth_dataset(args.n, args.seed, args.vocab_size, **extra)
    dump_jsonl(data, args.out)
    counts = Counter(ex.label for ex in data)
    print(f"wrote {len(data)} examples to {args.out}")
    print(" ".join(f"{lab}={counts[lab]}" for lab in LABELS))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data = _load_data(args.data)
    val = _load_data(args.val) if args.val else None
    result = train(data, cfg, val_set=val)
    save_params(result.params, args.out_checkpoint, cfg, result.vocab)
    if args.metrics_csv:
        _write_text(args.metrics_csv, history_csv(result.history, cfg))
    best = [r for r in result.history if r.epoch == result.best_epoch]
    print(f"mode={cfg.mode.value} seed={cfg.seed} best_epoch={result.best_epoch}")
    for r in best:
        print(f"{r.split}: accuracy={r.accuracy:.4f} macro_f1={r.macro_f1:.4f} loss={r.loss:.4f}")
    print(f"checkpoint written to {args.out_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config is None or ckpt.vocab is None:
        raise DataError(f"{args.checkpoint} has no stored configuration or vocabulary")
    cfg = ckpt.config
    if args.mode:
        cfg = cfg.replace(mode=AblationMode.parse(args.mode))
    m = evaluate(_load_data(args.data), ckpt.params, cfg, ckpt.vocab)
    print(_metrics_line("eval", m))
    print("confusion (rows gold, columns predicted; " + ", ".join(f"{i}={lab}" for i, lab in enumerate(LABELS)) + "):")
    for row in m.confusion:
        print("  " + " ".join(f"{v:5d}" for v in row))
    if args.out_json:
        _write_text(args.out_json, json.dumps(m.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    if not args.tol > 0:
        raise UsageError(f"--tol must be positive, got {args.tol}")
    try:
        results = gradcheck_suite(args.seed, args.d_model, args.heads, args.tol)
    except A3SNError as exc:
        raise UsageError(str(exc)) from exc
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_error={r.max_rel_error:.3e}  coords={r.n_coords:5d}  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check above tol={args.tol:g} for: {', '.join(failed)}")
    print(f"all {len(results)} checks within tol={args.tol:g}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    data = _load_data(args.data)
    test = _load_data(args.test) if args.test else None
    rows = run_ablations(data, cfg, test)
    report = ablation_markdown(rows)
    _write_text(args.out_report, report)
    if args.out_json:
        dump = {row.mode.value: dict(row.metrics.to_dict(), best_epoch=row.best_epoch) for row in rows}
        _write_text(args.out_json, json.dumps(dump, indent=2, sort_keys=True) + "\n")
    print(report, end="")
    return 0


def cmd_inspect_attention(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config is None or ckpt.vocab is None:
        raise DataError(f"{args.checkpoint} has no stored configuration or vocabulary")
    cfg, params = ckpt.config, ckpt.params
    if not 0 <= args.layer < len(params.layers):
        raise UsageError(f"--layer {args.layer} out of range (model has {len(params.layers)})")
    if not 0 <= args.head < params.heads:
        raise UsageError(f"--head {args.head} out of range (model has {params.heads})")
    if not tokenize(args.aspect):
        raise UsageError("--aspect has no tokens")
    ex = Example.from_text(args.text, args.aspect, LABELS[0])
    enc = encode(ex, ckpt.vocab, cfg.max_len, pad=False)
    pred = forward(enc, params, cfg)

    trace = pred.traces[args.layer]
    score_ori = trace.score_ori[args.head]
    score_amp = trace.score_amp[args.head]
    cross = enc.amplify == 2.0
    mass_ori = float(score_ori[cross].sum())
    mass_amp = float(score_amp[cross].sum())

    def matrix(a):
        return None if a is None else np.asarray(a).tolist()

    out = {
        "text": args.text,
        "aspect": args.aspect,
        "layer": args.layer,
        "head": args.head,
        "mode": cfg.mode.value,
        "tokens": tokens_of(enc, ckpt.vocab),
        "segments": [Segment(int(s)).name for s in enc.segments],
        "amplify": matrix(enc.amplify),
        "score_ori": matrix(score_ori),
        "score_amp": matrix(score_amp),
        "gate_o": matrix(trace.gate_o[args.head]),
        "gate_a": matrix(trace.gate_a[args.head]),
        "cross_mass_ori": mass_ori,
        "cross_mass_amp": mass_amp,
        "prediction": pred.to_dict(),
    }
    if args.out_json:
        _write_text(args.out_json, json.dumps(out, indent=2) + "\n")
    probs = " ".join(f"{lab}={p:.4f}" for lab, p in zip(LABELS, pred.probs))
    print(f"aspect={args.aspect!r} predicted={pred.label} ({probs})")
    print(f"layer {args.layer} head {args.head}: cross-segment mass original={mass_ori:.6f} amplified={mass_amp:.6f}")
    return 0


# ------------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="root seed (overrides the config file)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="a3sn", description="Amplified aspect-sentence attention classifier.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-data", help="write a seeded synthetic JSONL dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--distractor-rate", type=float, default=None,
                   help="share of sentences with a second, differently rated aspect")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--val", help="validation JSONL (default: seeded hold-out of --data)")
    p.add_argument("--mode", choices=[m.value for m in AblationMode])
    _add_config_flags(p)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--metrics-csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=[m.value for m in AblationMode])
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-model", type=int, default=8)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train every ablation mode and write a Markdown table")
    p.add_argument("--data", required=True)
    p.add_argument("--test", help="evaluation JSONL (default: seeded hold-out of --data)")
    _add_config_flags(p)
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-json", help="also write full per-mode metrics as JSON")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect-attention", help="dump one head's attention for a sentence/aspect pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--aspect", required=True)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_inspect_attention)
    return parser


def _kind(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    if isinstance(exc, ConfigurationError):
        return "config"
    if isinstance(exc, DataError):
        return "data"
    if isinstance(exc, NumericError):
        return "numeric"
    if isinstance(exc, OSError):
        return "io"
    return "error"


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except (A3SNError, OSError) as exc:
        code = exc.exit_code if isinstance(exc, A3SNError) else 2
        msg = str(exc) if not isinstance(exc, OSError) else f"{exc.filename}: {exc.strerror or exc}"
        print(f"a3sn: error[{_kind(exc)}]: {msg}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
