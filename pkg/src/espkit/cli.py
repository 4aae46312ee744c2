"""Command-line entry point: synth, mine, split, features, predict, eval, prompt."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from espkit import formats as F
from espkit.esp_features import extract_esp_tensor
from espkit.metrics import POLICIES, EvalConfig, evaluate, format_report
from espkit.miner import mine_tokens, split_dataset
from espkit.prompt import QUERIES, to_prompt, toolbox_query
from espkit.synth import PREDICTOR_KINDS, free_flow_script, gen_control_suite, gen_cutin_suite, gen_stream, scripted_predictor

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _read_tokens(path: str, strict: bool):
    return F.read_tokens(_existing(path), strict=strict)


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.suite == "cutin":
        cases = gen_cutin_suite(args.n, args.seed, n_events=args.events, min_duration=args.min_duration)
        items = [(c.stream, c.oracle) for c in cases]
    elif args.suite == "control":
        items = [(c.stream, c.oracle) for c in gen_control_suite(args.n, args.seed)]
    else:
        rng = np.random.default_rng(args.seed)
        items = []
        for i in range(args.n):
            script, duration = free_flow_script(rng, name=f"freeflow{args.seed}-{i:03d}")
            items.append(gen_stream(script, duration, args.seed))
    manifest = []
    for stream, oracle in items:
        path = out / f"{stream.id}.stream.jsonl"
        F.write_stream(stream, path)
        manifest.append(
            {
                "stream": path.name,
                "triggers": [{"time": F.round_sig(e.time), "tv_id": e.tv_id} for e in oracle.triggers],
            }
        )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(items)} streams to {out}")
    return EXIT_OK


def cmd_mine(args) -> int:
    tokens = []
    for path in args.streams:
        tokens.extend(mine_tokens(F.parse_stream(_existing(path))))
    tokens.sort(key=lambda t: t.id)
    F.write_tokens(tokens, args.out)
    print(f"mined {len(tokens)} tokens from {len(args.streams)} streams")
    return EXIT_OK


def cmd_split(args) -> int:
    tokens = [r.token for r in _read_tokens(args.tokens, args.strict)]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = split_dataset(tokens, args.seed)
    for name, part in zip(("train", "val", "test"), parts):
        F.write_tokens(part, out / f"{name}.jsonl")
    print(" ".join(f"{n}={len(p)}" for n, p in zip(("train", "val", "test"), parts)))
    return EXIT_OK


def cmd_features(args) -> int:
    tokens = [r.token for r in _read_tokens(args.tokens, args.strict)]
    F.write_tokens(tokens, args.out, [extract_esp_tensor(t) for t in tokens])
    print(f"wrote ESP features for {len(tokens)} tokens")
    return EXIT_OK


def cmd_predict(args) -> int:
    tokens = [r.token for r in _read_tokens(args.tokens, args.strict)]
    preds = [scripted_predictor(t, args.kind, k=args.k, dt=args.dt, offset=args.offset) for t in tokens]
    F.write_predictions(preds, args.out)
    print(f"wrote {len(preds)} {args.kind} predictions")
    return EXIT_OK


def cmd_eval(args) -> int:
    tokens = [r.token for r in _read_tokens(args.tokens, args.strict)]
    preds = F.parse_predictions(_existing(args.predictions))
    report = evaluate(tokens, preds, EvalConfig(t_u=args.t_u, policy=args.cutin_policy))
    if args.out:
        F.write_report(report, args.out)
    print(format_report(report))
    return EXIT_OK


def cmd_prompt(args) -> int:
    records = _read_tokens(args.tokens, args.strict)
    if args.id is not None:
        records = [r for r in records if r.token.id == args.id]
        if not records:
            raise ValueError(f"token {args.id!r} not found")
    chunks = []
    for r in records:
        if args.query:
            chunks.append("\n".join(f"{q}: {toolbox_query(r.token, q)}" for q in args.query))
        else:
            chunks.append(f"# token {r.token.id}\n" + to_prompt(r.token, r.esp).text())
    text = "\n".join(chunks)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _strict_flags(p) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--strict", dest="strict", action="store_true", default=True, help="reject unknown record keys (default)")
    g.add_argument("--lax", dest="strict", action="store_false", help="keep unknown record keys")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="espkit", description="Cut-in token mining, ESP features and temporal metrics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic frame streams")
    p.add_argument("--suite", choices=("cutin", "control", "freeflow"), default="cutin")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--events", type=int, default=1, help="cut-in events per stream")
    p.add_argument("--min-duration", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", help="mine tokens from stream files")
    p.add_argument("streams", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("split", help="seeded 8:1:1 train/val/test split")
    p.add_argument("tokens")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _strict_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("features", help="attach ESP tensors to a token file")
    p.add_argument("tokens")
    p.add_argument("--out", required=True)
    _strict_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("predict", help="scripted baseline predictions")
    p.add_argument("tokens")
    p.add_argument("--kind", choices=PREDICTOR_KINDS, default="oracle")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--offset", type=float, default=0.5)
    p.add_argument("--out", required=True)
    _strict_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against tokens")
    p.add_argument("tokens")
    p.add_argument("predictions")
    p.add_argument("--t-u", type=float, default=5.0)
    p.add_argument("--cutin-policy", choices=POLICIES, default="top1")
    p.add_argument("--out")
    _strict_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prompt", help="render tokens as structured text")
    p.add_argument("tokens")
    p.add_argument("--id")
    p.add_argument("--query", action="append", choices=QUERIES)
    p.add_argument("--out")
    _strict_flags(p)
    p.set_defaults(func=cmd_prompt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"espkit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"espkit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
