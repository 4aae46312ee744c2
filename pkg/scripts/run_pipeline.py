"""Synthetic end-to-end run: generate streams, mine tokens, extract features, score scripted predictors.

    python scripts/run_pipeline.py --n 50 --seed 0 --out-dir runs/demo
"""

import argparse
import json
import time
from pathlib import Path

from espkit.cli import main as cli
from espkit.synth import PREDICTOR_KINDS


def run(n: int, seed: int, out: Path, dt: float, offset: float) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if cli(["synth", "--n", str(n), "--seed", str(seed), "--out-dir", str(out / "streams")]):
        raise SystemExit("synth failed")
    streams = sorted(str(p) for p in (out / "streams").glob("*.stream.jsonl"))
    if cli(["mine", *streams, "--out", str(out / "tokens.jsonl")]):
        raise SystemExit("mine failed")
    if cli(["features", str(out / "tokens.jsonl"), "--out", str(out / "features.jsonl")]):
        raise SystemExit("features failed")
    summary = {}
    for kind in PREDICTOR_KINDS:
        pred = out / f"pred_{kind}.jsonl"
        args = ["predict", str(out / "features.jsonl"), "--kind", kind, "--dt", str(dt), "--offset", str(offset)]
        if cli([*args, "--out", str(pred)]):
            raise SystemExit(f"predict {kind} failed")
        rep = out / f"report_{kind}.json"
        if cli(["eval", str(out / "features.jsonl"), str(pred), "--out", str(rep)]):
            raise SystemExit(f"eval {kind} failed")
        summary[kind] = json.loads(rep.read_text())["aggregate"]
    summary["elapsed_s"] = round(time.perf_counter() - t0, 2)
    return summary


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--dt", type=float, default=1.0, help="delay of the 'delayed' predictor (s)")
    ap.add_argument("--offset", type=float, default=1.0, help="lateral shift of the 'offset' predictor (m)")
    ap.add_argument("--out-dir", type=Path, default=Path("runs/pipeline"))
    a = ap.parse_args()
    s = run(a.n, a.seed, a.out_dir, a.dt, a.offset)
    print(f"{'predictor':10s} {'minADE':>8s} {'minFDE':>8s} {'minCTE':>8s} {'acc':>6s}")
    for kind in PREDICTOR_KINDS:
        r = s[kind]
        print(f"{kind:10s} {r['mean_min_ade']:8.3f} {r['mean_min_fde']:8.3f} {r['mean_min_cte']:8.3f} {r['accuracy']:6.3f}")
    print(f"elapsed {s['elapsed_s']} s")
    (a.out_dir / "summary.json").write_text(json.dumps(s, indent=2) + "\n")
