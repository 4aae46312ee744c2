import json
import subprocess
import sys

import pytest

from espkit import formats as F
from espkit.cli import main
from espkit.esp_features import extract_esp_tensor
from espkit.metrics import EvalConfig, evaluate
from espkit.miner import mine_tokens
from espkit.synth import scripted_predictor


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "6", "--seed", "11", "--out-dir", str(d / "streams")]) == 0
    streams = sorted(str(p) for p in (d / "streams").glob("*.stream.jsonl"))
    assert main(["mine", *streams, "--out", str(d / "tokens.jsonl")]) == 0
    assert main(["features", str(d / "tokens.jsonl"), "--out", str(d / "feat.jsonl")]) == 0
    return d


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["eval", "--bogus"]) == 2
    assert main([]) == 2
    assert main(["eval", str(tmp_path / "missing.jsonl"), str(tmp_path / "p.jsonl")]) == 2
    assert main(["mine", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 2
    assert main(["eval", "a", "b", "--cutin-policy", "best"]) == 2
    assert "usage error" in capsys.readouterr().err


def test_bad_content_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "bad.jsonl"
    p.write_text("{not json\n")
    assert main(["features", str(p), "--out", str(tmp_path / "o.jsonl")]) == 1
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_oracle_eval_zero_errors(workdir, capsys):
    pred = workdir / "oracle.jsonl"
    assert main(["predict", str(workdir / "feat.jsonl"), "--kind", "oracle", "--out", str(pred)]) == 0
    rep = workdir / "r.json"
    assert main(["eval", str(workdir / "feat.jsonl"), str(pred), "--out", str(rep)]) == 0
    agg = json.loads(rep.read_text())["aggregate"]
    assert agg["mean_min_ade"] == agg["mean_min_fde"] == agg["mean_min_cte"] == 0.0
    assert agg["accuracy"] == 1.0
    assert "minCTE" in capsys.readouterr().out


def test_split_deterministic(workdir):
    for out in ("s1", "s2"):
        assert main(["split", str(workdir / "feat.jsonl"), "--seed", "4", "--out-dir", str(workdir / out)]) == 0
    for name in ("train", "val", "test"):
        assert (workdir / "s1" / f"{name}.jsonl").read_bytes() == (workdir / "s2" / f"{name}.jsonl").read_bytes()


def test_cli_matches_in_process(workdir):
    streams = sorted((workdir / "streams").glob("*.stream.jsonl"))
    tokens = sorted((t for s in streams for t in mine_tokens(F.parse_stream(s))), key=lambda t: t.id)
    assert F.parse_tokens(workdir / "tokens.jsonl") == tokens
    assert [r.esp for r in F.read_tokens(workdir / "feat.jsonl")] == [extract_esp_tensor(t) for t in tokens]

    pred = workdir / "delayed.jsonl"
    assert main(["predict", str(workdir / "feat.jsonl"), "--kind", "delayed", "--k", "2", "--out", str(pred)]) == 0
    rep = workdir / "d.json"
    args = ["--t-u", "3", "--cutin-policy", "any", "--out", str(rep)]
    assert main(["eval", str(workdir / "feat.jsonl"), str(pred), *args]) == 0
    preds = [F.canonical_prediction(scripted_predictor(t, "delayed", k=2)) for t in tokens]
    in_proc = F.report_to_dict(evaluate(tokens, preds, EvalConfig(t_u=3.0, policy="any")))
    assert json.loads(rep.read_text()) == in_proc


def test_prompt_command(workdir, capsys):
    assert main(["prompt", str(workdir / "feat.jsonl")]) == 0
    out = capsys.readouterr().out
    assert out.count("## Extrospective Features") == 6
    tid = F.parse_tokens(workdir / "feat.jsonl")[0].id
    assert main(["prompt", str(workdir / "feat.jsonl"), "--id", tid, "--query", "tv_speed_trend"]) == 0
    assert capsys.readouterr().out.startswith("tv_speed_trend: ")
    assert main(["prompt", str(workdir / "feat.jsonl"), "--id", "nope"]) == 1


def test_lax_flag(workdir, tmp_path):
    rec = json.loads((workdir / "tokens.jsonl").read_text().splitlines()[0])
    rec["note"] = "kept"
    p = tmp_path / "x.jsonl"
    p.write_text(json.dumps(rec) + "\n")
    assert main(["features", str(p), "--out", str(tmp_path / "y.jsonl")]) == 1
    assert main(["features", str(p), "--lax", "--out", str(tmp_path / "y.jsonl")]) == 0
    assert json.loads((tmp_path / "y.jsonl").read_text())["note"] == "kept"


def test_module_entry_point(workdir):
    r = subprocess.run(
        [sys.executable, "-m", "espkit.cli", "prompt", str(workdir / "feat.jsonl"), "--query", "distance_to_junction"],
        capture_output=True,
        text=True,
    )
    assert r.returncode == 0 and "distance_to_junction: " in r.stdout
