import csv
import json
import shutil
import subprocess
from pathlib import Path

import pytest

from builders import BANK, SCORES, fixture_30, serve, write_bank, write_episode
from embreason.cli import DEFAULTS, PipelineConfig, main
from embreason.errors import ConfigInvalid
from embreason.jsonl import read_header, read_jsonl


def demo_root(tmp_path, keypoints=(12, 29)):
    root = tmp_path / "demos"
    ep = write_episode(root, "task", "ep0", fixture_30())
    if keypoints is not None:
        (ep / "keypoints.json").write_text(json.dumps(list(keypoints)))
    return root


def write_config(path, sections):
    lines = []
    for name, kv in sections.items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in kv.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_config_loading(tmp_path):
    cfg_path = write_config(tmp_path / "c.ini", {"train": {"group_size": "8"}, "paths": {"out_dir": "o"}})
    cfg = PipelineConfig.load(str(cfg_path), {"run.seed": "4", "train.algorithm": None})
    assert cfg.int("train.group_size") == 8 and cfg.seed == 4
    assert cfg.get("train.algorithm") == DEFAULTS["train.algorithm"]
    assert cfg.out_dir == tmp_path / "o"
    assert cfg.hash != PipelineConfig.load(str(cfg_path)).hash
    assert cfg.hash == PipelineConfig.load(str(cfg_path), {"run.seed": "4", "paths.out_dir": "elsewhere"}).hash
    assert cfg.header("x") == {"command": "x", "config_hash": cfg.hash, "seed": 4}
    with pytest.raises(ConfigInvalid, match="unknown"):
        PipelineConfig.load(str(write_config(tmp_path / "bad.ini", {"train": {"gruop_size": "8"}})))
    with pytest.raises(ConfigInvalid):
        PipelineConfig.load(str(tmp_path / "absent.ini"))
    with pytest.raises(ConfigInvalid):
        PipelineConfig.load(None, {"train.clip_epsilon": "-1"}).train_config()


def test_genqa_fixture(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", {"paths": {"demo_root": demo_root(tmp_path), "out_dir": "out"}})
    code, out, _ = run(capsys, "genqa", "--config", cfg, "--seed", 3)
    assert code == 0 and json.loads(out)["items"] == 9
    path = tmp_path / "out" / "mcqa.jsonl"
    lines = path.read_text().splitlines()
    assert len(lines) == 10  # header record + 9 items
    header = read_header(path)
    assert header["seed"] == 3 and header["command"] == "genqa" and len(header["config_hash"]) == 16
    assert len(read_jsonl(path)) == 9

    first = path.read_bytes()
    assert run(capsys, "genqa", "--config", cfg, "--seed", 3)[0] == 0
    assert path.read_bytes() == first
    assert run(capsys, "genqa", "--config", cfg, "--seed", 4)[0] == 0
    assert path.read_bytes() != first


def test_ingest_keypoints_and_write_back(tmp_path, capsys):
    root = demo_root(tmp_path, keypoints=None)
    cfg = write_config(tmp_path / "c.ini", {
        "paths": {"demo_root": root, "out_dir": "out"},
        "data": {"write_keypoints": "true"},
    })
    code, out, _ = run(capsys, "ingest", "--config", cfg)
    assert code == 0 and json.loads(out) == {"episodes": 1, "frames": 30, "tasks": ["task"]}
    code, out, _ = run(capsys, "keypoints", "--config", cfg)
    assert code == 0
    rec = read_jsonl(tmp_path / "out" / "keypoints.jsonl")[0]
    assert rec["keypoints"][-1] == 29
    assert json.loads((root / "task" / "ep0" / "keypoints.json").read_text()) == rec["keypoints"]


def test_gensft(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", {"paths": {"demo_root": demo_root(tmp_path)}})
    code, out, _ = run(capsys, "gensft", "--config", cfg, "--style", "direct", "--out", tmp_path / "o")
    assert code == 0
    items = read_jsonl(tmp_path / "o" / "sft_direct.jsonl")
    assert len(items) == json.loads(out)["items"] > 0
    code, _, err = run(capsys, "gensft", "--config", cfg, "--style", "cot")
    assert code == 2 and json.loads(err)["error"] == "ConfigInvalid"


def test_missing_demo_root(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", {"paths": {"demo_root": "nowhere"}})
    code, out, err = run(capsys, "genqa", "--config", cfg)
    assert code == 2 and out == ""
    e = json.loads(err)
    assert e["error"] == "ConfigInvalid" and e["exit_code"] == 2 and "demo_root" in e["message"]


def test_data_error_exit_code(tmp_path, capsys):
    root = demo_root(tmp_path)
    (root / "task" / "ep0" / "keypoints.json").write_text("{oops")
    cfg = write_config(tmp_path / "c.ini", {"paths": {"demo_root": root}})
    code, _, err = run(capsys, "genqa", "--config", cfg, "--out", tmp_path / "o")
    assert code == 3 and json.loads(err)["error"] == "MalformedRecord"


def test_train_toy(tmp_path, capsys):
    code, out, _ = run(capsys, "train-toy", "--out", tmp_path / "a", "--seed", 0)
    assert code == 0
    summary = json.loads(out)
    assert summary["greedy_accuracy"] >= 0.95 and summary["steps"] <= 2000
    metrics = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
    assert json.loads(metrics[0][2:])["command"] == "train-toy"
    assert metrics[1] == "step,mean_reward,mean_kl,clip_fraction,objective,mean_response_chars"
    policy = read_jsonl(tmp_path / "a" / "policy.jsonl")[0]
    assert policy["shape"] == [64, 4] and policy["algorithm"] == "grpo"


def test_train_toy_reproducible(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", {"train": {"max_steps": "40"}})
    for d in ("a", "b"):
        assert run(capsys, "train-toy", "--config", cfg, "--out", tmp_path / d, "--algorithm", "rloo")[0] == 0
    for name in ("metrics.csv", "policy.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_export_advantages(tmp_path, capsys):
    rollouts = tmp_path / "r.jsonl"
    recs = [{"query_id": q, "rewards": r, "logprob_old": [0.0, 0.0], "logprob_ref": [0.0, 0.0],
             "logprob_cur": [0.0, 0.0], "advantage": None} for q, r in (("a", [1, 1]), ("b", [0, 0]))]
    rollouts.write_text("".join(json.dumps(r) + "\n" for r in recs))
    cfg = write_config(tmp_path / "c.ini", {"paths": {"rollouts": "r.jsonl"}, "train": {"group_size": "2"}})
    outs = {}
    for alg in ("grpo", "reinforcepp"):
        code, _, _ = run(capsys, "export-advantages", "--config", cfg, "--algorithm", alg, "--out", tmp_path / alg)
        assert code == 0
        outs[alg] = [r["advantage"] for r in read_jsonl(tmp_path / alg / "advantages.jsonl")]
    assert outs["grpo"] == [[0.0, 0.0], [0.0, 0.0]]
    assert sum(outs["reinforcepp"], []) == pytest.approx([1, 1, -1, -1], abs=1e-6)


def test_bench_pipeline_over_http(tmp_path, capsys):
    bank = write_bank(tmp_path / "bank.jsonl")
    cfg = write_config(tmp_path / "c.ini", {"paths": {"question_bank": "bank.jsonl"},
                                            "report": {"model_name": "toy"}})
    results = []
    with serve() as (url, seen):
        for d in ("a", "b"):
            out_dir = tmp_path / d
            for cmd in ("bench-sample", "bench-judge", "bench-report"):
                code, out, err = run(capsys, cmd, "--config", cfg, "--out", out_dir, "--backend-url", url,
                                     "--max-in-flight", 3)
                assert code == 0, err
            results.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    assert results[0] == results[1]
    verdicts = read_jsonl(tmp_path / "a" / "verdicts.jsonl")
    assert {v["id"]: v["score"] for v in verdicts} == SCORES
    with open(tmp_path / "a" / "report_split.csv", newline="") as fh:
        rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
    assert rows[1] == ["toy", "1.00", "1.00", "1.00", "3.00", "", "3.00"]
    policy_reqs = [b for b in seen if b["model"] == "policy"]
    assert len(policy_reqs) == 2 * len(BANK) and all(b["temperature"] == 0 for b in policy_reqs)
    judge_reqs = [b for b in seen if b["model"] == "judge"]
    assert all(b["temperature"] == 1.0 and b["seed"] is not None for b in judge_reqs)


def test_bench_without_backend(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("R1_BACKEND_URL", raising=False)
    write_bank(tmp_path / "bank.jsonl")
    cfg = write_config(tmp_path / "c.ini", {"paths": {"question_bank": "bank.jsonl"}})
    code, _, err = run(capsys, "bench-sample", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "backend" in json.loads(err)["message"]


def test_validate_judge(tmp_path, capsys):
    rows = [{"id": f"q{i}", "type": t, "human": [h] * 8, "llm": l}
            for i, (t, h, l) in enumerate([("movement", 0, 0), ("movement", 1, 1), ("movement", 3, 2),
                                           ("spatial", 1, 2), ("spatial", 2, 3)])]
    (tmp_path / "ann.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    cfg = write_config(tmp_path / "c.ini", {"paths": {"judge_annotations": "ann.jsonl"}})
    code, out, _ = run(capsys, "validate-judge", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    corr = json.loads(out)
    assert corr["spatial"] == pytest.approx(1.0)
    lines = (tmp_path / "o" / "correlations.csv").read_text().splitlines()
    assert lines[1] == ",planning,high_level_action,movement,spatial"
    assert lines[2].startswith("pearson_correlation,,,0.9")


def test_console_script(tmp_path):
    exe = shutil.which("embreason")
    if exe is None:
        pytest.skip("console script not installed")
    cfg = write_config(tmp_path / "c.ini", {"paths": {"demo_root": "nowhere"}})
    proc = subprocess.run([exe, "ingest", "--config", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"] == "ConfigInvalid"


def test_readme_config_block_loads(tmp_path):
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    block = readme.split("```ini\n", 1)[1].split("```", 1)[0]
    cfg = PipelineConfig.load(str(write_text(tmp_path / "readme.ini", block)))
    assert set(cfg.values) == set(DEFAULTS)
    assert {k: v for k, v in cfg.values.items() if k != "paths.demo_root"} == {
        k: v for k, v in DEFAULTS.items() if k != "paths.demo_root"}
    assert cfg.get("paths.demo_root") == "demos"


def write_text(path, text):
    path.write_text(text)
    return path
