"""Command-line pipeline: demos -> keypoints -> datasets -> toy training -> bench.

All settings come from one INI file whose keys are addressed as
``section.key`` (``data.frame_interval``, ``train.kl_beta``, ``backend.url``).
Flags override config keys. Every output file starts with a header record
carrying the config hash, the seed and the command name.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import bench
from .demo_model import EnvironmentMetadata, discover_episodes, load_demonstration, load_keypoints, save_keypoints, workspace_bounds
from .errors import ConfigInvalid, EmbReasonError, MalformedRecord
from .gen_backend import ENV_KEY, ENV_URL, CachingBackend, HttpBackend, max_in_flight_from_env
from .jsonl import iter_jsonl, read_jsonl, write_jsonl
from .keypoints import KeypointParams, extract_keypoints
from .qa_gen import GenConfig, QAType, SftStyle, build_mcqa_dataset, build_sft_dataset, load_annotations
from .rl import Algorithm, TrainConfig, bandit_policy, export_advantages, greedy_accuracy, make_bandit, mcqa_reward_fn, train
from .rl.trainer import write_metrics_csv

DEFAULTS: dict[str, str] = {
    "run.seed": "0",
    "paths.demo_root": "",
    "paths.out_dir": "out",
    "paths.metadata": "",
    "paths.annotations": "",
    "paths.question_bank": "",
    "paths.rollouts": "",
    "paths.answers": "",
    "paths.verdicts": "",
    "paths.judge_annotations": "",
    "data.frame_interval": "10",
    "data.min_distractor_separation": "0.05",
    "data.bounds_margin": "0.0",
    "data.qa_types": "waypoint,state,movement",
    "data.include_state": "false",
    "data.speed_epsilon": "0.001",
    "data.write_keypoints": "false",
    "train.algorithm": "grpo",
    "train.group_size": "5",
    "train.clip_epsilon": "0.2",
    "train.kl_beta": "0.01",
    "train.sampling_temperature": "1.0",
    "train.batch_size": "16",
    "train.rollout_batch_size": "64",
    "train.epochs": "500",
    "train.learning_rate": "0.1",
    "train.weight_decay": "0.01",
    "train.max_steps": "2000",
    "train.advantage_std_epsilon": "1e-8",
    "train.n_contexts": "64",
    "backend.url": "",
    "backend.judge_url": "",
    "backend.model": "policy",
    "backend.judge_model": "judge",
    "backend.max_in_flight": "",
    "backend.timeout": "120",
    "backend.max_tokens": "1024",
    "backend.judge_temperature": "1.0",
    "backend.cache": "",
    "report.model_name": "model",
}


@dataclass
class PipelineConfig:
    values: dict[str, str]
    base_dir: Path

    @classmethod
    def load(cls, path: str | None, overrides: Mapping[str, str | None] = ()) -> "PipelineConfig":
        values = dict(DEFAULTS)
        base = Path.cwd()
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigInvalid(f"config file not found: {path}")
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
            try:
                parser.read(p, encoding="utf-8")
            except configparser.Error as e:
                raise ConfigInvalid(f"cannot parse {path}: {e}") from None
            for section in parser.sections():
                for key, val in parser.items(section):
                    flat = f"{section}.{key}"
                    if flat not in DEFAULTS:
                        raise ConfigInvalid(f"unknown config key {flat!r}")
                    values[flat] = val.strip()
            base = p.resolve().parent
        for key, val in dict(overrides).items():
            if val is not None:
                values[key] = str(val)
        return cls(values, base)

    @property
    def hash(self) -> str:
        # where outputs land does not change what they contain
        vals = {k: v for k, v in self.values.items() if k != "paths.out_dir"}
        blob = json.dumps(vals, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def get(self, key: str) -> str:
        return self.values[key]

    def int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigInvalid(f"{key} must be an integer, got {self.values[key]!r}") from None

    def float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigInvalid(f"{key} must be a number, got {self.values[key]!r}") from None

    def bool(self, key: str) -> bool:
        v = self.values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off", ""):
            return False
        raise ConfigInvalid(f"{key} must be a boolean, got {self.values[key]!r}")

    def path(self, key: str, must_exist: bool = True) -> Path:
        raw = self.values[key]
        if not raw:
            raise ConfigInvalid(f"{key} is not set")
        p = Path(raw)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigInvalid(f"{key} does not exist: {raw}")
        return p

    def optional_path(self, key: str) -> Path | None:
        return self.path(key) if self.values[key] else None

    @property
    def seed(self) -> int:
        return self.int("run.seed")

    @property
    def out_dir(self) -> Path:
        p = self.path("paths.out_dir", must_exist=False)
        p.mkdir(parents=True, exist_ok=True)
        return p

    def header(self, command: str) -> dict:
        return {"command": command, "config_hash": self.hash, "seed": self.seed}

    def header_comment(self, command: str) -> str:
        return json.dumps(self.header(command), sort_keys=True)

    def gen_config(self) -> GenConfig:
        try:
            return GenConfig(
                frame_interval=self.int("data.frame_interval"),
                min_distractor_separation=self.float("data.min_distractor_separation"),
                seed=self.seed,
            )
        except ValueError as e:
            raise ConfigInvalid(str(e)) from None

    def train_config(self) -> TrainConfig:
        max_steps = self.values["train.max_steps"]
        try:
            return TrainConfig(
                algorithm=Algorithm(self.get("train.algorithm")),
                group_size=self.int("train.group_size"),
                clip_epsilon=self.float("train.clip_epsilon"),
                kl_beta=self.float("train.kl_beta"),
                sampling_temperature=self.float("train.sampling_temperature"),
                batch_size=self.int("train.batch_size"),
                rollout_batch_size=self.int("train.rollout_batch_size"),
                epochs=self.int("train.epochs"),
                learning_rate=self.float("train.learning_rate"),
                weight_decay=self.float("train.weight_decay"),
                seed=self.seed,
                advantage_std_epsilon=self.float("train.advantage_std_epsilon"),
                max_steps=int(max_steps) if max_steps else None,
            )
        except ValueError as e:
            raise ConfigInvalid(str(e)) from None

    def max_in_flight(self) -> int:
        try:
            if self.values["backend.max_in_flight"]:
                n = self.int("backend.max_in_flight")
                if n < 1:
                    raise ConfigInvalid("backend.max_in_flight must be >= 1")
                return n
            return max_in_flight_from_env()
        except ValueError as e:
            raise ConfigInvalid(str(e)) from None

    def backend(self, judge: bool = False):
        url = (self.get("backend.judge_url") if judge else "") or self.get("backend.url") or os.environ.get(ENV_URL, "")
        if not url:
            raise ConfigInvalid(f"no generation backend: set backend.url, --backend-url or {ENV_URL}")
        b = HttpBackend(url, os.environ.get(ENV_KEY) or None, timeout=self.float("backend.timeout"))
        if self.values["backend.cache"]:
            return CachingBackend(b, self.path("backend.cache", must_exist=False))
        return b


# ---------------------------------------------------------------- shared loaders

def _demos(cfg: PipelineConfig, with_keypoints: bool = True):
    root = cfg.path("paths.demo_root")
    episodes = discover_episodes(root)
    if not episodes:
        raise ConfigInvalid(f"no episodes under paths.demo_root: {cfg.get('paths.demo_root')}")
    params = KeypointParams(speed_epsilon=cfg.float("data.speed_epsilon"))
    demos = []
    for task, ep in episodes:
        d = load_demonstration(root, task, ep)
        if with_keypoints:
            k = load_keypoints(root, task, ep)
            d = d.with_keypoints(k if k is not None else extract_keypoints(d, params))
        demos.append(d)
    return demos


def _metadata(cfg: PipelineConfig, demos) -> dict[str, EnvironmentMetadata]:
    """Per-task scene metadata; tasks without an entry use their instruction as description."""
    given = {}
    p = cfg.optional_path("paths.metadata")
    if p is not None:
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise MalformedRecord(f"invalid JSON ({e.msg})", e.lineno, str(p)) from None
        try:
            given = {task: EnvironmentMetadata.from_dict(d) for task, d in raw.items()}
        except (TypeError, ValueError, AttributeError) as e:
            raise MalformedRecord(f"bad metadata: {e}", None, str(p)) from None
    metas = {}
    for d in demos:
        if d.task_id not in metas:
            metas[d.task_id] = given.get(d.task_id) or EnvironmentMetadata(task_description=d.instruction)
    return metas


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------- commands

def cmd_ingest(cfg: PipelineConfig, args) -> int:
    demos = _demos(cfg, with_keypoints=False)
    summary = {
        "episodes": len(demos),
        "frames": sum(len(d) for d in demos),
        "tasks": sorted({d.task_id for d in demos}),
    }
    write_jsonl([summary], cfg.out_dir / "ingest.jsonl", cfg.header("ingest"))
    _print(summary)
    return 0


def cmd_keypoints(cfg: PipelineConfig, args) -> int:
    root = cfg.path("paths.demo_root")
    params = KeypointParams(speed_epsilon=cfg.float("data.speed_epsilon"))
    records = []
    for d in _demos(cfg, with_keypoints=False):
        ks = extract_keypoints(d, params)
        if cfg.bool("data.write_keypoints"):
            save_keypoints(root, d.task_id, d.episode_id, ks)
        records.append({"task_id": d.task_id, "episode_id": d.episode_id, "keypoints": ks})
    write_jsonl(records, cfg.out_dir / "keypoints.jsonl", cfg.header("keypoints"))
    _print({"episodes": len(records), "keypoints": sum(len(r["keypoints"]) for r in records)})
    return 0


def cmd_genqa(cfg: PipelineConfig, args) -> int:
    demos = _demos(cfg)
    try:
        qa_types = [QAType(t.strip()) for t in cfg.get("data.qa_types").split(",") if t.strip()]
    except ValueError as e:
        raise ConfigInvalid(f"data.qa_types: {e}") from None
    bounds = workspace_bounds(demos, cfg.float("data.bounds_margin"))
    items = build_mcqa_dataset(demos, _metadata(cfg, demos), cfg.gen_config(), bounds, qa_types)
    path = write_jsonl((it.to_json() for it in items), cfg.out_dir / "mcqa.jsonl", cfg.header("genqa"))
    _print({"items": len(items), "path": path.name})
    return 0


def cmd_gensft(cfg: PipelineConfig, args) -> int:
    demos = _demos(cfg)
    style = SftStyle(args.style)
    ann_path = cfg.optional_path("paths.annotations")
    if style is SftStyle.COT and ann_path is None:
        raise ConfigInvalid("CoT SFT needs paths.annotations")
    annotations = load_annotations(ann_path) if ann_path is not None else None
    items = build_sft_dataset(
        demos, _metadata(cfg, demos), cfg.gen_config(), style, annotations, cfg.bool("data.include_state")
    )
    path = write_jsonl((it.to_json() for it in items), cfg.out_dir / f"sft_{style.value}.jsonl", cfg.header("gensft"))
    _print({"items": len(items), "path": path.name})
    return 0


def cmd_train_toy(cfg: PipelineConfig, args) -> int:
    tc = cfg.train_config()
    items = make_bandit(cfg.int("train.n_contexts"), cfg.seed)
    policy = bandit_policy(items, cfg.seed)
    init_acc = greedy_accuracy(policy, items)
    result = train(items, policy, mcqa_reward_fn(), tc)
    acc = greedy_accuracy(result.policy, items)
    comment = cfg.header_comment("train-toy")
    write_metrics_csv(result.history, cfg.out_dir / "metrics.csv", comment)
    write_jsonl(
        [{"algorithm": tc.algorithm.value, "shape": list(result.policy.weights.shape),
          "weights": result.policy.weights.tolist()}],
        cfg.out_dir / "policy.jsonl",
        cfg.header("train-toy"),
    )
    _print({"steps": len(result.history), "initial_greedy_accuracy": init_acc, "greedy_accuracy": acc})
    return 0


def cmd_export_advantages(cfg: PipelineConfig, args) -> int:
    tc = cfg.train_config()
    out = export_advantages(
        cfg.path("paths.rollouts"), cfg.out_dir / "advantages.jsonl", tc.algorithm, tc.group_size,
        tc.advantage_std_epsilon, cfg.header("export-advantages"),
    )
    _print({"groups": len(out), "algorithm": tc.algorithm.value})
    return 0


def _bank(cfg: PipelineConfig):
    return bench.load_question_bank(cfg.path("paths.question_bank"))


def _answers_path(cfg: PipelineConfig, must_exist: bool) -> Path:
    if cfg.get("paths.answers"):
        return cfg.path("paths.answers", must_exist)
    p = cfg.out_dir / "answers.jsonl"
    if must_exist and not p.is_file():
        raise ConfigInvalid("paths.answers is not set and no answers.jsonl in the output directory")
    return p


def _verdicts_path(cfg: PipelineConfig, must_exist: bool) -> Path:
    if cfg.get("paths.verdicts"):
        return cfg.path("paths.verdicts", must_exist)
    p = cfg.out_dir / "verdicts.jsonl"
    if must_exist and not p.is_file():
        raise ConfigInvalid("paths.verdicts is not set and no verdicts.jsonl in the output directory")
    return p


def cmd_bench_sample(cfg: PipelineConfig, args) -> int:
    questions = _bank(cfg)
    answers = bench.sample_answers(
        cfg.backend(), questions, model=cfg.get("backend.model"), temperature=0.0,
        max_tokens=cfg.int("backend.max_tokens"), max_in_flight=cfg.max_in_flight(),
    )
    write_jsonl((a.to_json() for a in answers), _answers_path(cfg, False), cfg.header("bench-sample"))
    _print({"questions": len(questions), "unanswered": sum(not a.answered for a in answers)})
    return 0


def cmd_bench_judge(cfg: PipelineConfig, args) -> int:
    questions = _bank(cfg)
    by_id = {}
    for lineno, rec in iter_jsonl(_answers_path(cfg, True)):
        try:
            a = bench.SampledAnswer.from_json(rec)
        except KeyError as e:
            raise MalformedRecord(f"missing key {e.args[0]!r}", lineno, "answers") from None
        by_id[a.question_id] = a
    answers = [by_id.get(q.id) or bench.SampledAnswer(q.id, "", "", "no sampled answer") for q in questions]
    records = bench.judge(
        cfg.backend(judge=True), answers, questions, model=cfg.get("backend.judge_model"),
        temperature=cfg.float("backend.judge_temperature"), seed=cfg.seed, max_in_flight=cfg.max_in_flight(),
    )
    write_jsonl((r.to_json() for r in records), _verdicts_path(cfg, False), cfg.header("bench-judge"))
    _print({"verdicts": len(records), "failures": sum(r.error is not None for r in records)})
    return 0


def _load_verdicts(path: Path) -> list[bench.VerdictRecord]:
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            out.append(bench.VerdictRecord.from_json(rec))
        except (KeyError, ValueError, TypeError, EmbReasonError) as e:
            raise MalformedRecord(f"bad verdict record: {e}", lineno, str(path)) from None
    return out


def cmd_bench_report(cfg: PipelineConfig, args) -> int:
    questions = _bank(cfg)
    report = bench.aggregate(questions, _load_verdicts(_verdicts_path(cfg, True)))
    bench.write_report(report, cfg.out_dir, cfg.get("report.model_name"), cfg.header_comment("bench-report"))
    _print({
        rt.value: {"in": report.mean(rt, "in"), "out": report.mean(rt, "out"), "avg": report.mean(rt)}
        for rt in bench.TYPE_ORDER
    })
    return 0


def cmd_validate_judge(cfg: PipelineConfig, args) -> int:
    """Annotation lines: ``{"id", "type", "human": [ints], "llm": int?}``; a missing
    ``llm`` score is taken from the verdict log."""
    path = cfg.path("paths.judge_annotations")
    rows = read_jsonl(path)
    llm_from_log = None
    if any("llm" not in r for r in rows):
        llm_from_log = {v.question_id: v.score for v in _load_verdicts(_verdicts_path(cfg, True))}
    human, llm, types = [], [], []
    for i, r in enumerate(rows):
        try:
            score = r["llm"] if "llm" in r else llm_from_log[r["id"]]
            human.append([float(v) for v in r["human"]])
            llm.append(float(score))
            types.append(bench.ReasoningType.parse(r["type"]))
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedRecord(f"bad annotation record: {e}", None, str(path)) from None
    v = bench.validate_judge(human, llm, types)
    bench.write_correlations(v, cfg.out_dir / "correlations.csv", cfg.header_comment("validate-judge"))
    _print({rt.value: c for rt, c in v.correlations.items()})
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "keypoints": cmd_keypoints,
    "genqa": cmd_genqa,
    "gensft": cmd_gensft,
    "train-toy": cmd_train_toy,
    "export-advantages": cmd_export_advantages,
    "bench-sample": cmd_bench_sample,
    "bench-judge": cmd_bench_judge,
    "bench-report": cmd_bench_report,
    "validate-judge": cmd_validate_judge,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--out", help="overrides paths.out_dir")
    common.add_argument("--backend-url", help="overrides backend.url")
    common.add_argument("--max-in-flight", type=int, help="overrides backend.max_in_flight")
    common.add_argument("--algorithm", choices=[a.value for a in Algorithm], help="overrides train.algorithm")

    parser = argparse.ArgumentParser(prog="embreason", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "gensft":
            p.add_argument("--style", choices=[s.value for s in SftStyle], default=SftStyle.DIRECT.value)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "run.seed": args.seed,
        "paths.out_dir": args.out,
        "backend.url": args.backend_url,
        "backend.max_in_flight": args.max_in_flight,
        "train.algorithm": args.algorithm,
    }
    try:
        cfg = PipelineConfig.load(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except EmbReasonError as e:
        err = {"error": type(e).__name__, "message": str(e), "exit_code": e.exit_code}
        print(json.dumps(err), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
