"""Command-line front end: one subcommand per pipeline stage plus a chained run.

Flag precedence is CLI flag > config file > built-in default. Every run
writes a manifest next to its outputs recording the effective config digest,
the seed, and the input digests, which is enough to reproduce the artifacts
byte-for-byte with the mock backend.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import analysis, plots
from .advantage import gae_advantages, reinforce_pp_advantages
from .config import EngineConfig, load_config
from .errors import StepRewardError
from .rewards import assemble_trace, check_format, step_rewards
from .scoring import GenerationParams, HttpCompletionBackend, score_subrollouts, verify_answer
from .segmenter import build_subrollouts, segment
from .simulator import EngineHandle, TemplatePolicy, mock_backend, run_training
from .tokens import WhitespaceTokenizer
from .trajectory import (
    advantage_to_record,
    dense_rewards,
    load_trajectories,
    profile_from_record,
    profile_to_record,
    read_jsonl,
    segmentation_from_record,
    segmentation_to_record,
    trace_from_record,
    trace_to_record,
    write_jsonl,
)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    manifest_path: Path,
    command: str,
    cfg: EngineConfig,
    inputs: List[Path],
    outputs: List[str],
) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_flat(),
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def _tokenizer(cfg: EngineConfig) -> WhitespaceTokenizer:
    return WhitespaceTokenizer(atomic=(cfg.think_open, cfg.think_close))


def _load_corpus(path: str, cfg: EngineConfig):
    trajs = load_trajectories(
        path, tokenizer=_tokenizer(cfg), think_open=cfg.think_open, think_close=cfg.think_close
    )
    if not trajs:
        raise StepRewardError(f"{path}: empty trajectory file")
    return trajs


def _backend(cfg: EngineConfig):
    if cfg.scoring.backend == "mock":
        return mock_backend(noise=cfg.scoring.mock_noise, seed=cfg.seed)
    if not cfg.scoring.endpoint:
        raise StepRewardError("scoring.backend is 'http' but scoring.endpoint is empty")
    return HttpCompletionBackend(
        cfg.scoring.endpoint,
        params=GenerationParams(
            temperature=cfg.scoring.temperature,
            top_p=cfg.scoring.top_p,
            max_new_tokens=cfg.scoring.max_new_tokens,
            seed=cfg.seed,
        ),
        stop=(cfg.think_close,),
        retries=cfg.scoring.retries,
        initial_backoff=cfg.scoring.initial_backoff,
        timeout=cfg.scoring.timeout,
    )


# --- stage implementations ---------------------------------------------------

def _run_segment(cfg: EngineConfig, input_path: str, output_path: str) -> None:
    trajs = _load_corpus(input_path, cfg)
    records = [segmentation_to_record(t.id, segment(t, cfg.segmentation)) for t in trajs]
    write_jsonl(output_path, records)
    _write_manifest(
        Path(output_path + ".manifest.json"), "segment", cfg, [Path(input_path)], [Path(output_path).name]
    )


def _run_score(cfg: EngineConfig, input_path: str, segments_path: str, output_path: str) -> None:
    trajs = _load_corpus(input_path, cfg)
    segs = dict(segmentation_from_record(r) for r in read_jsonl(segments_path))
    backend = _backend(cfg)
    records = []
    for traj in trajs:
        if traj.id not in segs:
            raise StepRewardError(f"{segments_path}: no segmentation for trajectory {traj.id!r}")
        subs = build_subrollouts(traj, segs[traj.id])
        prof = score_subrollouts(subs, traj, backend, cfg.scoring.n_candidates)
        records.append(profile_to_record(traj.id, prof))
    write_jsonl(output_path, records)
    _write_manifest(
        Path(output_path + ".manifest.json"), "score", cfg,
        [Path(input_path), Path(segments_path)], [Path(output_path).name],
    )


def _run_reward(
    cfg: EngineConfig, input_path: str, segments_path: str, acc_path: str, output_path: str
) -> None:
    trajs = _load_corpus(input_path, cfg)
    segs = dict(segmentation_from_record(r) for r in read_jsonl(segments_path))
    profs = dict(profile_from_record(r) for r in read_jsonl(acc_path))
    records = []
    for traj in trajs:
        if traj.id not in segs:
            raise StepRewardError(f"{segments_path}: no segmentation for trajectory {traj.id!r}")
        if traj.id not in profs:
            raise StepRewardError(f"{acc_path}: no accuracy profile for trajectory {traj.id!r}")
        seg_res, prof = segs[traj.id], profs[traj.id]
        if len(prof.sub_acc) != len(seg_res.points):
            raise StepRewardError(
                f"trajectory {traj.id!r}: profile has {len(prof.sub_acc)} entries "
                f"for {len(seg_res.points)} points"
            )
        rewards = step_rewards(prof, cfg.reward)
        trace = assemble_trace(
            traj, seg_res, rewards,
            outcome_correct=verify_answer(traj.response, traj.ground_truth),
            format_ok=check_format(traj),
            params=cfg.reward,
        )
        records.append(trace_to_record(traj.id, trace))
    write_jsonl(output_path, records)
    _write_manifest(
        Path(output_path + ".manifest.json"), "reward", cfg,
        [Path(input_path), Path(segments_path), Path(acc_path)], [Path(output_path).name],
    )


def _run_advantage(cfg: EngineConfig, rewards_path: str, output_path: str) -> None:
    traces = [trace_from_record(r) for r in read_jsonl(rewards_path)]
    if not traces:
        raise StepRewardError(f"{rewards_path}: empty reward file")
    dense = [dense_rewards(t) for _, t in traces]
    if cfg.estimator == "rpp":
        advs = reinforce_pp_advantages(dense, cfg.advantage)
    else:
        advs = [gae_advantages(d, None, cfg.advantage) for d in dense]
    records = [advantage_to_record(tid, adv) for (tid, _), adv in zip(traces, advs)]
    write_jsonl(output_path, records)
    _write_manifest(
        Path(output_path + ".manifest.json"), "advantage", cfg,
        [Path(rewards_path)], [Path(output_path).name],
    )


def _run_analyze(
    cfg: EngineConfig, input_path: str, acc_path: str, report_path: str, plots_dir: Optional[str]
) -> None:
    trajs = _load_corpus(input_path, cfg)
    profs = dict(profile_from_record(r) for r in read_jsonl(acc_path))
    if not profs:
        raise StepRewardError(f"{acc_path}: empty accuracy file")
    report = analysis.build_report(trajs, profs, epsilon=cfg.reward.epsilon, tau=cfg.tau)
    outputs = [Path(report_path).name]
    Path(report_path).write_text(
        json.dumps(report, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    if plots_dir is not None:
        pdir = Path(plots_dir)
        pdir.mkdir(parents=True, exist_ok=True)
        pk = report["pass_at_k"]
        plots.save_pass_at_k_plot(pk["k"], pk["mean_estimates"], pdir / "pass_at_k.svg")
        plots.save_length_plot(
            [len(t.tokenization) for t in trajs], pdir / "lengths.svg"
        )
        outputs += [str(Path(plots_dir) / "pass_at_k.svg"), str(Path(plots_dir) / "lengths.svg")]
    _write_manifest(
        Path(report_path + ".manifest.json"), "analyze", cfg,
        [Path(input_path), Path(acc_path)], outputs,
    )


def _run_simulate(
    cfg: EngineConfig, episodes: int, log_path: str, summary_path: str
) -> None:
    handle = EngineHandle(
        reward=cfg.reward,
        advantage=cfg.advantage,
        n_candidates=cfg.scoring.n_candidates,
        noise=cfg.simulator.noise,
    )
    policy = TemplatePolicy(
        learning_rate=cfg.simulator.learning_rate,
        max_episode_len=cfg.simulator.max_episode_len,
    )
    estimator = "reinforce_pp" if cfg.estimator == "rpp" else "gae"
    _, log, summary = run_training(
        seed=cfg.seed,
        episodes=episodes,
        estimator=estimator,
        engine=handle,
        policy=policy,
        eval_episodes=cfg.simulator.eval_episodes,
        batch_size=cfg.simulator.batch_size,
        logit_bound=cfg.simulator.logit_bound,
    )
    write_jsonl(log_path, log)
    Path(summary_path).write_text(
        json.dumps(summary, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    _write_manifest(
        Path(summary_path + ".manifest.json"), "simulate", cfg, [],
        [Path(log_path).name, Path(summary_path).name],
    )


def _run_pipeline(cfg: EngineConfig, input_path: str, outdir: str) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    trajs = _load_corpus(input_path, cfg)
    backend = _backend(cfg)

    seg_records, acc_records, reward_records = [], [], []
    segs, profs = {}, {}
    for traj in trajs:
        seg_res = segment(traj, cfg.segmentation)
        segs[traj.id] = seg_res
        seg_records.append(segmentation_to_record(traj.id, seg_res))
        subs = build_subrollouts(traj, seg_res)
        prof = score_subrollouts(subs, traj, backend, cfg.scoring.n_candidates)
        profs[traj.id] = prof
        acc_records.append(profile_to_record(traj.id, prof))
        rewards = step_rewards(prof, cfg.reward)
        trace = assemble_trace(
            traj, seg_res, rewards,
            outcome_correct=verify_answer(traj.response, traj.ground_truth),
            format_ok=check_format(traj),
            params=cfg.reward,
        )
        reward_records.append(trace_to_record(traj.id, trace))

    write_jsonl(out / "seg.jsonl", seg_records)
    write_jsonl(out / "acc.jsonl", acc_records)
    write_jsonl(out / "rewards.jsonl", reward_records)

    dense = [dense_rewards(trace_from_record(r)[1]) for r in reward_records]
    if cfg.estimator == "rpp":
        advs = reinforce_pp_advantages(dense, cfg.advantage)
    else:
        advs = [gae_advantages(d, None, cfg.advantage) for d in dense]
    write_jsonl(
        out / "adv.jsonl",
        [advantage_to_record(t.id, adv) for t, adv in zip(trajs, advs)],
    )

    report = analysis.build_report(trajs, profs, epsilon=cfg.reward.epsilon, tau=cfg.tau)
    (out / "report.json").write_text(
        json.dumps(report, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    plots_dir = out / "plots"
    plots_dir.mkdir(exist_ok=True)
    plots.save_pass_at_k_plot(report["pass_at_k"]["k"], report["pass_at_k"]["mean_estimates"],
                              plots_dir / "pass_at_k.svg")
    plots.save_length_plot([len(t.tokenization) for t in trajs], plots_dir / "lengths.svg")

    _write_manifest(
        out / "manifest.json", "pipeline", cfg, [Path(input_path)],
        ["seg.jsonl", "acc.jsonl", "rewards.jsonl", "adv.jsonl", "report.json",
         "plots/pass_at_k.svg", "plots/lengths.svg"],
    )


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepreward",
        description="Stepwise reward engine: segment reasoning, score prefixes, "
                    "assign rewards and advantages, analyze, simulate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="global RNG seed")

    p = sub.add_parser("segment", help="detect split points in thinking regions")
    common(p)
    p.add_argument("--input", required=True, help="trajectory JSONL")
    p.add_argument("--output", required=True, help="segmentation JSONL to write")
    p.add_argument("--c-min", type=int, dest="c_min")
    p.add_argument("--i-min", type=int, dest="i_min")
    p.add_argument("--special-tokens", dest="special_tokens",
                   help="comma-separated override of the transition-word list")

    p = sub.add_parser("score", help="score sub-rollouts into accuracy profiles")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--backend", choices=["mock", "http"])
    p.add_argument("--endpoint")
    p.add_argument("--n", type=int, dest="n_candidates")

    p = sub.add_parser("reward", help="stepwise rewards from accuracy profiles")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--acc", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lmax", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--outcome-weight", type=float, dest="outcome_weight")
    p.add_argument("--format-weight", type=float, dest="format_weight")

    p = sub.add_parser("advantage", help="advantage traces from reward traces")
    common(p)
    p.add_argument("--rewards", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--estimator", choices=["gae", "rpp"])
    p.add_argument("--discount", type=float)
    p.add_argument("--gae-lambda", type=float, dest="gae_lambda")
    p.add_argument("--normalize", action="store_true", default=None)
    p.add_argument("--no-normalize", action="store_false", dest="normalize", default=None)

    p = sub.add_parser("analyze", help="corpus report: pass@k, lengths, overthink")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--acc", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--plots", help="directory for SVG charts")
    p.add_argument("--tau", type=float)

    p = sub.add_parser("simulate", help="train the toy policy against the engine")
    common(p)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--log", required=True, help="per-episode JSONL log")
    p.add_argument("--summary", required=True, help="before/after JSON summary")
    p.add_argument("--estimator", choices=["gae", "rpp"])
    p.add_argument("--noise", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")

    p = sub.add_parser("pipeline", help="segment, score, reward, advantage, analyze")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--backend", choices=["mock", "http"])
    p.add_argument("--endpoint")
    p.add_argument("--n", type=int, dest="n_candidates")
    p.add_argument("--estimator", choices=["gae", "rpp"])

    return parser


# argparse dest -> flat config key, applied only when the flag was given
_OVERRIDE_KEYS = {
    "seed": "seed",
    "c_min": "segmentation.c_min",
    "i_min": "segmentation.i_min",
    "special_tokens": "segmentation.special_tokens",
    "backend": "scoring.backend",
    "endpoint": "scoring.endpoint",
    "n_candidates": "scoring.n_candidates",
    "gamma": "reward.gamma",
    "lmax": "reward.l_max",
    "epsilon": "reward.epsilon",
    "outcome_weight": "reward.outcome_weight",
    "format_weight": "reward.format_weight",
    "estimator": "advantage.estimator",
    "discount": "advantage.discount",
    "gae_lambda": "advantage.gae_lambda",
    "normalize": "advantage.normalize",
    "tau": "analysis.tau",
    "noise": "simulator.noise",
    "batch_size": "simulator.batch_size",
    "learning_rate": "simulator.learning_rate",
}


def _effective_config(args: argparse.Namespace) -> EngineConfig:
    overrides: Dict[str, object] = {}
    for dest, key in _OVERRIDE_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            overrides[key] = val
    return load_config(getattr(args, "config", None), overrides)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = _effective_config(args)
        if args.command == "segment":
            _run_segment(cfg, args.input, args.output)
        elif args.command == "score":
            _run_score(cfg, args.input, args.segments, args.output)
        elif args.command == "reward":
            _run_reward(cfg, args.input, args.segments, args.acc, args.output)
        elif args.command == "advantage":
            _run_advantage(cfg, args.rewards, args.output)
        elif args.command == "analyze":
            _run_analyze(cfg, args.input, args.acc, args.report, args.plots)
        elif args.command == "simulate":
            _run_simulate(cfg, args.episodes, args.log, args.summary)
        elif args.command == "pipeline":
            _run_pipeline(cfg, args.input, args.outdir)
        else:  # pragma: no cover
            parser.error(f"unknown command {args.command!r}")
    except (StepRewardError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
