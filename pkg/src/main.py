import argparse
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from config import CDAPConfig, config_keys, load_config, load_env_vars, replace_section
from corpus import Episode, LabeledSentence, dump_episodes, load_episodes, read_conll, sample_episode
from errors import ConfigError, EpisodeValidationError, NumericalError, ValidationError
from evaluation import build_report, score_episode, summarize_runs, write_report
from inference import decode_episode, decode_episodes, format_trace, write_decoded
from networks import CDAPModel
from trainer import train, write_loss_trace
from utils import get_logger, setup_logging


EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def _epilog() -> str:
    lines = ["config keys (override with --set key=value):"]
    lines += [f"  {key} = {value!r}" for key, value in config_keys().items()]
    return "\n".join(lines)


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Few-shot sequence labeling with dual adaptive prototypical networks",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", type=Path, help="YAML config file (default: $CDAP_CONFIG or config.yaml)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key, e.g. --set loss.temperature=2; repeatable",
    )
    parser.add_argument("--seed", type=int, help="Override the top-level seed")
    parser.add_argument("--log-mode", choices=["normal", "verbose", "quiet"], default="normal")
    parser.add_argument("--log-dir", type=Path, help="Log directory (default: $CDAP_LOG_DIR or logs)")

    commands = parser.add_subparsers(dest="command", required=True)

    sample = commands.add_parser("sample-episodes", help="Sample N-way K-shot episodes from a CoNLL corpus")
    sample.add_argument("--corpus", type=Path, required=True, help="token<TAB>label file with IO labels")
    sample.add_argument("--ways", type=int, help="N (default: sampling.ways)")
    sample.add_argument("--shots", type=int, help="K (default: sampling.shots)")
    sample.add_argument("--mode", choices=["exact-k", "k-to-2k"], help="default: sampling.mode")
    sample.add_argument("--count", type=int, default=1, help="Number of episodes")
    sample.add_argument("--out", type=Path, required=True, help="Episode JSONL output")

    train_cmd = commands.add_parser("train", help="Train both networks on an episode file")
    train_cmd.add_argument("--episodes", type=Path, required=True)
    train_cmd.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint output path")
    train_cmd.add_argument("--trace", type=Path, help="Loss CSV (default: next to the checkpoint)")

    eval_cmd = commands.add_parser("eval", help="Decode episodes and report micro-F1")
    eval_cmd.add_argument("--episodes", type=Path, required=True)
    eval_cmd.add_argument(
        "--checkpoint",
        type=Path,
        action="append",
        required=True,
        help="Checkpoint to evaluate; repeat to report mean and stdev across runs",
    )
    eval_cmd.add_argument("--delta", type=float, help="Penalty per inconsistent token (default: inference.delta)")
    eval_cmd.add_argument("--max-span-len", type=int, help="Span length cap L (default: inference.max_span_len)")
    eval_cmd.add_argument(
        "--strategy",
        choices=["consistent-greedy", "span-only", "token-only", "intersection", "union"],
        help="default: inference.strategy",
    )
    eval_cmd.add_argument("--workers", type=int, help="Decoding threads (default: inference.workers)")
    eval_cmd.add_argument("--report", type=Path, required=True, help="Metrics JSON output")
    eval_cmd.add_argument("--decoded", type=Path, help="Decoded JSONL output")

    decode = commands.add_parser("decode", help="Trace the decoding of one sentence")
    decode.add_argument("--support", type=Path, required=True, help="Episode JSONL; the first line's support is used")
    decode.add_argument("--sentence", required=True, help="Whitespace-tokenised sentence")
    decode.add_argument("--checkpoint", type=Path, required=True)
    decode.add_argument("--delta", type=float)
    decode.add_argument("--max-span-len", type=int)

    return parser.parse_args(argv)


def _inference_overrides(args: argparse.Namespace) -> dict[str, object]:
    names = {"delta": "delta", "max_span_len": "max_span_len", "strategy": "strategy", "workers": "workers"}
    return {key: getattr(args, attr) for attr, key in names.items() if getattr(args, attr, None) is not None}


def run_sample(args: argparse.Namespace, config: CDAPConfig) -> None:
    settings = config.sampling
    corpus = read_conll(args.corpus)
    episodes = [
        sample_episode(
            corpus,
            settings.ways if args.ways is None else args.ways,
            settings.shots if args.shots is None else args.shots,
            settings.mode if args.mode is None else args.mode,
            [config.seed, index],
            query_per_class=settings.query_per_class,
            max_attempts=settings.max_attempts,
            episode_id=str(index),
        )
        for index in range(args.count)
    ]
    dump_episodes(args.out, episodes)


def run_train(args: argparse.Namespace, config: CDAPConfig) -> None:
    episodes = list(load_episodes(args.episodes))
    result = train(episodes, config)
    result.model.save(args.checkpoint, steps=config.training.max_steps)
    trace = args.trace or args.checkpoint.with_name(f"{args.checkpoint.stem}_loss.csv")
    write_loss_trace(trace, result.trace)


def run_eval(args: argparse.Namespace, config: CDAPConfig) -> None:
    logger = get_logger(__name__)
    config = replace_section(config, "inference", **_inference_overrides(args))
    episodes = list(load_episodes(args.episodes))
    reports = []
    for index, checkpoint in enumerate(args.checkpoint):
        model = CDAPModel.from_checkpoint(checkpoint, config)
        decodings = decode_episodes(model, episodes, config.inference)
        metrics = [
            score_episode(episode.query, decoding.predictions())
            for episode, decoding in zip(episodes, decodings, strict=True)
        ]
        report = build_report(metrics, checkpoint=str(checkpoint), strategy=config.inference.strategy)
        logger.info(
            "%s: pooled micro-F1 %.4f, episode-averaged F1 %.4f",
            checkpoint,
            report["micro_f1_pooled"],
            report["episode_avg_f1"],
        )
        reports.append(report)
        if args.decoded is not None:
            target = args.decoded
            if len(args.checkpoint) > 1:
                target = target.with_name(f"{target.stem}_{index}{target.suffix}")
            write_decoded(target, decodings)
    write_report(args.report, reports[0] if len(reports) == 1 else summarize_runs(reports))


def run_decode(args: argparse.Namespace, config: CDAPConfig) -> None:
    config = replace_section(config, "inference", **_inference_overrides(args))
    first = next(iter(load_episodes(args.support)), None)
    if first is None:
        msg = f"{args.support} holds no episode"
        raise EpisodeValidationError(msg)
    tokens = tuple(args.sentence.split())
    if not tokens:
        msg = "--sentence is empty"
        raise EpisodeValidationError(msg)
    episode = Episode(first.label_space, first.support, (LabeledSentence(tokens),), episode_id="decode")
    model = CDAPModel.from_checkpoint(args.checkpoint, config)
    decoding = decode_episode(model, episode, config.inference)
    print(format_trace(tokens, decoding.sentences[0], episode.label_space))  # noqa: T201


COMMANDS = {
    "sample-episodes": run_sample,
    "train": run_train,
    "eval": run_eval,
    "decode": run_decode,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    load_env_vars()
    log_dir = args.log_dir or Path(os.getenv("CDAP_LOG_DIR", "logs"))
    logger = setup_logging(mode=args.log_mode, log_dir=log_dir)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        config = load_config(args.config, overrides)
        logger.info("Config loaded successfully")
        COMMANDS[args.command](args, config)
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        logger.error("%s", exc)  # noqa: TRY400
        return EXIT_VALIDATION
    except NumericalError as exc:
        logger.error("Numerical failure: %s", exc)  # noqa: TRY400
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
