import argparse
import json
import sys
from pathlib import Path
from loguru import logger
from pydantic import ValidationError

from modules.candidate_engine import load_precomputed_candidates, retrieve_candidates, write_candidates
from modules.config import load_config
from modules.errors import AlignPilotError, ConfigError, DataError
from modules.evaluation import evaluate, summarize_rounds
from modules.file_manager import FileManager
from modules.graph_engine import entity_statistics
from modules.optimizer import export_sft_dataset, run_training_round
from modules.pipeline import (
    build_policy, build_stores, execute_plans, plan_entities, read_outcomes, read_plans, run_pipeline,
    write_json, write_outcomes, write_plans,
)
from modules.schema import ApplicationConfig
from modules.trajectory_manager import TrajectoryDataset
from modules.triple_selection import entity_profile


def setup_logging(level: str, log_file: Path | None = None):
    """
    Routes loguru output to stderr, and to a log file when given.
    """
    logger.remove()
    logger.add(sys.stderr, level=level)
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        logger.add(log_file, level="DEBUG", encoding="utf-8")


def apply_overrides(config: ApplicationConfig, args: argparse.Namespace) -> ApplicationConfig:
    """
    Applies command line flags on top of the loaded configuration and validates the result.

    :raises ConfigError: If an override breaks the schema.
    """
    data = config.model_dump()
    flags = {
        ("seed",): getattr(args, "seed", None),
        ("rounds",): getattr(args, "rounds", None),
        ("output_dir",): getattr(args, "output_dir", None),
        ("log_level",): getattr(args, "log_level", None),
        ("planner", "policy"): getattr(args, "policy", None),
        ("backend", "kind"): getattr(args, "backend", None),
        ("backend", "endpoint"): getattr(args, "endpoint", None),
        ("backend", "model"): getattr(args, "model", None),
        ("backend", "script_file"): getattr(args, "script", None),
        ("backend", "token_budget"): getattr(args, "token_budget", None),
        ("retrieval", "mode"): getattr(args, "mode", None),
        ("retrieval", "candidates_file"): getattr(args, "file", None),
        ("retrieval", "k"): getattr(args, "k", None),
        ("executor", "triples"): getattr(args, "triples", None),
        ("data", "bundle_dir"): getattr(args, "bundle", None),
        ("export", "sft_format"): getattr(args, "sft_format", None),
    }
    for keys, value in flags.items():
        if value is None:
            continue
        target = data
        for key in keys[:-1]:
            target = target[key]
        target[keys[-1]] = value
    try:
        return ApplicationConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid command line override: {e}") from None


def _load_candidates(path: str, config: ApplicationConfig):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return load_precomputed_candidates(f, k=config.retrieval.k)
    except FileNotFoundError:
        raise ConfigError(f"Candidates file not found: {path}") from None


def _require_bundle(args: argparse.Namespace):
    if not args.bundle:
        raise ConfigError("--bundle is required")
    return FileManager().load_bundle(args.bundle)


def cmd_ingest(args, config: ApplicationConfig) -> int:
    manager = FileManager()
    bundle = manager.ingest(args.attr1, args.rel1, args.attr2, args.rel2, args.links,
                            train_ratio=args.ratio if args.ratio is not None else config.data.train_ratio,
                            seed=config.seed)
    manager.save_bundle(bundle, args.out)
    return 0


def cmd_retrieve(args, config: ApplicationConfig) -> int:
    bundle = _require_bundle(args)
    sources = [p.source for p in bundle.gold_links]
    candidates = retrieve_candidates(bundle.source_graph, bundle.target_graph, sources, config.retrieval)
    with open(args.out, "w", encoding="utf-8") as f:
        write_candidates(f, candidates)
    logger.info(f"Wrote candidates of {len(candidates)} entities to {args.out}")
    return 0


def cmd_stats(args, config: ApplicationConfig) -> int:
    bundle = _require_bundle(args)
    graph = bundle.source_graph if bundle.source_graph.has_entity(args.entity) else bundle.target_graph
    stats = entity_statistics(graph, args.entity, config.selection.important_attributes)
    payload = {"entity": args.entity, "statistics": stats.model_dump(), **entity_profile(graph, args.entity, config.selection)}
    print(json.dumps(payload, indent=2, ensure_ascii=False))
    return 0


def cmd_plan(args, config: ApplicationConfig) -> int:
    bundle = _require_bundle(args)
    stores = build_stores(config, bundle, _load_candidates(args.candidates, config))
    dataset = TrajectoryDataset.load(args.trajectories) if args.trajectories else None
    policy = build_policy(config.planner.policy, stores, dataset)
    plans, failures = plan_entities(policy, stores.candidates, stores)
    write_plans(args.out, plans)
    logger.info(f"Wrote {len(plans)} plans to {args.out} ({len(failures)} failures)")
    return 0 if not failures else failures[0].exit_code


def cmd_align(args, config: ApplicationConfig) -> int:
    bundle = _require_bundle(args)
    stores = build_stores(config, bundle, _load_candidates(args.candidates, config))
    outcomes, failures = execute_plans(read_plans(args.plans), stores)
    write_outcomes(args.out, outcomes, transcript=not args.no_transcript)
    logger.info(f"Wrote {len(outcomes)} outcomes to {args.out} ({len(failures)} failures)")
    return 0 if not failures else failures[0].exit_code


def cmd_train_round(args, config: ApplicationConfig) -> int:
    bundle = _require_bundle(args)
    stores = build_stores(config, bundle, _load_candidates(args.candidates, config))
    history = TrajectoryDataset.load(args.trajectories) if args.trajectories else TrajectoryDataset()
    policy = build_policy(config.planner.policy, stores, history)
    stores.dataset = history
    result = run_training_round([p.source for p in bundle.train_links], policy, stores, args.round)
    stores.dataset.save(args.out_trajectories, round_no=args.round)
    if args.out_sft and result.records:
        with open(args.out_sft, "w", encoding="utf-8") as f:
            export_sft_dataset(TrajectoryDataset(result.records), f, stores.tool_manager.tool_pool_text(),
                               config.export.sft_format)
    if result.failures:
        logger.error(f"{len(result.failures)} entities failed in round {args.round}; first: {result.failures[0].error}")
        return result.failures[0].exit_code
    return 0


def cmd_eval(args, config: ApplicationConfig) -> int:
    manager = FileManager()
    gold = {p.source: p.target for p in manager.read_links_file(args.links)}
    outcomes = read_outcomes(args.outcomes)
    report = evaluate(outcomes.values(), _load_candidates(args.candidates, config), gold,
                      retrieval_k=config.retrieval.k)
    if args.report:
        write_json(args.report, report.model_dump(mode="json"))
    print(report.model_dump_json(indent=2))
    return 0


def cmd_report(args, config: ApplicationConfig) -> int:
    dataset = TrajectoryDataset.load(args.trajectories)
    print(f"{'round':>5} {'entities':>8} {'acc':>6} {'reward':>7} {'refl':>6} {'len':>5} {'refl*':>6} {'len*':>5}")
    for s in summarize_rounds(dataset):
        print(f"{s.round:>5} {s.entities:>8} {s.accuracy:>6.3f} {s.mean_reward:>7.3f} {s.reflector_rate:>6.3f} "
              f"{s.avg_path_length:>5.2f} {s.rewritten_reflector_rate:>6.3f} {s.rewritten_avg_path_length:>5.2f}")
    return 0


def cmd_run(args, config: ApplicationConfig) -> int:
    setup_logging(config.log_level, Path(config.output_dir) / "run.log")
    report = run_pipeline(config)
    print(report.model_dump_json(indent=2))
    failures_file = Path(config.output_dir) / "failures.json"
    if failures_file.is_file():
        failures = json.loads(failures_file.read_text(encoding="utf-8"))
        logger.error(f"{len(failures)} entity failures recorded in {failures_file}")
        return failures[0]["exit_code"]
    return 0


def _add_retrieval_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--mode", choices=["name-sim", "file"], help="name similarity or a precomputed candidates file")
    parser.add_argument("--file", help="precomputed candidates JSONL, used instead of name similarity")


def _add_backend_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--backend", choices=["http", "oracle", "scripted"])
    parser.add_argument("--endpoint")
    parser.add_argument("--model")
    parser.add_argument("--script", help="YAML script for the scripted backend")
    parser.add_argument("--token-budget", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alignpilot", description="Tool-planning agent for knowledge graph entity alignment")
    parser.add_argument("--config", help="YAML configuration file (default: config.yml)")
    parser.add_argument("--log-level", choices=["TRACE", "DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse the input files and write a dataset bundle")
    for name in ("attr1", "rel1", "attr2", "rel2", "links"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--split", dest="ratio", type=float, help="share of gold links used for training")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("retrieve", help="write top-k candidates for every gold source")
    p.add_argument("--bundle", required=True)
    _add_retrieval_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("stats", help="print statistics, entropies and relation scores of one entity")
    p.add_argument("--bundle", required=True)
    p.add_argument("--entity", required=True)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("plan", help="plan a tool path for every entity with candidates")
    p.add_argument("--bundle", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--policy", choices=["llm", "rule", "replay", "full"])
    p.add_argument("--trajectories", nargs="*", help="trajectory files for the replay policy")
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("align", help="execute planned paths")
    p.add_argument("--bundle", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--plans", required=True)
    p.add_argument("--triples", choices=["selected", "raw", "none"])
    p.add_argument("--no-transcript", action="store_true")
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    p.set_defaults(handler=cmd_align)

    p = sub.add_parser("train-round", help="run one training round on the training links")
    p.add_argument("--bundle", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=["llm", "rule", "replay", "full"])
    p.add_argument("--trajectories", nargs="*", help="trajectories of earlier rounds")
    p.add_argument("--out-trajectories", required=True)
    p.add_argument("--out-sft")
    p.add_argument("--sft-format", choices=["prompt_completion", "alpaca", "messages"])
    _add_backend_flags(p)
    p.set_defaults(handler=cmd_train_round)

    p = sub.add_parser("eval", help="compute metrics of alignment outcomes")
    p.add_argument("--outcomes", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--links", required=True)
    p.add_argument("--report")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", help="print round-over-round statistics of trajectory files")
    p.add_argument("--trajectories", nargs="+", required=True)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("run", help="train, infer and evaluate end to end")
    p.add_argument("--output-dir")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=["llm", "rule", "replay", "full"])
    p.add_argument("--bundle")
    _add_retrieval_flags(p)
    p.add_argument("--triples", choices=["selected", "raw", "none"])
    _add_backend_flags(p)
    p.set_defaults(handler=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Parses arguments, loads the configuration and runs one subcommand.

    :return: 0 on success, 1 for configuration errors, 2 for data errors,
        3 for backend errors.
    :rtype: int
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or "INFO")
    config = load_config(args.config)
    if not config:
        return ConfigError.exit_code
    try:
        config = apply_overrides(config, args)
        setup_logging(config.log_level)
        return args.handler(args, config)
    except AlignPilotError as e:
        logger.error(str(e))
        return e.exit_code
    except FileNotFoundError as e:
        logger.error(f"File not found: {e.filename}")
        return DataError.exit_code


def run():
    """
    Console entry point.
    """
    sys.exit(main())


if __name__ == "__main__":
    run()
