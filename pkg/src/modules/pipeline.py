"""
End-to-end orchestration: ingest, retrieve, train for several rounds,
infer on the test links and evaluate, writing every artifact to one directory.
"""

import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Mapping
from loguru import logger
from pydantic import BaseModel, ValidationError

from modules.candidate_engine import CandidateSet, retrieve_candidates, write_candidates
from modules.config import config_hash
from modules.errors import AlignPilotError, ConfigError, MalformedRecord, StageError
from modules.evaluation import EvalReport, evaluate, summarize_rounds
from modules.executor import AlignmentOutcome, Clock, EntityFailure, execute, map_entities
from modules.file_manager import DatasetBundle, FileManager
from modules.llm_gateway import LLMGateway, TokenLedger, create_backend, ledger_summary
from modules.optimizer import (
    TrainingStores, align_entity, export_sft_dataset, replay_policy, run_training_rounds,
)
from modules.planner import FullPathPolicy, LLMPolicy, PlanningPolicy, RuleBasedPolicy, ToolPath, observe, plan
from modules.schema import ApplicationConfig, DataConfig
from modules.tool_manager import default_tool_manager
from modules.trajectory_manager import TrajectoryDataset
from utils.helpers import iter_jsonl, write_jsonl


class PlanRecord(BaseModel):
    entity: str
    path: ToolPath


def check_inputs(config: ApplicationConfig):
    """
    Verifies that every file the configuration references exists.

    :raises ConfigError: On the first missing file.
    """
    data = config.data
    if data.bundle_dir:
        if not (Path(data.bundle_dir) / FileManager.MANIFEST).is_file():
            raise ConfigError(f"No bundle manifest in {data.bundle_dir}")
    else:
        for key in FileManager.INPUT_KEYS:
            path = getattr(data, key)
            if not path:
                raise ConfigError(f"data.{key} is not set and no data.bundle_dir is given")
            if not Path(path).is_file():
                raise ConfigError(f"data.{key} file not found: {path}")
    if config.retrieval.candidates_file and not Path(config.retrieval.candidates_file).is_file():
        raise ConfigError(f"Candidates file not found: {config.retrieval.candidates_file}")
    if config.retrieval.mode == "file" and not config.retrieval.candidates_file:
        raise ConfigError("retrieval.mode is 'file' but no candidates_file is configured")
    if config.backend.kind == "scripted" and not (config.backend.script_file and Path(config.backend.script_file).is_file()):
        raise ConfigError(f"Script file not found: {config.backend.script_file}")


def load_dataset_bundle(data: DataConfig, seed: int) -> DatasetBundle:
    """
    Loads the bundle directory when configured, otherwise ingests the five input files.
    """
    manager = FileManager()
    if data.bundle_dir:
        return manager.load_bundle(data.bundle_dir)
    return manager.ingest(data.attr1, data.rel1, data.attr2, data.rel2, data.links,
                          train_ratio=data.train_ratio, seed=seed)


def build_stores(config: ApplicationConfig, bundle: DatasetBundle, candidates: Mapping[str, CandidateSet],
                 ledger: TokenLedger | None = None) -> TrainingStores:
    backend = create_backend(config.backend, bundle.gold_map)
    gateway = LLMGateway.from_config(config.backend, backend, ledger)
    return TrainingStores(source_graph=bundle.source_graph, target_graph=bundle.target_graph,
                          candidates=candidates, gold=bundle.gold_map, gateway=gateway, config=config,
                          tool_manager=default_tool_manager())


def build_policy(name: str, stores: TrainingStores, dataset: TrajectoryDataset | None = None) -> PlanningPolicy:
    """
    Creates a planning policy by name.

    :raises ConfigError: If the replay policy has no trajectories to replay.
    """
    threshold = stores.config.planner.reflector_threshold
    match name:
        case "rule":
            return RuleBasedPolicy(threshold)
        case "full":
            return FullPathPolicy()
        case "llm":
            return LLMPolicy(stores.gateway, stores.tool_manager.tool_pool_text(), threshold)
        case "replay":
            if dataset is None:
                raise ConfigError("The replay policy needs a trajectory dataset")
            return replay_policy(dataset, threshold)
    raise ConfigError(f"Unknown policy: {name}")


def plan_entities(policy: PlanningPolicy, entities: Iterable[str], stores: TrainingStores) -> tuple[dict[str, ToolPath], list[EntityFailure]]:
    def work(entity: str) -> ToolPath:
        candidate_set = stores.candidates.get(entity) or CandidateSet(source=entity)
        return plan(policy, observe(stores.source_graph, entity, candidate_set,
                                    stores.config.selection.important_attributes))

    return map_entities(work, entities, stores.config.backend.max_concurrency)


def execute_plans(plans: Mapping[str, ToolPath], stores: TrainingStores,
                  clock: Clock = time.perf_counter) -> tuple[dict[str, AlignmentOutcome], list[EntityFailure]]:
    def work(entity: str) -> AlignmentOutcome:
        return execute(plans[entity], entity, stores.source_graph, stores.target_graph,
                       stores.candidates.get(entity) or CandidateSet(source=entity),
                       stores.gateway, stores.config, stores.tool_manager, clock)

    return map_entities(work, plans, stores.config.backend.max_concurrency)


def run_inference(entities: Iterable[str], policy: PlanningPolicy, stores: TrainingStores,
                  clock: Clock = time.perf_counter) -> tuple[dict[str, AlignmentOutcome], list[EntityFailure]]:
    """
    Plans and executes every entity with a fixed policy, timing planning and
    alignment separately.
    """
    entities = sorted(set(entities))
    logger.info(f"Inference on {len(entities)} entities with '{policy.name}' policy")
    return map_entities(lambda e: align_entity(e, policy, stores, clock)[1], entities,
                        stores.config.backend.max_concurrency)


def write_plans(path: str | Path, plans: Mapping[str, ToolPath]) -> int:
    with open(path, "w", encoding="utf-8") as f:
        return write_jsonl(f, (PlanRecord(entity=entity, path=plans[entity]).model_dump(mode="json")
                               for entity in sorted(plans)))


def read_plans(path: str | Path) -> dict[str, ToolPath]:
    plans = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, document in iter_jsonl(f):
            try:
                record = PlanRecord.model_validate(document)
            except ValidationError as e:
                raise MalformedRecord(line_no, f"invalid plan record ({e.error_count()} errors)") from None
            plans[record.entity] = record.path
    return plans


def write_outcomes(path: str | Path, outcomes: Mapping[str, AlignmentOutcome], transcript: bool = True) -> int:
    exclude = None if transcript else {"transcript"}
    with open(path, "w", encoding="utf-8") as f:
        return write_jsonl(f, (outcomes[entity].model_dump(mode="json", exclude=exclude) for entity in sorted(outcomes)))


def read_outcomes(path: str | Path) -> dict[str, AlignmentOutcome]:
    outcomes = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, document in iter_jsonl(f):
            try:
                outcome = AlignmentOutcome.model_validate(document)
            except ValidationError as e:
                raise MalformedRecord(line_no, f"invalid outcome record ({e.error_count()} errors)") from None
            outcomes[outcome.source] = outcome
    return outcomes


def failure_records(stage: str, failures: Iterable[EntityFailure], round_no: int | None = None) -> list[dict]:
    """
    Turns per-entity failures into ``failures.json`` records tagged with their stage and round.
    """
    return [{"stage": stage, "round": round_no, **f._asdict()} for f in failures]


def write_json(path: str | Path, payload) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


class RunManifest:
    """
    Tracks stage status and written artifacts of a run, rewriting
    ``manifest.json`` after every change so a failed run leaves an accurate record.
    """
    def __init__(self, out_dir: Path, config: ApplicationConfig):
        self.out_dir = out_dir
        self.doc = {
            "app": config.app_name,
            "version": config.version,
            "config_hash": config_hash(config),
            "seed": config.seed,
            "rounds": config.rounds,
            "policy": config.planner.policy,
            "backend": config.backend.kind,
            "stages": {},
            "artifacts": [],
        }

    def add(self, path: Path):
        name = path.relative_to(self.out_dir).as_posix()
        if name not in self.doc["artifacts"]:
            self.doc["artifacts"].append(name)
        self.save()

    def save(self):
        write_json(self.out_dir / "manifest.json", self.doc)

    @contextmanager
    def stage(self, name: str):
        """
        Runs one stage, recording its status and wrapping failures in :class:`StageError`.
        """
        logger.info(f"Stage '{name}' started")
        self.doc["stages"][name] = "running"
        self.save()
        try:
            yield
        except AlignPilotError as e:
            self.doc["stages"][name] = "failed"
            self.save()
            raise StageError(name, e) from e
        self.doc["stages"][name] = "done"
        self.save()
        logger.info(f"Stage '{name}' done")


def run_pipeline(config: ApplicationConfig, clock: Clock = time.perf_counter) -> EvalReport:
    """
    Runs the whole experiment: ``config.rounds`` training rounds on the training
    links, inference with the final policy on the test links, and evaluation.

    :param config: The effective configuration.
    :type config: ApplicationConfig
    :param clock: Time source for the per-entity timings.
    :type clock: Callable[[], float]
    :return: The evaluation report on the test links.
    :rtype: EvalReport
    :raises ConfigError: If a referenced file is missing, before any work is done.
    :raises StageError: If a stage fails; artifacts written so far are kept.
    """
    check_inputs(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "failures.json").unlink(missing_ok=True)
    manifest = RunManifest(out_dir, config)
    manifest.add(write_json(out_dir / "config.json", config.model_dump(mode="json")))

    with manifest.stage("ingest"):
        bundle = load_dataset_bundle(config.data, config.seed)
        FileManager().save_bundle(bundle, out_dir / "bundle")
        manifest.add(out_dir / "bundle" / FileManager.MANIFEST)

    train_sources = [p.source for p in bundle.train_links]
    test_sources = [p.source for p in bundle.test_links]

    with manifest.stage("retrieve"):
        candidates = retrieve_candidates(bundle.source_graph, bundle.target_graph,
                                         train_sources + test_sources, config.retrieval)
        with open(out_dir / "candidates.jsonl", "w", encoding="utf-8") as f:
            write_candidates(f, candidates)
        manifest.add(out_dir / "candidates.jsonl")

    stores = build_stores(config, bundle, candidates)
    try:
        with manifest.stage("train"):
            initial_policy = build_policy(config.planner.policy, stores, stores.dataset)
            results = run_training_rounds(train_sources, initial_policy, stores, config.rounds, clock)
            failures = [record for result in results
                        for record in failure_records("train", result.failures, result.round)]
            if failures:
                manifest.add(write_json(out_dir / "failures.json", failures))
            for result in results:
                path = out_dir / f"trajectories_round_{result.round}.jsonl"
                stores.dataset.save(path, round_no=result.round)
                manifest.add(path)
            with open(out_dir / "sft.jsonl", "w", encoding="utf-8") as f:
                export_sft_dataset(stores.dataset, f, stores.tool_manager.tool_pool_text(), config.export.sft_format)
            manifest.add(out_dir / "sft.jsonl")
            manifest.add(write_json(out_dir / "rounds.json",
                                    [s.model_dump(mode="json") for s in summarize_rounds(stores.dataset)]))

        with manifest.stage("infer"):
            final_policy = replay_policy(stores.dataset, config.planner.reflector_threshold)
            outcomes, infer_failures = run_inference(test_sources, final_policy, stores, clock)
            write_outcomes(out_dir / "outcomes.jsonl", outcomes)
            manifest.add(out_dir / "outcomes.jsonl")
            if infer_failures:
                failures += failure_records("infer", infer_failures)
                manifest.add(write_json(out_dir / "failures.json", failures))

        with manifest.stage("eval"):
            report = evaluate(outcomes.values(), candidates, bundle.gold_map, retrieval_k=config.retrieval.k)
            manifest.add(write_json(out_dir / "report.json", report.model_dump(mode="json")))
            tokens = ledger_summary(stores.gateway.ledger)
            manifest.add(write_json(out_dir / "tokens.json", tokens.model_dump(mode="json", exclude={"per_entity"})))
    finally:
        stores.gateway.backend.close()
    logger.info(f"Run finished; artifacts in {out_dir}")
    return report
