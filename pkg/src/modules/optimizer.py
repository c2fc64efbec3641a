"""
Reward-guided path rewriting, the training round loop, the replay stand-in
policy and SFT export of the trajectory dataset.
"""

import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO
from typing_extensions import override
from loguru import logger

from modules.candidate_engine import CandidateSet
from modules.errors import (
    EmptyCandidates, EmptyDataset, InvalidPath, MalformedRecord,
    MissingGold, MissingPlaceholder, NoToolLines, UnknownTool,
)
from modules.executor import AlignmentOutcome, Clock, EntityFailure, map_entities, plan_and_execute
from modules.graph_engine import KnowledgeGraph
from modules.llm_gateway import SYSTEM_TEXT, LLMGateway
from modules.planner import (
    PlanningObservation, PlanningPolicy, ToolId, ToolPath, observe, parse_plan, render_plan,
    render_planning_prompt, rule_based_plan,
)
from modules.prompt_templates import REPAIR_NOTE, REWRITE_TEMPLATE, fill_template
from modules.reward import RewardBreakdown, compute_reward
from modules.schema import ApplicationConfig
from modules.tool_manager import ToolManager
from modules.trajectory_manager import PolicyUpdateTriple, TrajectoryDataset
from utils.helpers import iter_jsonl, write_jsonl


def render_rewrite_prompt(observation: PlanningObservation, old_path: ToolPath, reward: RewardBreakdown | float | None) -> str:
    """
    Fills the path rewriting prompt. The old path is shown in plan format and
    the reward total with two decimals.

    :raises MissingPlaceholder: If the reward is missing.
    """
    if reward is None:
        raise MissingPlaceholder("reward")
    total = reward.total if isinstance(reward, RewardBreakdown) else float(reward)
    return fill_template(
        REWRITE_TEMPLATE,
        entity=observation.entity,
        top1_score=f"{observation.top1:.2f}",
        top2_score=f"{observation.top2:.2f}",
        top3_score=f"{observation.top3:.2f}",
        old_tools=render_plan(old_path),
        reward=f"{total:.2f}",
    )


def repair_path(old_path: ToolPath, reward: RewardBreakdown) -> ToolPath:
    """
    Deterministic rewrite: drops the reflector when reflecting was penalized,
    otherwise keeps the old path.
    """
    if reward.gamma_ref is not None and reward.gamma_ref < 0:
        return ToolPath(steps=tuple(s for s in old_path.steps if s != ToolId.REFLECTOR), origin="fallback")
    return old_path.with_origin("fallback")


def rewrite_path(gateway: LLMGateway, observation: PlanningObservation, old_path: ToolPath, reward: RewardBreakdown) -> ToolPath:
    """
    Asks the model for a better path given the reward of the old one.
    An unusable answer is retried once before :func:`repair_path` takes over.

    :return: The rewritten path, origin ``rewritten`` or ``fallback``.
    :rtype: ToolPath
    :raises BackendError: If the backend fails.
    """
    prompt = render_rewrite_prompt(observation, old_path, reward)
    text = prompt
    for attempt in (1, 2):
        response = gateway.ask("rewrite", text, observation.entity)
        try:
            return parse_plan(response.text, origin="rewritten")
        except (NoToolLines, UnknownTool, InvalidPath) as e:
            logger.warning(f"Unusable rewrite for {observation.entity} (attempt {attempt}): {e}")
            text = prompt + REPAIR_NOTE.format(reason=getattr(e, "reason", str(e)))
    return repair_path(old_path, reward)


@dataclass
class TrainingStores:
    """
    Everything a training or inference run reads from and writes to.
    """
    source_graph: KnowledgeGraph
    target_graph: KnowledgeGraph
    candidates: Mapping[str, CandidateSet]
    gold: Mapping[str, str]
    gateway: LLMGateway
    config: ApplicationConfig
    tool_manager: ToolManager
    dataset: TrajectoryDataset = field(default_factory=TrajectoryDataset)


@dataclass
class RoundResult:
    round: int
    policy: str
    records: list[PolicyUpdateTriple]
    outcomes: dict[str, AlignmentOutcome]
    failures: list[EntityFailure]


def align_entity(entity: str, policy: PlanningPolicy, stores: TrainingStores,
                 clock: Clock = time.perf_counter) -> tuple[PlanningObservation, AlignmentOutcome]:
    """
    Observes, plans and executes one source entity.

    :raises EmptyCandidates: If the entity has no candidates.
    """
    candidate_set = stores.candidates.get(entity)
    if candidate_set is None or not candidate_set.candidates:
        raise EmptyCandidates(entity)
    observation = observe(stores.source_graph, entity, candidate_set, stores.config.selection.important_attributes)
    outcome = plan_and_execute(policy, observation, stores.source_graph, stores.target_graph, candidate_set,
                               stores.gateway, stores.config, stores.tool_manager, clock)
    return observation, outcome


def _trajectory(entity: str, policy: PlanningPolicy, stores: TrainingStores, round_no: int,
                clock: Clock) -> AlignmentOutcome:
    if entity not in stores.gold:
        raise MissingGold(entity)
    observation, outcome = align_entity(entity, policy, stores, clock)
    reward = compute_reward(outcome, stores.gold[entity], stores.config.reward)
    rewritten = rewrite_path(stores.gateway, observation, outcome.path, reward)
    stores.dataset.stage(PolicyUpdateTriple(entity=entity, round=round_no, observation=observation,
                                            path=outcome.path, reward=reward, rewritten_path=rewritten))
    return outcome


def run_training_round(entities: Iterable[str], policy: PlanningPolicy, stores: TrainingStores,
                       round_no: int = 0, clock: Clock = time.perf_counter) -> RoundResult:
    """
    Plans, executes, scores and rewrites the path of every training entity,
    then appends the round's records to the dataset sorted by entity.

    A failing entity is logged and skipped; an exhausted token budget aborts
    the round after committing the records finished so far.

    :param entities: Training source entities.
    :type entities: Iterable[str]
    :param policy: Planning policy of this round.
    :type policy: PlanningPolicy
    :param stores: Graphs, candidates, gold links, gateway and dataset.
    :type stores: TrainingStores
    :param round_no: Round number stored on the records.
    :type round_no: int
    :return: The new records, the outcomes and the failures.
    :rtype: RoundResult
    :raises BudgetExceeded: If the token budget runs out.
    """
    entities = sorted(set(entities))
    logger.info(f"Round {round_no}: {len(entities)} entities with '{policy.name}' policy")
    try:
        outcomes, failures = map_entities(lambda e: _trajectory(e, policy, stores, round_no, clock),
                                          entities, stores.config.backend.max_concurrency)
    finally:
        records = stores.dataset.commit()
    logger.info(f"Round {round_no}: {len(records)} trajectories, {len(failures)} failures")
    return RoundResult(round_no, policy.name, records, outcomes, failures)


class ReplayPolicy(PlanningPolicy):
    """
    Stand-in for a fine-tuned planner: looks up the best rewritten path stored
    for observations in the same bucket, keyed by whether the entity has a name
    attribute and whether the top-2 gap is below the threshold.
    """
    name = "replay"

    def __init__(self, dataset: TrajectoryDataset, threshold: float = 0.3):
        self.threshold = threshold
        self.buckets: dict[tuple[bool, bool], PolicyUpdateTriple] = {}
        for record in sorted(dataset, key=lambda r: r.entity):
            key = self.bucket(record.observation)
            best = self.buckets.get(key)
            if best is None or (record.reward.total, record.round) > (best.reward.total, best.round):
                self.buckets[key] = record
        if not self.buckets:
            logger.warning("Replay policy built from an empty dataset; every plan is rule-based")

    def bucket(self, observation: PlanningObservation) -> tuple[bool, bool]:
        signal = observation.statistics.signal_attr if observation.statistics else False
        return signal, observation.gap < self.threshold

    @override
    def plan(self, observation: PlanningObservation) -> ToolPath:
        record = self.buckets.get(self.bucket(observation))
        if record is None:
            return rule_based_plan(observation, self.threshold)
        return record.rewritten_path.with_origin("rewritten")


def replay_policy(dataset: TrajectoryDataset, threshold: float = 0.3) -> ReplayPolicy:
    return ReplayPolicy(dataset, threshold)


def run_training_rounds(entities: Iterable[str], initial_policy: PlanningPolicy, stores: TrainingStores,
                        rounds: int, clock: Clock = time.perf_counter) -> list[RoundResult]:
    """
    Runs ``rounds`` training rounds numbered from 0. Round 0 uses the initial
    policy; every later round replays the dataset collected so far.
    """
    entities = sorted(set(entities))
    policy = initial_policy
    results = []
    for round_no in range(rounds):
        results.append(run_training_round(entities, policy, stores, round_no, clock))
        policy = replay_policy(stores.dataset, stores.config.planner.reflector_threshold)
    return results


def _sft_record(prompt: str, completion: str, fmt: str) -> dict:
    match fmt:
        case "alpaca":
            return {"instruction": prompt, "input": "", "output": completion}
        case "messages":
            return {"messages": [{"role": "system", "content": SYSTEM_TEXT},
                                 {"role": "user", "content": prompt},
                                 {"role": "assistant", "content": completion}]}
    return {"prompt": prompt, "completion": completion}


def export_sft_dataset(dataset: TrajectoryDataset, stream: TextIO, tool_pool_text: str,
                       fmt: str = "prompt_completion") -> int:
    """
    Writes one SFT example per record: the planning prompt of the stored
    observation, answered by the rewritten path in plan format.

    :param dataset: The trajectory dataset.
    :type dataset: TrajectoryDataset
    :param stream: Text stream receiving JSONL.
    :type stream: TextIO
    :param tool_pool_text: Tool definitions used in the planning prompt.
    :type tool_pool_text: str
    :param fmt: ``prompt_completion``, ``alpaca`` or ``messages``.
    :type fmt: str
    :return: The number of records written.
    :rtype: int
    :raises EmptyDataset: If the dataset has no records.
    """
    if len(dataset) == 0:
        raise EmptyDataset()
    write_jsonl(stream, (_sft_record(render_planning_prompt(record.observation, tool_pool_text),
                                     render_plan(record.rewritten_path), fmt) for record in dataset))
    logger.info(f"Exported {len(dataset)} SFT records ({fmt})")
    return len(dataset)


def read_sft_dataset(stream: Iterable[str]) -> list[tuple[str, str]]:
    """
    Reads ``(prompt, completion)`` pairs back from any of the export formats.

    :raises MalformedRecord: On a line in none of the formats.
    """
    pairs = []
    for line_no, doc in iter_jsonl(stream):
        if "prompt" in doc and "completion" in doc:
            pairs.append((doc["prompt"], doc["completion"]))
        elif "instruction" in doc and "output" in doc:
            pairs.append((doc["instruction"], doc["output"]))
        elif "messages" in doc:
            turns = {m["role"]: m["content"] for m in doc["messages"]}
            pairs.append((turns["user"], turns["assistant"]))
        else:
            raise MalformedRecord(line_no, "not an SFT record")
    return pairs
