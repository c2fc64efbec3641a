"""
Step-by-step execution of a tool path for one source entity.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, NamedTuple, TypeVar
from loguru import logger
from pydantic import BaseModel, model_validator

from modules.alignment_prompts import (  # noqa: F401
    CandidateBlock, parse_iri_answer, render_alignment_prompt, render_reflection_prompt,
)
from modules.candidate_engine import CandidateSet
from modules.errors import AlignPilotError, BudgetExceeded, EmptyCandidates
from modules.graph_engine import AttributeTriple, KnowledgeGraph, RelationTriple
from modules.planner import PlanningObservation, PlanningPolicy, ToolPath, plan
from modules.schema import ApplicationConfig
from modules.tool_manager import ToolManager, default_tool_manager
from modules.tools.base_tool import ExecutionContext, TranscriptEntry

Clock = Callable[[], float]
T = TypeVar("T")


class AlignmentOutcome(BaseModel):
    """
    Everything one path execution produced for a source entity.
    """
    source: str
    path: ToolPath
    selected_attr: list[AttributeTriple] = []
    selected_rel: list[RelationTriple] = []
    initial_prediction: str
    refined_prediction: str | None = None
    final_prediction: str
    degraded: bool = False
    transcript: list[TranscriptEntry] = []
    prompt_tokens: int = 0
    completion_tokens: int = 0
    planning_seconds: float = 0.0
    alignment_seconds: float = 0.0

    @model_validator(mode="after")
    def _check_final(self):
        expected = self.refined_prediction if self.refined_prediction is not None else self.initial_prediction
        if self.final_prediction != expected:
            raise ValueError("final prediction must be the refined prediction when present, else the initial one")
        return self

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def execute(path: ToolPath, source: str, graph_s: KnowledgeGraph, graph_t: KnowledgeGraph,
            candidate_set: CandidateSet, gateway, config: ApplicationConfig,
            tool_manager: ToolManager | None = None, clock: Clock = time.perf_counter) -> AlignmentOutcome:
    """
    Runs the tools of a path in order and assembles the outcome.

    Selectors only run when they are in the path; otherwise prompts show the
    first ``raw_cap`` triples of each kind. Token counts cover the calls made
    here for this entity.

    :param path: A validated tool path.
    :type path: ToolPath
    :param source: The source entity IRI.
    :type source: str
    :param graph_s: Source graph.
    :type graph_s: KnowledgeGraph
    :param graph_t: Target graph.
    :type graph_t: KnowledgeGraph
    :param candidate_set: Non-empty candidates of ``source``.
    :type candidate_set: CandidateSet
    :param gateway: The :class:`~modules.llm_gateway.LLMGateway` used for LLM steps.
    :param config: Selection and executor settings are read from here.
    :type config: ApplicationConfig
    :param tool_manager: Tool registry; the four standard tools by default.
    :type tool_manager: ToolManager | None
    :param clock: Time source for ``alignment_seconds``.
    :type clock: Callable[[], float]
    :return: The outcome.
    :rtype: AlignmentOutcome
    :raises EmptyCandidates: If the candidate set is empty.
    :raises BackendError: If the backend fails.
    """
    if not candidate_set.candidates:
        raise EmptyCandidates(source)
    tool_manager = tool_manager or default_tool_manager()
    context = ExecutionContext(
        source=source, source_graph=graph_s, target_graph=graph_t, candidate_set=candidate_set,
        gateway=gateway, selection=config.selection, executor=config.executor,
    )
    prompt_before, completion_before = gateway.ledger.usage(source)
    started = clock()
    tool_manager.run_path(path, context)
    elapsed = clock() - started
    prompt_after, completion_after = gateway.ledger.usage(source)

    final = context.refined_prediction if context.refined_prediction is not None else context.initial_prediction
    outcome = AlignmentOutcome(
        source=source,
        path=path,
        selected_attr=context.selected_attr or [],
        selected_rel=context.selected_rel or [],
        initial_prediction=context.initial_prediction,
        refined_prediction=context.refined_prediction,
        final_prediction=final,
        degraded=context.degraded,
        transcript=context.transcript,
        prompt_tokens=prompt_after - prompt_before,
        completion_tokens=completion_after - completion_before,
        alignment_seconds=elapsed,
    )
    if outcome.degraded:
        logger.warning(f"Degraded outcome for {source}: fell back to {final}")
    logger.debug(f"Aligned {source} -> {final} via {path.arrow()}")
    return outcome


def plan_and_execute(policy: PlanningPolicy, observation: PlanningObservation, graph_s: KnowledgeGraph,
                     graph_t: KnowledgeGraph, candidate_set: CandidateSet, gateway, config: ApplicationConfig,
                     tool_manager: ToolManager | None = None, clock: Clock = time.perf_counter) -> AlignmentOutcome:
    """
    Plans a path for one entity and executes it. Planning time and planning
    tokens are included in the returned outcome.
    """
    entity = observation.entity
    prompt_before, completion_before = gateway.ledger.usage(entity)
    started = clock()
    path = plan(policy, observation)
    planning_seconds = clock() - started
    outcome = execute(path, entity, graph_s, graph_t, candidate_set, gateway, config, tool_manager, clock)
    prompt_after, completion_after = gateway.ledger.usage(entity)
    return outcome.model_copy(update={
        "planning_seconds": planning_seconds,
        "prompt_tokens": prompt_after - prompt_before,
        "completion_tokens": completion_after - completion_before,
    })


class EntityFailure(NamedTuple):
    entity: str
    error: str
    exit_code: int


def map_entities(work: Callable[[str], T], entities: Iterable[str],
                 max_workers: int = 4) -> tuple[dict[str, T], list[EntityFailure]]:
    """
    Runs ``work`` for every entity on a thread pool, in source IRI order.
    A failing entity is logged and reported; an exhausted token budget stops everything.

    :return: Results by entity, and the failures.
    :rtype: tuple[dict[str, T], list[EntityFailure]]
    :raises BudgetExceeded: If the token budget runs out.
    """
    def guarded(entity: str):
        try:
            return entity, work(entity), None
        except BudgetExceeded:
            raise
        except AlignPilotError as e:
            logger.error(f"{entity} failed: {e}")
            return entity, None, EntityFailure(entity, str(e), e.exit_code)

    results: dict[str, T] = {}
    failures: list[EntityFailure] = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for entity, value, failure in pool.map(guarded, sorted(set(entities))):
            if failure:
                failures.append(failure)
            else:
                results[entity] = value
    return results, failures
