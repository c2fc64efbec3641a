"""
Tool path model, path grammar, plan parsing and planning policies.
"""

import re
from abc import ABC, abstractmethod
from enum import Enum
from typing import Iterable, Literal
from typing_extensions import override
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from modules.candidate_engine import CandidateSet, top_scores
from modules.errors import InvalidPath, MissingPlaceholder, NoToolLines, UnknownTool
from modules.graph_engine import EntityStatistics, KnowledgeGraph, entity_statistics
from modules.prompt_templates import PLANNING_TEMPLATE, REPAIR_NOTE, fill_template

PathOrigin = Literal["llm", "rule", "rewritten", "fallback"]


class ToolId(str, Enum):
    ATTRIBUTE_SELECTOR = "AttributeTripleSelector"
    RELATION_SELECTOR = "RelationTripleSelector"
    ALIGNMENT = "EntityAlignmentTool"
    REFLECTOR = "Reflector"

    @property
    def is_selector(self) -> bool:
        return self in (ToolId.ATTRIBUTE_SELECTOR, ToolId.RELATION_SELECTOR)

    @property
    def chat_tag(self) -> str | None:
        return {ToolId.ALIGNMENT: "align", ToolId.REFLECTOR: "reflect"}.get(self)


_BY_KEY = {tool.value.lower(): tool for tool in ToolId}


def path_violation(steps: Iterable[ToolId]) -> str | None:
    """
    Checks a step sequence against the path grammar: one or two distinct
    selectors, then the alignment tool, then optionally the reflector.

    :return: The first violated rule, or None for a valid path.
    :rtype: str | None
    """
    steps = list(steps)
    if not 2 <= len(steps) <= 4:
        return "length"
    if len(set(steps)) != len(steps):
        return "duplicate"
    if ToolId.ALIGNMENT not in steps:
        return "missing alignment tool"
    align_at = steps.index(ToolId.ALIGNMENT)
    if ToolId.REFLECTOR in steps and (steps[-1] != ToolId.REFLECTOR or steps.index(ToolId.REFLECTOR) < align_at):
        return "reflector misplaced"
    selectors = [s for s in steps if s.is_selector]
    if len(selectors) > 2:
        return "too many selectors"
    if not selectors:
        return "missing selector"
    if any(s.is_selector for s in steps[align_at + 1:]):
        return "selector misplaced"
    return None


class ToolPath(BaseModel):
    """
    An ordered tool sequence for one entity and where it came from.
    """
    model_config = ConfigDict(frozen=True)

    steps: tuple[ToolId, ...]
    origin: PathOrigin = "llm"

    @model_validator(mode="after")
    def _check_grammar(self):
        reason = path_violation(self.steps)
        if reason:
            raise ValueError(f"invalid tool path: {reason}")
        return self

    @classmethod
    def of(cls, steps: Iterable[ToolId | str], origin: PathOrigin = "llm") -> "ToolPath":
        """
        Builds a path, raising :class:`InvalidPath` rather than a validation error.

        :raises UnknownTool: If a step is not a tool name.
        :raises InvalidPath: If the steps break the path grammar.
        """
        parsed = []
        for step in steps:
            try:
                parsed.append(ToolId(step))
            except ValueError:
                raise UnknownTool(str(step)) from None
        steps = tuple(parsed)
        reason = path_violation(steps)
        if reason:
            raise InvalidPath(reason, tuple(s.value for s in steps))
        return cls(steps=steps, origin=origin)

    @property
    def has_reflector(self) -> bool:
        return ToolId.REFLECTOR in self.steps

    def __len__(self) -> int:
        return len(self.steps)

    def __contains__(self, tool: object) -> bool:
        return tool in self.steps

    def with_origin(self, origin: PathOrigin) -> "ToolPath":
        return ToolPath(steps=self.steps, origin=origin)

    def arrow(self) -> str:
        return " -> ".join(s.value for s in self.steps)


def render_plan(path: ToolPath) -> str:
    """
    Renders a path as the numbered list the planning prompt asks for.
    """
    return "\n".join(f"{i}. {step.value}" for i, step in enumerate(path.steps, start=1))


STANDARD_STEPS = (ToolId.ATTRIBUTE_SELECTOR, ToolId.RELATION_SELECTOR, ToolId.ALIGNMENT)


class PlanningObservation(BaseModel):
    """
    What the planner sees of a source entity: its statistics and the three best
    candidate similarities.
    """
    entity: str
    statistics: EntityStatistics | None = None
    top1: float = Field(default=0.0, ge=0.0)
    top2: float = Field(default=0.0, ge=0.0)
    top3: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_order(self):
        if not self.top1 >= self.top2 >= self.top3:
            raise ValueError("similarities must satisfy top1 >= top2 >= top3")
        return self

    @property
    def gap(self) -> float:
        return round(self.top1 - self.top2, 9)


def observe(graph: KnowledgeGraph, entity: str, candidate_set: CandidateSet, whitelist: Iterable[str]) -> PlanningObservation:
    top1, top2, top3 = top_scores(candidate_set)
    return PlanningObservation(entity=entity, statistics=entity_statistics(graph, entity, whitelist),
                               top1=top1, top2=top2, top3=top3)


def render_planning_prompt(observation: PlanningObservation, tool_pool_text: str) -> str:
    """
    Fills the planning prompt for one entity.

    :param observation: Entity statistics and top similarities.
    :type observation: PlanningObservation
    :param tool_pool_text: Tool definitions as rendered by the tool manager.
    :type tool_pool_text: str
    :return: The prompt text.
    :rtype: str
    :raises MissingPlaceholder: If the observation lacks statistics.
    """
    stats = observation.statistics
    if stats is None:
        raise MissingPlaceholder("attr_cnt_all")
    return fill_template(
        PLANNING_TEMPLATE,
        tool_pool=tool_pool_text,
        entity_iri=observation.entity,
        attr_cnt_all=stats.attr_cnt_all,
        attr_cnt=stats.attr_cnt,
        rel_cnt_all=stats.rel_cnt_all,
        rel_cnt=stats.rel_cnt,
        signal_attr=str(stats.signal_attr).lower(),
        top1_score=f"{observation.top1:.2f}",
        top2_score=f"{observation.top2:.2f}",
        top3_score=f"{observation.top3:.2f}",
    )


_PLAN_LINE = re.compile(r"^\s*(?:[-*+>]\s*)?(?:\*\*|__)?\s*(\d+)\s*[.):]\s*(.+?)\s*$")
_NAME_END = re.compile(r"\s+-\s|:|\(|->|→|,")


def _tool_from(name: str) -> ToolId:
    cleaned = re.sub(r"[*_`\[\]<>\"']", "", name)
    cleaned = _NAME_END.split(cleaned, maxsplit=1)[0]
    key = re.sub(r"[^a-z]", "", cleaned.lower())
    if key not in _BY_KEY:
        raise UnknownTool(name.strip())
    return _BY_KEY[key]


def parse_plan(text: str, origin: PathOrigin = "llm") -> ToolPath:
    """
    Extracts a tool path from numbered ``N. ToolName`` lines. Markdown bullets
    and emphasis are ignored, names match case-insensitively, and lines are
    ordered by their number.

    :param text: Planner output.
    :type text: str
    :param origin: Origin recorded on the parsed path.
    :type origin: str
    :return: The parsed path.
    :rtype: ToolPath
    :raises NoToolLines: If no numbered line is found.
    :raises UnknownTool: If a line names no known tool.
    :raises InvalidPath: If the sequence breaks the path grammar.
    """
    numbered = []
    for line in text.splitlines():
        match = _PLAN_LINE.match(line)
        if match:
            numbered.append((int(match.group(1)), _tool_from(match.group(2))))
    if not numbered:
        raise NoToolLines()
    numbered.sort(key=lambda item: item[0])
    return ToolPath.of((tool for _, tool in numbered), origin=origin)


def rule_based_plan(observation: PlanningObservation, threshold: float = 0.3, origin: PathOrigin = "rule") -> ToolPath:
    """
    Both selectors and the alignment tool; the reflector is added when the
    gap between the two best similarities is below ``threshold``.
    """
    steps = STANDARD_STEPS + ((ToolId.REFLECTOR,) if observation.gap < threshold else ())
    return ToolPath(steps=steps, origin=origin)


class PlanningPolicy(ABC):
    """
    Abstract base class of planning policies.
    """
    name: str = "policy"

    @abstractmethod
    def plan(self, observation: PlanningObservation) -> ToolPath:
        ...


class RuleBasedPolicy(PlanningPolicy):
    name = "rule"

    def __init__(self, threshold: float = 0.3):
        self.threshold = threshold

    @override
    def plan(self, observation: PlanningObservation) -> ToolPath:
        return rule_based_plan(observation, self.threshold)


class FullPathPolicy(PlanningPolicy):
    """
    Always runs every tool, without adaptive planning.
    """
    name = "full"

    @override
    def plan(self, observation: PlanningObservation) -> ToolPath:
        return ToolPath(steps=STANDARD_STEPS + (ToolId.REFLECTOR,), origin="rule")


class LLMPolicy(PlanningPolicy):
    """
    Asks the chat backend for a plan. An unusable answer gets one repair
    prompt; if that fails too the rule-based plan is used.
    """
    name = "llm"

    def __init__(self, gateway, tool_pool_text: str, threshold: float = 0.3):
        """
        :param gateway: The :class:`~modules.llm_gateway.LLMGateway` to plan with.
        :param tool_pool_text: Tool definitions for the prompt.
        :type tool_pool_text: str
        :param threshold: Reflector threshold of the rule-based fallback.
        :type threshold: float
        """
        self.gateway = gateway
        self.tool_pool_text = tool_pool_text
        self.threshold = threshold

    @override
    def plan(self, observation: PlanningObservation) -> ToolPath:
        prompt = render_planning_prompt(observation, self.tool_pool_text)
        response = self.gateway.ask("plan", prompt, observation.entity)
        try:
            return parse_plan(response.text, origin="llm")
        except (NoToolLines, UnknownTool, InvalidPath) as e:
            logger.warning(f"Unusable plan for {observation.entity} ({e}); asking again")
            reason = getattr(e, "reason", str(e))
        response = self.gateway.ask("plan", prompt + REPAIR_NOTE.format(reason=reason), observation.entity)
        try:
            return parse_plan(response.text, origin="llm")
        except (NoToolLines, UnknownTool, InvalidPath) as e:
            logger.warning(f"Repaired plan for {observation.entity} still unusable ({e}); using rule-based plan")
        return rule_based_plan(observation, self.threshold, origin="fallback")


def plan(policy: PlanningPolicy, observation: PlanningObservation) -> ToolPath:
    """
    Plans a tool path for one entity. Only backend errors escape.
    """
    path = policy.plan(observation)
    logger.debug(f"Planned {path.arrow()} ({path.origin}) for {observation.entity}")
    return path
