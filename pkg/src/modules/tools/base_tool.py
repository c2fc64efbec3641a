from __future__ import annotations
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from loguru import logger
from pydantic import BaseModel

from modules.alignment_prompts import CandidateBlock, parse_iri_answer
from modules.candidate_engine import CandidateSet
from modules.errors import NoAnswer, NotACandidate
from modules.graph_engine import AttributeTriple, KnowledgeGraph, RelationTriple
from modules.planner import ToolId
from modules.prompt_templates import ANSWER_NOTE
from modules.schema import ExecutorConfig, SelectionConfig


class TranscriptEntry(BaseModel):
    """
    One LLM-backed path step: the prompt, the last reply and how many
    requests the step took.
    """
    tag: str
    prompt: str
    response: str
    attempts: int = 1


@dataclass
class ExecutionContext:
    """
    Mutable state shared by the tools while one entity's path runs.
    Selector fields stay None when the selector is not part of the path.
    """
    source: str
    source_graph: KnowledgeGraph
    target_graph: KnowledgeGraph
    candidate_set: CandidateSet
    gateway: object
    selection: SelectionConfig
    executor: ExecutorConfig
    selected_attr: list[AttributeTriple] | None = None
    selected_rel: list[RelationTriple] | None = None
    candidate_attr: dict[str, list[AttributeTriple]] | None = None
    candidate_rel: dict[str, list[RelationTriple]] | None = None
    initial_prediction: str | None = None
    refined_prediction: str | None = None
    degraded: bool = False
    transcript: list[TranscriptEntry] = field(default_factory=list)

    @property
    def top_candidate(self) -> str:
        return self.candidate_set.candidates[0].target

    def _shown(self, selected, everything: tuple) -> list:
        match self.executor.triples:
            case "none":
                return []
            case "raw":
                return list(everything)
        if selected is not None:
            return list(selected)
        return list(everything[:self.executor.raw_cap])

    def source_triples(self) -> list[tuple[str, str, str]]:
        """
        Source triples shown in prompts: the selectors' output when they ran,
        otherwise the first ``raw_cap`` triples of each kind in file order.
        """
        return (self._shown(self.selected_attr, self.source_graph.attributes_of(self.source))
                + self._shown(self.selected_rel, self.source_graph.relations_of(self.source)))

    def candidate_blocks(self) -> list[CandidateBlock]:
        blocks = []
        for candidate in self.candidate_set.candidates:
            target = candidate.target
            known = self.target_graph.has_entity(target)
            attrs = self.target_graph.attributes_of(target) if known else ()
            rels = self.target_graph.relations_of(target) if known else ()
            selected_attr = self.candidate_attr.get(target, []) if self.candidate_attr is not None else None
            selected_rel = self.candidate_rel.get(target, []) if self.candidate_rel is not None else None
            triples = self._shown(selected_attr, attrs) + self._shown(selected_rel, rels)
            blocks.append(CandidateBlock(target, candidate.score, tuple(tuple(t) for t in triples)))
        return blocks


class ToolBase(ABC):
    """
    Abstract base class of the tools a path can call.
    Each tool reads from and writes to the :class:`ExecutionContext`.
    """
    tool_id: ToolId
    definition: str = ""
    usage: str = ""

    def describe(self) -> dict[str, str]:
        """
        The tool's entry in the tool pool definition.

        :return: ``name``, ``definition`` and ``usage``.
        :rtype: dict[str, str]
        """
        return {"name": self.tool_id.value, "definition": self.definition, "usage": self.usage}

    @abstractmethod
    def run(self, context: ExecutionContext):
        """
        Executes the tool on the context.

        :param context: The running entity's state.
        :type context: ExecutionContext
        """
        ...


class ChatToolBase(ToolBase):
    """
    Base class of the tools that ask the chat backend for a candidate IRI.
    """
    tag: str = "align"

    def ask_for_candidate(self, context: ExecutionContext, prompt: str) -> str:
        """
        Sends the prompt and parses a candidate IRI from the reply. An unusable
        reply is retried once; after that the top-1 candidate is returned and
        the context is flagged degraded.

        :return: A target IRI from the candidate set.
        :rtype: str
        """
        text = prompt
        response_text = ""
        for attempt in (1, 2):
            response_text = context.gateway.ask(self.tag, text, context.source).text
            try:
                iri = parse_iri_answer(response_text, context.candidate_set)
            except (NoAnswer, NotACandidate) as e:
                logger.warning(f"{self.tool_id.value} answer for {context.source} unusable "
                               f"(attempt {attempt}): {e}")
                text = prompt + ANSWER_NOTE
                continue
            context.transcript.append(TranscriptEntry(tag=self.tag, prompt=prompt, response=response_text, attempts=attempt))
            return iri
        context.transcript.append(TranscriptEntry(tag=self.tag, prompt=prompt, response=response_text, attempts=2))
        context.degraded = True
        logger.warning(f"Falling back to top-1 candidate for {context.source}")
        return context.top_candidate
