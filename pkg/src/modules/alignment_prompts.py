"""
Rendering of the alignment and reflection prompts, and parsing of their answers.
"""

import re
from typing import Iterable, NamedTuple

from modules.candidate_engine import CandidateSet
from modules.errors import EmptyCandidates, MissingPlaceholder, NoAnswer, NotACandidate
from modules.prompt_templates import ALIGNMENT_TEMPLATE, REFLECTION_TEMPLATE, fill_template


class CandidateBlock(NamedTuple):
    target: str
    score: float
    triples: tuple[tuple[str, str, str], ...]


def format_triple(triple: tuple[str, str, str]) -> str:
    return f"({triple[0]}, {triple[1]}, {triple[2]})"


def _triple_lines(triples: Iterable[tuple[str, str, str]]) -> str:
    lines = [format_triple(t) for t in triples]
    return "\n".join(lines) if lines else "(no triples)"


def _render_blocks(candidate_blocks: Iterable[CandidateBlock]) -> tuple[list[str], str]:
    blocks = sorted(candidate_blocks, key=lambda b: (-b.score, b.target))
    rendered = [f"Candidate {i}: {b.target} (similarity {b.score:.2f})\n{_triple_lines(b.triples)}"
                for i, b in enumerate(blocks, start=1)]
    return [b.target for b in blocks], "\n\n".join(rendered)


def render_alignment_prompt(source: str, selected_triples: Iterable[tuple[str, str, str]],
                            candidate_blocks: Iterable[CandidateBlock]) -> str:
    """
    Fills the alignment prompt. Candidate blocks are listed by descending
    similarity, each triple on its own line as ``(subject, predicate, object)``.

    :raises EmptyCandidates: If there is no candidate block.
    """
    targets, blocks = _render_blocks(candidate_blocks)
    if not targets:
        raise EmptyCandidates(source)
    return fill_template(ALIGNMENT_TEMPLATE, source_iri=source,
                         source_triples=_triple_lines(selected_triples), candidate_blocks=blocks)


def render_reflection_prompt(source: str, triples: Iterable[tuple[str, str, str]],
                             candidate_blocks: Iterable[CandidateBlock], initial_choice: str | None) -> str:
    """
    Fills the reflection prompt around the initial choice.

    :raises EmptyCandidates: If there is no candidate block.
    :raises MissingPlaceholder: If the initial choice is missing or not a candidate.
    """
    targets, blocks = _render_blocks(candidate_blocks)
    if not targets:
        raise EmptyCandidates(source)
    if initial_choice not in targets:
        raise MissingPlaceholder("initial_choice")
    return fill_template(REFLECTION_TEMPLATE, source_iri=source, source_triples=_triple_lines(triples),
                         candidate_blocks=blocks, initial_choice=initial_choice)


_BRACKETED = re.compile(r"\[([^\[\]\n]+)\]")


def parse_iri_answer(text: str, candidate_set: CandidateSet) -> str:
    """
    Reads the chosen IRI from a reply. The first ``[...]`` token wins; without
    brackets, the longest candidate IRI quoted verbatim in the reply is taken.

    :param text: The model's reply.
    :type text: str
    :param candidate_set: Candidates the answer must come from.
    :type candidate_set: CandidateSet
    :return: The chosen target IRI.
    :rtype: str
    :raises NoAnswer: If nothing can be extracted.
    :raises NotACandidate: If the bracketed IRI is not a candidate.
    """
    match = _BRACKETED.search(text)
    if match:
        iri = match.group(1).strip().strip("<>").strip()
        if iri not in candidate_set:
            raise NotACandidate(iri)
        return iri
    quoted = [t for t in candidate_set.targets if t in text]
    if not quoted:
        raise NoAnswer(text)
    return max(quoted, key=len)
