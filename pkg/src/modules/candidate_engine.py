"""
Candidate retrieval: precomputed top-k lists or a name-similarity fallback.
"""

import heapq
from typing import Iterable, Mapping, TextIO
from loguru import logger
import Levenshtein
from pydantic import BaseModel, ConfigDict, Field, model_validator

from modules.errors import ConfigError, InvalidIri, MalformedRecord, ScoreOutOfRange
from modules.graph_engine import Iri, KnowledgeGraph, local_name, validate_iri
from modules.schema import RetrievalConfig
from utils.helpers import iter_jsonl, write_jsonl


class ScoredCandidate(BaseModel):
    """
    One target entity and its similarity to the source entity.
    """
    model_config = ConfigDict(frozen=True)

    target: Iri
    score: float = Field(ge=0.0, le=1.0)


class CandidateSet(BaseModel):
    """
    Top-k target candidates of one source entity, best first.
    """
    model_config = ConfigDict(frozen=True)

    source: Iri
    candidates: tuple[ScoredCandidate, ...] = ()
    k: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _check_ranking(self):
        if len(self.candidates) > self.k:
            raise ValueError(f"{len(self.candidates)} candidates exceed k={self.k}")
        scores = [c.score for c in self.candidates]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("candidate scores must be non-increasing")
        if len({c.target for c in self.candidates}) != len(self.candidates):
            raise ValueError("candidate targets must be distinct")
        return self

    @property
    def targets(self) -> list[str]:
        return [c.target for c in self.candidates]

    def __contains__(self, iri: object) -> bool:
        return any(c.target == iri for c in self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)

    def to_record(self) -> dict:
        return {"source": self.source,
                "candidates": [{"iri": c.target, "score": c.score} for c in self.candidates]}


def rank_candidates(source: str, scored: Iterable[tuple[str, float]], k: int, where: str = "") -> CandidateSet:
    """
    Orders ``(target, score)`` pairs by descending score then target IRI, keeps
    the best score of a repeated target and caps the list at ``k``.
    Warns when the input was not already in that shape.
    """
    scored = list(scored)
    best: dict[str, float] = {}
    for target, score in scored:
        if target not in best or score > best[target]:
            best[target] = score
    if len(best) != len(scored):
        logger.warning(f"Duplicate candidate targets for {source}{where}; keeping the best score")
    ordered = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    if any(a < b for (_, a), (_, b) in zip(scored, scored[1:])):
        logger.warning(f"Candidates for {source}{where} were not sorted by score; re-sorted")
    if len(ordered) > k:
        logger.debug(f"Capping {len(ordered)} candidates of {source} at k={k}")
    return CandidateSet(source=source,
                        candidates=tuple(ScoredCandidate(target=t, score=s) for t, s in ordered[:k]),
                        k=k)


def _record_iri(value: str, line_no: int) -> str:
    try:
        return validate_iri(value)
    except InvalidIri as e:
        raise MalformedRecord(line_no, str(e)) from None


def load_precomputed_candidates(stream: Iterable[str], k: int = 10) -> dict[str, CandidateSet]:
    """
    Loads candidate lists from JSONL, one
    ``{"source": iri, "candidates": [{"iri": ..., "score": ...}, ...]}`` per line.
    Scores must already be normalized to [0, 1].

    :param stream: Lines of the JSONL file.
    :type stream: Iterable[str]
    :param k: Maximum candidates kept per source.
    :type k: int
    :return: Candidate sets keyed by source IRI.
    :rtype: dict[str, CandidateSet]
    :raises MalformedRecord: On invalid JSON, missing fields, an invalid IRI or a repeated source.
    :raises ScoreOutOfRange: On a score outside [0, 1].
    """
    result: dict[str, CandidateSet] = {}
    for line_no, record in iter_jsonl(stream):
        if not isinstance(record, dict) or not isinstance(record.get("source"), str) \
                or not isinstance(record.get("candidates"), list):
            raise MalformedRecord(line_no, "expected 'source' string and 'candidates' list")
        source = _record_iri(record["source"], line_no)
        if source in result:
            raise MalformedRecord(line_no, f"source {source} listed twice")
        scored = []
        for item in record["candidates"]:
            if not isinstance(item, dict) or not isinstance(item.get("iri"), str) or not item["iri"]:
                raise MalformedRecord(line_no, "candidate without 'iri'")
            score = item.get("score")
            if isinstance(score, bool) or not isinstance(score, (int, float)):
                raise MalformedRecord(line_no, f"candidate {item['iri']} without numeric 'score'")
            if not 0.0 <= score <= 1.0:
                raise ScoreOutOfRange(line_no, item["iri"], score)
            scored.append((_record_iri(item["iri"], line_no), float(score)))
        result[source] = rank_candidates(source, scored, k, where=f" (line {line_no})")
    logger.info(f"Loaded candidate lists for {len(result)} source entities")
    return result


def write_candidates(stream: TextIO, candidate_sets: Mapping[str, CandidateSet]) -> int:
    """
    Writes candidate sets as JSONL in source IRI order.

    :return: The number of records written.
    :rtype: int
    """
    return write_jsonl(stream, (candidate_sets[source].to_record() for source in sorted(candidate_sets)))


def name_similarity(a: str, b: str) -> float:
    """
    ``1 - levenshtein(a, b) / max(len(a), len(b))``; two empty names count as identical.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - Levenshtein.distance(a, b) / longest


class NameSimilarityRetriever:
    """
    Fallback retriever ranking target entities by normalized edit distance of
    their local names. Target names are computed once per graph.
    """
    def __init__(self, target_graph: KnowledgeGraph):
        self.target_graph = target_graph
        self._names = [(iri, local_name(iri)) for iri in sorted(target_graph.entities)]

    def query(self, source: str, k: int = 10) -> CandidateSet:
        name = local_name(source)
        best = heapq.nsmallest(
            k,
            ((-name_similarity(name, target_name), iri) for iri, target_name in self._names),
        )
        return CandidateSet(source=source,
                            candidates=tuple(ScoredCandidate(target=iri, score=-neg) for neg, iri in best),
                            k=k)


def name_similarity_candidates(source_graph: KnowledgeGraph, target_graph: KnowledgeGraph, source: str, k: int = 10) -> CandidateSet:
    """
    Top-k target entities by local-name similarity to ``source``; ties go to the
    lexicographically smaller target IRI.

    :raises UnknownEntity: If ``source`` is not in the source graph.
    """
    source_graph.require(source)
    return NameSimilarityRetriever(target_graph).query(source, k)


def top_scores(candidate_set: CandidateSet) -> tuple[float, float, float]:
    """
    The three best similarity scores, 0.0 for missing ranks.
    """
    scores = [c.score for c in candidate_set.candidates[:3]]
    scores += [0.0] * (3 - len(scores))
    return scores[0], scores[1], scores[2]


def retrieve_candidates(source_graph: KnowledgeGraph, target_graph: KnowledgeGraph,
                        sources: Iterable[str], config: RetrievalConfig) -> dict[str, CandidateSet]:
    """
    Resolves candidate sets for the given sources. A configured candidates file
    wins over the fallback, and the two are never mixed: sources missing from
    the file get no candidates.

    :raises ConfigError: If file mode is requested without a file.
    """
    sources = sorted(set(sources))
    if config.candidates_file:
        if config.mode != "file":
            logger.info("Candidates file configured; name-similarity fallback disabled")
        try:
            with open(config.candidates_file, "r", encoding="utf-8") as f:
                loaded = load_precomputed_candidates(f, k=config.k)
        except FileNotFoundError:
            raise ConfigError(f"Candidates file not found: {config.candidates_file}") from None
        missing = [s for s in sources if s not in loaded]
        if missing:
            logger.warning(f"{len(missing)} source entities have no precomputed candidates")
        return {s: loaded[s] for s in sources if s in loaded}
    if config.mode == "file":
        raise ConfigError("retrieval.mode is 'file' but no candidates_file is configured")

    retriever = NameSimilarityRetriever(target_graph)
    result = {}
    for source in sources:
        source_graph.require(source)
        result[source] = retriever.query(source, config.k)
    logger.info(f"Computed name-similarity candidates for {len(result)} source entities")
    return result
