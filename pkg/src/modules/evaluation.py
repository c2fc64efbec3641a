"""
Alignment metrics and per-round summaries.
"""

from statistics import fmean
from typing import Iterable, Mapping
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from modules.candidate_engine import CandidateSet
from modules.errors import MissingGold
from modules.executor import AlignmentOutcome
from modules.llm_gateway import TokenLedger, ledger_summary
from modules.planner import ToolPath
from modules.trajectory_manager import TrajectoryDataset


class EvalReport(BaseModel):
    n_entities: int = Field(ge=0)
    hits_at_1: float = Field(ge=0.0, le=1.0)
    hits_at_10: float = Field(ge=0.0, le=1.0)
    mrr: float = Field(ge=0.0, le=1.0)
    reflector_rate: float = Field(ge=0.0, le=1.0)
    avg_path_length: float = Field(ge=0.0)
    avg_tokens_per_entity: float = Field(ge=0.0)
    avg_seconds_per_entity: tuple[float, float] = (0.0, 0.0)
    degraded: int = 0

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.hits_at_1 > self.hits_at_10 + 1e-12:
            raise ValueError("hits@1 cannot exceed hits@10")
        return self


def ranking(outcome: AlignmentOutcome, candidate_set: CandidateSet | None) -> list[str]:
    """
    The agent's implied ranking: its final prediction first, then the other
    candidates in retrieval order.
    """
    rest = candidate_set.targets if candidate_set is not None else []
    return [outcome.final_prediction] + [t for t in rest if t != outcome.final_prediction]


def _gold_rank(outcome: AlignmentOutcome, candidate_sets: Mapping[str, CandidateSet], gold: Mapping[str, str]) -> int | None:
    if outcome.source not in gold:
        raise MissingGold(outcome.source)
    ranked = ranking(outcome, candidate_sets.get(outcome.source))
    target = gold[outcome.source]
    return ranked.index(target) + 1 if target in ranked else None


def hits_at_k(outcomes: Iterable[AlignmentOutcome], candidate_sets: Mapping[str, CandidateSet],
              gold: Mapping[str, str], k: int) -> float:
    """
    Share of entities whose gold target ranks within the top ``k``. For k=1 this
    is the accuracy of the final prediction; for the retrieval k it is the
    candidate recall.

    :raises MissingGold: If an outcome has no gold link.
    """
    ranks = [_gold_rank(o, candidate_sets, gold) for o in outcomes]
    if not ranks:
        return 0.0
    return sum(1 for r in ranks if r is not None and r <= k) / len(ranks)


def mrr(outcomes: Iterable[AlignmentOutcome], candidate_sets: Mapping[str, CandidateSet], gold: Mapping[str, str]) -> float:
    """
    Mean reciprocal rank of the gold target in :func:`ranking`; 0 when the gold
    target is not a candidate.

    :raises MissingGold: If an outcome has no gold link.
    """
    ranks = [_gold_rank(o, candidate_sets, gold) for o in outcomes]
    if not ranks:
        return 0.0
    return sum(1.0 / r for r in ranks if r is not None) / len(ranks)


def reflector_rate(paths: Iterable[ToolPath]) -> float:
    paths = list(paths)
    return sum(p.has_reflector for p in paths) / len(paths) if paths else 0.0


def avg_path_length(paths: Iterable[ToolPath]) -> float:
    paths = list(paths)
    return fmean(len(p) for p in paths) if paths else 0.0


def evaluate(outcomes: Iterable[AlignmentOutcome], candidate_sets: Mapping[str, CandidateSet],
             gold: Mapping[str, str], ledger: TokenLedger | None = None, retrieval_k: int = 10) -> EvalReport:
    """
    Computes every metric over a set of outcomes.

    :param outcomes: One outcome per evaluated entity.
    :type outcomes: Iterable[AlignmentOutcome]
    :param candidate_sets: Candidate sets by source IRI.
    :type candidate_sets: Mapping[str, CandidateSet]
    :param gold: Gold target by source IRI.
    :type gold: Mapping[str, str]
    :param ledger: When given, average tokens come from the ledger entries of
        the evaluated entities instead of the outcomes.
    :type ledger: TokenLedger | None
    :param retrieval_k: The k of Hits@k for candidate recall.
    :type retrieval_k: int
    :return: The report.
    :rtype: EvalReport
    :raises MissingGold: If an outcome has no gold link.
    """
    outcomes = sorted(outcomes, key=lambda o: o.source)
    paths = [o.path for o in outcomes]
    if ledger is not None:
        avg_tokens = ledger_summary(ledger, {o.source for o in outcomes}).avg_tokens_per_entity
    else:
        avg_tokens = fmean(o.tokens for o in outcomes) if outcomes else 0.0
    report = EvalReport(
        n_entities=len(outcomes),
        hits_at_1=hits_at_k(outcomes, candidate_sets, gold, 1),
        hits_at_10=hits_at_k(outcomes, candidate_sets, gold, retrieval_k),
        mrr=mrr(outcomes, candidate_sets, gold),
        reflector_rate=reflector_rate(paths),
        avg_path_length=avg_path_length(paths),
        avg_tokens_per_entity=avg_tokens,
        avg_seconds_per_entity=(
            fmean(o.planning_seconds for o in outcomes) if outcomes else 0.0,
            fmean(o.alignment_seconds for o in outcomes) if outcomes else 0.0,
        ),
        degraded=sum(o.degraded for o in outcomes),
    )
    logger.info(f"Evaluated {report.n_entities} entities: hits@1={report.hits_at_1:.4f} "
                f"hits@{retrieval_k}={report.hits_at_10:.4f} mrr={report.mrr:.4f}")
    return report


class RoundSummary(BaseModel):
    round: int
    entities: int
    accuracy: float
    mean_reward: float
    reflector_rate: float
    avg_path_length: float
    rewritten_reflector_rate: float
    rewritten_avg_path_length: float


def summarize_rounds(dataset: TrajectoryDataset) -> list[RoundSummary]:
    """
    Per-round accuracy, mean reward, reflector rate and path length, for the
    executed and for the rewritten paths.
    """
    summaries = []
    for round_no in dataset.rounds():
        records = dataset.for_round(round_no)
        summaries.append(RoundSummary(
            round=round_no,
            entities=len(records),
            accuracy=fmean(r.reward.gamma_mu for r in records),
            mean_reward=fmean(r.reward.total for r in records),
            reflector_rate=reflector_rate(r.path for r in records),
            avg_path_length=avg_path_length(r.path for r in records),
            rewritten_reflector_rate=reflector_rate(r.rewritten_path for r in records),
            rewritten_avg_path_length=avg_path_length(r.rewritten_path for r in records),
        ))
    return summaries
