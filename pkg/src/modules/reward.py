import math
from typing import Literal
from pydantic import BaseModel, ConfigDict, Field
from modules.schema import RewardConfig

ReflectionCase = Literal["none", "corrected", "redundant", "harmful", "unresolved"]


class RewardBreakdown(BaseModel):
    """
    The three reward terms of a trajectory and their weighted sum.
    ``gamma_ref`` is None when the reflector did not run.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    gamma_mu: float = Field(serialization_alias="mu", validation_alias="mu")
    gamma_ref: float | None = Field(default=None, serialization_alias="ref", validation_alias="ref")
    gamma_e: float = Field(gt=0.0, le=1.0, serialization_alias="e", validation_alias="e")
    total: float
    case: ReflectionCase = "none"


def reflection_case(initial_correct: bool, refined_correct: bool | None) -> ReflectionCase:
    if refined_correct is None:
        return "none"
    if not initial_correct:
        return "corrected" if refined_correct else "unresolved"
    return "redundant" if refined_correct else "harmful"


_REFLECTION_SCORE = {"corrected": 1.0, "harmful": -1.0, "unresolved": 0.0}


def compute_reward(outcome, gold: str, config: RewardConfig) -> RewardBreakdown:
    """
    Scores a trajectory as correctness of the final prediction, plus ``c``
    times the reflection term, plus ``exp(-beta * path length)``.

    The reflection term is +1 when reflection fixed a wrong answer, ``-alpha``
    when it kept a right one, -1 when it broke a right one and 0 when the answer
    was wrong before and after.

    :param outcome: An :class:`~modules.executor.AlignmentOutcome`.
    :param gold: The gold target IRI.
    :type gold: str
    :param config: Reward coefficients.
    :type config: RewardConfig
    :return: The reward terms.
    :rtype: RewardBreakdown
    """
    gamma_mu = 1.0 if outcome.final_prediction == gold else 0.0
    refined_correct = None if outcome.refined_prediction is None else outcome.refined_prediction == gold
    case = reflection_case(outcome.initial_prediction == gold, refined_correct)
    gamma_ref = None if case == "none" else _REFLECTION_SCORE.get(case, -config.alpha)
    gamma_e = math.exp(-config.beta * len(outcome.path))
    total = gamma_mu + config.c * (gamma_ref or 0.0) + gamma_e
    return RewardBreakdown(gamma_mu=gamma_mu, gamma_ref=gamma_ref, gamma_e=gamma_e, total=total, case=case)
