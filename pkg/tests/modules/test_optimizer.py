import io
import pytest
from modules.backends.mock_backend import OracleBackend, ScriptedBackend
from modules.errors import BudgetExceeded, EmptyCandidates, EmptyDataset, MalformedRecord, MissingGold, MissingPlaceholder
from modules.graph_engine import EntityStatistics
from modules.llm_gateway import LLMGateway
from modules.optimizer import (
    ReplayPolicy, TrainingStores, align_entity, export_sft_dataset, read_sft_dataset, render_rewrite_prompt,
    repair_path, rewrite_path, run_training_round, run_training_rounds,
)
from modules.planner import PlanningObservation, RuleBasedPolicy, ToolId, ToolPath, render_plan
from modules.reward import RewardBreakdown
from modules.schema import ApplicationConfig
from modules.tool_manager import default_tool_manager
from modules.trajectory_manager import PolicyUpdateTriple, TrajectoryDataset

A, R, EA, REF = ToolId.ATTRIBUTE_SELECTOR, ToolId.RELATION_SELECTOR, ToolId.ALIGNMENT, ToolId.REFLECTOR
FULL = ToolPath(steps=(A, R, EA, REF), origin="rule")


def _observation(entity="s:1", top1=0.9, top2=0.5, signal=True):
    stats = EntityStatistics(attr_cnt_all=3, attr_cnt=3, rel_cnt_all=1, rel_cnt=1, signal_attr=signal)
    return PlanningObservation(entity=entity, statistics=stats, top1=top1, top2=top2, top3=0.1)


def _reward(total, ref=None):
    return RewardBreakdown(gamma_mu=1.0, gamma_ref=ref, gamma_e=0.5, total=total)


def _record(entity, total, rewritten, round_no=0, top2=0.5, signal=True):
    return PolicyUpdateTriple(entity=entity, round=round_no, observation=_observation(entity, top2=top2, signal=signal),
                              path=FULL, reward=_reward(total), rewritten_path=ToolPath(steps=rewritten, origin="rewritten"))


def _stores(bundle, candidates, backend, **config):
    return TrainingStores(
        source_graph=bundle.source_graph, target_graph=bundle.target_graph, candidates=candidates,
        gold=bundle.gold_map, gateway=LLMGateway(backend), config=ApplicationConfig(**config),
        tool_manager=default_tool_manager(),
    )


# Test cases for rewriting
def test_render_rewrite_prompt():
    prompt = render_rewrite_prompt(_observation(), FULL, _reward(0.9493))
    assert "Reward: 0.95" in prompt
    assert "Candidate similarities: 0.90, 0.50, 0.10" in prompt
    assert "1. AttributeTripleSelector\n2. RelationTripleSelector\n3. EntityAlignmentTool\n4. Reflector" in prompt
    assert "Reward: -0.55" in render_rewrite_prompt(_observation(), FULL, -0.5507)
    with pytest.raises(MissingPlaceholder):
        render_rewrite_prompt(_observation(), FULL, None)

@pytest.mark.parametrize("ref, steps", [
    (-0.5, (A, R, EA)),
    (-1.0, (A, R, EA)),
    (1.0, (A, R, EA, REF)),
    (0.0, (A, R, EA, REF)),
])
def test_repair_path(ref, steps):
    """Test that only a penalized reflection removes the reflector."""
    path = repair_path(FULL, _reward(1.0, ref))
    assert path.steps == steps
    assert path.origin == "fallback"

def test_rewrite_path_uses_model_answer():
    gateway = LLMGateway(ScriptedBackend({"rewrite": "1. AttributeTripleSelector\n2. EntityAlignmentTool"}))
    path = rewrite_path(gateway, _observation(), FULL, _reward(0.95, -0.5))
    assert path.steps == (A, EA)
    assert path.origin == "rewritten"
    assert len(gateway.ledger) == 1

def test_rewrite_path_repairs_after_two_bad_answers():
    backend = ScriptedBackend({"rewrite": ["1. Reflector\n2. EntityAlignmentTool", "still nothing"]})
    gateway = LLMGateway(backend)
    path = rewrite_path(gateway, _observation(), FULL, _reward(-0.55, -1.0))
    assert path.steps == (A, R, EA)
    assert path.origin == "fallback"
    assert len(gateway.ledger) == 2

# Test cases for ReplayPolicy
def test_replay_policy_keeps_best_record_per_bucket():
    """Test that the highest reward wins, later rounds break reward ties, then the smaller entity."""
    dataset = TrajectoryDataset([
        _record("s:2", 1.0, (A, EA)),
        _record("s:1", 1.0, (R, EA)),
        _record("s:3", 0.4, (A, R, EA)),
        _record("s:4", 2.0, (A, R, EA, REF), top2=0.8),
    ])
    policy = ReplayPolicy(dataset, threshold=0.3)
    assert policy.plan(_observation("s:9")).steps == (R, EA)
    assert policy.plan(_observation("s:9", top2=0.85)).steps == (A, R, EA, REF)
    assert policy.plan(_observation("s:9")).origin == "rewritten"

    dataset.extend([_record("s:5", 1.0, (A, EA, REF), round_no=1)])
    assert ReplayPolicy(dataset).plan(_observation("s:9")).steps == (A, EA, REF)

def test_replay_policy_falls_back_to_rule_plan():
    policy = ReplayPolicy(TrajectoryDataset([_record("s:1", 1.0, (R, EA))]))
    path = policy.plan(_observation("s:9", signal=False))
    assert path.origin == "rule"
    assert path.steps == (A, R, EA)
    assert ReplayPolicy(TrajectoryDataset()).plan(_observation(top2=0.8)).has_reflector

# Test cases for training rounds
def test_align_entity(bundle, candidates):
    entity = bundle.train_links[0].source
    stores = _stores(bundle, candidates, OracleBackend(bundle.gold_map))
    observation, outcome = align_entity(entity, RuleBasedPolicy(), stores, clock=lambda: 0.0)
    assert observation.entity == entity
    assert outcome.final_prediction == bundle.gold_map[entity]
    with pytest.raises(EmptyCandidates):
        align_entity("http://nowhere/x", RuleBasedPolicy(), stores)

def test_training_round_with_oracle(bundle, candidates):
    """Test that every training entity yields one record, in entity order."""
    stores = _stores(bundle, candidates, OracleBackend(bundle.gold_map))
    entities = [p.source for p in bundle.train_links]
    result = run_training_round(entities, RuleBasedPolicy(), stores, round_no=0, clock=lambda: 0.0)
    assert [r.entity for r in result.records] == sorted(entities)
    assert result.failures == []
    assert all(r.reward.case == "redundant" for r in result.records)
    assert all(r.reward.total == pytest.approx(0.9493, abs=1e-4) for r in result.records)
    assert len(stores.dataset) == len(entities)

def test_training_round_reports_entities_without_gold(bundle, candidates):
    stores = _stores(bundle, candidates, OracleBackend(bundle.gold_map))
    stores.gold = {p.source: p.target for p in bundle.train_links[1:]}
    entities = [p.source for p in bundle.train_links]
    result = run_training_round(entities, RuleBasedPolicy(), stores)
    assert [f.entity for f in result.failures] == [bundle.train_links[0].source]
    assert len(result.records) == len(entities) - 1

def test_training_round_budget_commits_finished_records(bundle, candidates):
    stores = _stores(bundle, candidates, OracleBackend(bundle.gold_map))
    stores.gateway = LLMGateway(OracleBackend(bundle.gold_map), token_budget=1)
    with pytest.raises(BudgetExceeded):
        run_training_round([p.source for p in bundle.train_links], RuleBasedPolicy(), stores)
    assert stores.dataset.last_round in (None, 0)

@pytest.fixture
def reflector_backend(bundle, candidates):
    """
    Aligns every entity correctly; the reflector breaks the answer for the first
    30% of entities and confirms it for the rest; rewrites are never usable.
    """
    sources = sorted(p.source for p in bundle.train_links)
    harmed = set(sources[: int(len(sources) * 0.3)])
    per_entity = {}
    for source in sources:
        gold = bundle.gold_map[source]
        wrong = next(t for t in candidates[source].targets if t != gold)
        per_entity[source] = {"align": f"[{gold}]", "reflect": f"[{wrong if source in harmed else gold}]"}
    return ScriptedBackend({"rewrite": "I am not sure."}, per_entity=per_entity)


def test_reflector_usage_drops_after_training(bundle, candidates, reflector_backend):
    """Test that penalized reflection disappears from the replayed plans of the next round."""
    stores = _stores(bundle, candidates, reflector_backend)
    entities = [p.source for p in bundle.train_links]
    first, second = run_training_rounds(entities, RuleBasedPolicy(), stores, rounds=2, clock=lambda: 0.0)

    def reflector_rate(result):
        return sum(o.path.has_reflector for o in result.outcomes.values()) / len(result.outcomes)

    assert (first.policy, second.policy) == ("rule", "replay")
    assert reflector_rate(first) == 1.0
    assert reflector_rate(second) == 0.0
    assert {r.reward.case for r in first.records} == {"redundant", "harmful"}
    assert all(r.rewritten_path.steps == (A, R, EA) for r in first.records)
    assert all(o.final_prediction == bundle.gold_map[e] for e, o in second.outcomes.items())
    assert stores.dataset.rounds() == [0, 1]

# Test cases for SFT export
@pytest.mark.parametrize("fmt, key", [("prompt_completion", "completion"), ("alpaca", "output"), ("messages", "messages")])
def test_export_and_read_sft(fmt, key):
    dataset = TrajectoryDataset([_record("s:1", 1.0, (R, EA)), _record("s:2", 0.5, (A, R, EA))])
    stream = io.StringIO()
    assert export_sft_dataset(dataset, stream, "[]", fmt) == 2
    lines = stream.getvalue().splitlines()
    assert key in lines[0]
    pairs = read_sft_dataset(lines)
    assert [c for _, c in pairs] == [render_plan(ToolPath(steps=(R, EA))), render_plan(ToolPath(steps=(A, R, EA)))]
    assert "s:1" in pairs[0][0]

def test_export_empty_dataset():
    with pytest.raises(EmptyDataset):
        export_sft_dataset(TrajectoryDataset(), io.StringIO(), "[]")

def test_read_sft_rejects_unknown_shape():
    with pytest.raises(MalformedRecord):
        read_sft_dataset(['{"question": "?"}'])

def test_missing_gold_is_a_data_error():
    assert MissingGold("s:1").exit_code == 2
