import pytest
from modules.backends.mock_backend import OracleBackend, ScriptedBackend
from modules.candidate_engine import CandidateSet, ScoredCandidate
from modules.errors import BudgetExceeded, EmptyCandidates, MissingGold, MissingPlaceholder, NoAnswer, NotACandidate
from modules.executor import (
    AlignmentOutcome, CandidateBlock, execute, map_entities, parse_iri_answer, plan_and_execute,
    render_alignment_prompt, render_reflection_prompt,
)
from modules.llm_gateway import LLMGateway
from modules.planner import RuleBasedPolicy, ToolId, ToolPath, observe
from modules.schema import ApplicationConfig, ExecutorConfig

A, R, EA, REF = ToolId.ATTRIBUTE_SELECTOR, ToolId.RELATION_SELECTOR, ToolId.ALIGNMENT, ToolId.REFLECTOR
CANDIDATES = CandidateSet(source="s:1", candidates=(
    ScoredCandidate(target="http://en/Paris", score=0.9),
    ScoredCandidate(target="http://en/Paris_Texas", score=0.8),
    ScoredCandidate(target="http://en/Lyon", score=0.2),
))


def _block(target, score, triples=()):
    return CandidateBlock(target, score, tuple(triples))


# Test cases for the alignment and reflection prompts
def test_render_alignment_prompt_orders_blocks():
    """Test that candidate blocks are listed by similarity with one triple per line."""
    prompt = render_alignment_prompt(
        "s:1", [("s:1", "p:name", "Paris")],
        [_block("http://en/Lyon", 0.2), _block("http://en/Paris", 0.9, [("http://en/Paris", "p:name", "Paris")])],
    )
    assert "(s:1, p:name, Paris)" in prompt
    assert prompt.index("Candidate 1: http://en/Paris (similarity 0.90)") < prompt.index("Candidate 2: http://en/Lyon")
    assert "(no triples)" in prompt

def test_render_alignment_prompt_without_candidates():
    with pytest.raises(EmptyCandidates):
        render_alignment_prompt("s:1", [], [])

def test_render_reflection_prompt():
    blocks = [_block("http://en/Paris", 0.9), _block("http://en/Lyon", 0.2)]
    prompt = render_reflection_prompt("s:1", [], blocks, "http://en/Lyon")
    assert "Initial choice: http://en/Lyon" in prompt
    with pytest.raises(MissingPlaceholder):
        render_reflection_prompt("s:1", [], blocks, None)
    with pytest.raises(MissingPlaceholder):
        render_reflection_prompt("s:1", [], blocks, "http://en/Nice")

# Test cases for parse_iri_answer
@pytest.mark.parametrize("text, expected", [
    ("[http://en/Paris]", "http://en/Paris"),
    ("The answer is [ <http://en/Lyon> ] because ...", "http://en/Lyon"),
    ("I pick http://en/Paris_Texas as the match.", "http://en/Paris_Texas"),
    ("Clearly http://en/Paris.", "http://en/Paris"),
])
def test_parse_iri_answer(text, expected):
    assert parse_iri_answer(text, CANDIDATES) == expected

def test_parse_iri_answer_errors():
    with pytest.raises(NotACandidate):
        parse_iri_answer("[http://en/Nice]", CANDIDATES)
    with pytest.raises(NoAnswer):
        parse_iri_answer("None of them.", CANDIDATES)

# Test cases for execute
@pytest.fixture
def oracle_gateway(bundle):
    return LLMGateway(OracleBackend(bundle.gold_map))


def test_execute_oracle_without_reflector(bundle, candidates, oracle_gateway, zero_clock):
    """Test that the oracle path yields the gold target and no refined prediction."""
    pair = bundle.gold_links[0]
    outcome = execute(ToolPath(steps=(A, R, EA)), pair.source, bundle.source_graph, bundle.target_graph,
                      candidates[pair.source], oracle_gateway, ApplicationConfig(), clock=zero_clock)
    assert outcome.final_prediction == pair.target
    assert outcome.refined_prediction is None
    assert 0 < len(outcome.selected_attr) <= 5
    assert 0 < len(outcome.selected_rel) <= 5
    assert [e.tag for e in outcome.transcript] == ["align"]
    assert outcome.tokens == sum(oracle_gateway.ledger.usage(pair.source))
    assert outcome.alignment_seconds == 0.0
    assert not outcome.degraded

def test_execute_with_reflector_and_selectors_skipped(bundle, candidates, oracle_gateway):
    """Test a path without selectors: prompts fall back to raw triples, the reflector refines."""
    pair = bundle.gold_links[1]
    outcome = execute(ToolPath(steps=(R, EA, REF)), pair.source, bundle.source_graph, bundle.target_graph,
                      candidates[pair.source], oracle_gateway, ApplicationConfig())
    assert outcome.selected_attr == []
    assert outcome.refined_prediction == outcome.final_prediction == pair.target
    assert [e.tag for e in outcome.transcript] == ["align", "reflect"]
    assert "foaf/0.1/name" in outcome.transcript[0].prompt

@pytest.mark.parametrize("mode", ["raw", "none"])
def test_execute_triple_modes_bypass_selectors(bundle, candidates, oracle_gateway, mode):
    pair = bundle.gold_links[2]
    config = ApplicationConfig(executor=ExecutorConfig(triples=mode))
    outcome = execute(ToolPath(steps=(A, R, EA)), pair.source, bundle.source_graph, bundle.target_graph,
                      candidates[pair.source], oracle_gateway, config)
    assert outcome.selected_attr == [] and outcome.selected_rel == []
    has_triples = "foaf/0.1/name" in outcome.transcript[0].prompt
    assert has_triples is (mode == "raw")

def test_execute_degrades_to_top_candidate(bundle, candidates):
    """Test that two unusable answers fall back to the top-1 candidate."""
    pair = bundle.gold_links[0]
    gateway = LLMGateway(ScriptedBackend({"align": "I cannot tell."}))
    outcome = execute(ToolPath(steps=(A, EA)), pair.source, bundle.source_graph, bundle.target_graph,
                      candidates[pair.source], gateway, ApplicationConfig())
    assert outcome.degraded
    assert outcome.final_prediction == candidates[pair.source].targets[0]
    assert outcome.transcript[0].attempts == 2
    assert len(gateway.ledger) == 2

def test_execute_retries_once_with_answer_note(bundle, candidates):
    pair = bundle.gold_links[0]
    second = candidates[pair.source].targets[1]
    gateway = LLMGateway(ScriptedBackend({"align": ["[http://elsewhere/x]", f"[{second}]"]}))
    outcome = execute(ToolPath(steps=(A, EA)), pair.source, bundle.source_graph, bundle.target_graph,
                      candidates[pair.source], gateway, ApplicationConfig())
    assert outcome.final_prediction == second
    assert outcome.transcript[0].attempts == 2
    assert not outcome.degraded

def test_execute_empty_candidates(bundle, oracle_gateway):
    source = bundle.gold_links[0].source
    with pytest.raises(EmptyCandidates):
        execute(ToolPath(steps=(A, EA)), source, bundle.source_graph, bundle.target_graph,
                CandidateSet(source=source), oracle_gateway, ApplicationConfig())

def test_outcome_final_prediction_must_follow_refinement():
    with pytest.raises(ValueError):
        AlignmentOutcome(source="s", path=ToolPath(steps=(A, EA, REF)), initial_prediction="t:1",
                         refined_prediction="t:2", final_prediction="t:1")

def test_plan_and_execute_adds_planning(bundle, candidates, oracle_gateway):
    pair = bundle.gold_links[0]
    observation = observe(bundle.source_graph, pair.source, candidates[pair.source], ["name"])
    ticks = iter(range(100))
    outcome = plan_and_execute(RuleBasedPolicy(), observation, bundle.source_graph, bundle.target_graph,
                               candidates[pair.source], oracle_gateway, ApplicationConfig(),
                               clock=lambda: float(next(ticks)))
    assert outcome.path.has_reflector
    assert outcome.planning_seconds == 1.0
    assert outcome.alignment_seconds == 1.0

# Test cases for map_entities
def test_map_entities_isolates_failures():
    """Test that a failing entity is reported while the others finish."""
    def work(entity):
        if entity == "s:2":
            raise MissingGold(entity)
        return entity.upper()

    results, failures = map_entities(work, ["s:3", "s:1", "s:2", "s:1"], max_workers=3)
    assert results == {"s:1": "S:1", "s:3": "S:3"}
    assert [(f.entity, f.exit_code) for f in failures] == [("s:2", 2)]

def test_map_entities_stops_on_budget():
    def work(entity):
        raise BudgetExceeded(10, 10)

    with pytest.raises(BudgetExceeded):
        map_entities(work, ["s:1", "s:2"])
