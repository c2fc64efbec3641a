import math
import random
import pytest
from hypothesis import given, strategies as st
from modules.errors import EmptyGraph, UnknownAttribute, UnknownEntity
from modules.graph_engine import AttributeTriple, RelationTriple, build_graph
from modules.schema import SelectionConfig
from modules.triple_selection import (
    attribute_entropy, candidate_value_distribution, entity_profile, relation_score,
    select_attribute_triples, select_relation_triples,
)

NAME = "http://x.org/name"
LABEL = "http://www.w3.org/2000/01/rdf-schema#label"


# Test cases for attribute_entropy
def test_attribute_entropy_values():
    """Test entropy of uniform and skewed distributions in both log bases."""
    scope = {"a": {"x": 1, "y": 1}, "b": {"x": 3}, "c": {"x": 1, "y": 3}}
    assert attribute_entropy(scope, "a") == pytest.approx(math.log(2))
    assert attribute_entropy(scope, "a", "2") == pytest.approx(1.0)
    assert attribute_entropy(scope, "b") == 0.0
    assert attribute_entropy(scope, "c") == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)))

def test_attribute_entropy_unknown_attribute():
    with pytest.raises(UnknownAttribute):
        attribute_entropy({"a": {"x": 1}}, "b")

@given(st.lists(st.integers(min_value=1, max_value=50), min_size=1, max_size=12))
def test_attribute_entropy_bounds(counts):
    """Test that entropy lies between 0 and the log of the number of values."""
    scope = {"a": {f"v{i}": c for i, c in enumerate(counts)}}
    h = attribute_entropy(scope, "a")
    assert 0.0 <= h <= math.log(len(counts)) + 1e-9

@given(st.lists(st.integers(min_value=1, max_value=20), min_size=1, max_size=8), st.randoms())
def test_attribute_entropy_ignores_value_order(counts, rnd):
    """Test that permuting the value table leaves the entropy bit-identical."""
    shuffled = list(counts)
    rnd.shuffle(shuffled)
    a = {"a": {f"v{i}": c for i, c in enumerate(counts)}}
    b = {"a": {f"w{i}": c for i, c in enumerate(shuffled)}}
    assert attribute_entropy(a, "a") == attribute_entropy(b, "a")

def test_candidate_value_distribution_skips_unknown_entities():
    graph = build_graph([AttributeTriple("e:1", "a", "x"), AttributeTriple("e:2", "a", "y"),
                         AttributeTriple("e:3", "a", "y")], [])
    assert candidate_value_distribution(graph, ["e:1", "e:2", "e:zz"]) == {"a": {"x": 1, "y": 1}}

# Test cases for select_attribute_triples
def test_select_attribute_triples_prefers_low_entropy():
    """Test that whitelisted triples come first and low-entropy ones fill the rest."""
    attrs = [AttributeTriple("e:0", NAME, "Zero"), AttributeTriple("e:0", "p:country", "FR"),
             AttributeTriple("e:0", "p:id", "0")]
    for i in range(1, 5):
        attrs += [AttributeTriple(f"e:{i}", "p:country", "FR"), AttributeTriple(f"e:{i}", "p:id", str(i))]
    graph = build_graph(attrs, [])
    selected = select_attribute_triples(graph, "e:0", [], SelectionConfig(max_triples=2))
    assert selected == [AttributeTriple("e:0", NAME, "Zero"), AttributeTriple("e:0", "p:country", "FR")]
    high = select_attribute_triples(graph, "e:0", [], SelectionConfig(max_triples=2, prefer_low_entropy=False))
    assert high[1] == AttributeTriple("e:0", "p:id", "0")

def test_select_attribute_triples_whitelist_overrides_cap():
    """Test that six whitelisted triples are all kept under a cap of five."""
    attrs = [AttributeTriple("e:0", NAME, f"n{i}") for i in range(3)]
    attrs += [AttributeTriple("e:0", LABEL, f"l{i}") for i in range(3)]
    attrs.append(AttributeTriple("e:0", "p:other", "v"))
    graph = build_graph(attrs, [])
    selected = select_attribute_triples(graph, "e:0", [], SelectionConfig(max_triples=5))
    assert len(selected) == 6
    assert all(t.attribute in (NAME, LABEL) for t in selected)

def test_select_attribute_triples_without_attributes():
    graph = build_graph([], [RelationTriple("e:0", "r", "e:1")])
    assert select_attribute_triples(graph, "e:0", [], SelectionConfig()) == []
    with pytest.raises(UnknownEntity):
        select_attribute_triples(graph, "e:9", [], SelectionConfig())

def test_select_attribute_triples_candidate_scope():
    """Test that the candidate_set scope measures entropy among the candidates only."""
    attrs = [AttributeTriple("e:0", "p:a", "x"), AttributeTriple("e:0", "p:b", "x"),
             AttributeTriple("e:1", "p:a", "y"), AttributeTriple("e:1", "p:b", "x")]
    # outside the candidate set p:b varies, inside it p:a does
    attrs += [AttributeTriple(f"e:{i}", "p:b", f"z{i}") for i in range(2, 9)]
    graph = build_graph(attrs, [])
    whole = select_attribute_triples(graph, "e:0", [], SelectionConfig(max_triples=1))
    local = select_attribute_triples(graph, "e:0", ["e:1"],
                                     SelectionConfig(max_triples=1, entropy_scope="candidate_set"))
    assert whole == [AttributeTriple("e:0", "p:a", "x")]
    assert local == [AttributeTriple("e:0", "p:b", "x")]

# Test cases for relation_score and select_relation_triples
def test_relation_score():
    graph = build_graph([], [RelationTriple("e:0", "r:a", "e:1"), RelationTriple("e:1", "r:a", "e:2"),
                             RelationTriple("e:2", "r:b", "e:0")])
    assert relation_score(graph, "r:a") == pytest.approx(math.log(3 / 3))
    assert relation_score(graph, "r:b") == pytest.approx(math.log(3 / 2))
    assert relation_score(graph, "r:unknown") == pytest.approx(math.log(3))
    with pytest.raises(EmptyGraph):
        relation_score(build_graph([], []), "r:a")

def test_select_relation_triples_keeps_rarest():
    """Test that eight triples are cut to the five with the rarest relations."""
    rels = [RelationTriple("e:0", f"r:{i}", f"e:{i + 1}") for i in range(8)]
    rels += [RelationTriple(f"e:{i}", "r:0", f"e:{i + 20}") for i in range(30, 40)]
    rels += [RelationTriple(f"e:{i}", "r:1", f"e:{i + 20}") for i in range(30, 35)]
    graph = build_graph([], rels)
    selected = select_relation_triples(graph, "e:0", SelectionConfig(max_triples=5))
    assert [t.relation for t in selected] == ["r:2", "r:3", "r:4", "r:5", "r:6"]

def test_select_relation_triples_isolated_entity():
    graph = build_graph([AttributeTriple("e:0", "p:a", "x")], [RelationTriple("e:1", "r", "e:2")])
    assert select_relation_triples(graph, "e:0", SelectionConfig()) == []

def test_entity_profile(bundle):
    entity = bundle.gold_links[0].source
    profile = entity_profile(bundle.source_graph, entity, SelectionConfig())
    assert set(profile) == {"entropies", "relation_scores"}
    assert len(profile["entropies"]) == 3
    assert all(v >= 0.0 for v in profile["entropies"].values())

# Brute-force oracle
def _oracle_entropy(counts):
    total = sum(counts)
    h = -sum((c / total) * math.log(c / total) for c in sorted(counts))
    return max(h, 0.0)


def _oracle_attributes(triples, entity, population, config):
    mine = sorted({t for t in triples if t.entity == entity})
    whitelisted = [t for t in mine if t.attribute == NAME]
    rest = [t for t in mine if t.attribute != NAME]
    scope_triples = [t for t in set(triples) if population is None or t.entity in population]
    sign = 1.0 if config.prefer_low_entropy else -1.0

    def entropy(attribute):
        counts = {}
        for t in scope_triples:
            if t.attribute == attribute:
                counts[t.value] = counts.get(t.value, 0) + 1
        return _oracle_entropy(list(counts.values()))

    rest.sort(key=lambda t: (sign * entropy(t.attribute), t.attribute, t.value))
    return whitelisted + rest[:max(0, config.max_triples - len(whitelisted))]


def _oracle_relations(triples, entity, max_triples):
    distinct = set(triples)
    n = len(distinct)
    freq = {}
    for t in distinct:
        freq[t.relation] = freq.get(t.relation, 0) + 1
    mine = [t for t in distinct if entity in (t.head, t.tail)]

    def key(t):
        other = t.tail if t.head == entity else t.head
        return -math.log(n / (freq[t.relation] + 1)), t.relation, other, t.head, t.tail

    return sorted(mine, key=key)[:max_triples]


def test_selectors_match_brute_force_oracle():
    """Test both selectors against a full-sort oracle on 1,000 random graphs."""
    for seed in range(1000):
        rng = random.Random(seed)
        n_entities = rng.randint(1, 8)
        entities = [f"e:{i}" for i in range(n_entities)]
        attributes = [NAME] + [f"p:a{i}" for i in range(rng.randint(1, 5))]
        n_attr = rng.randint(0, 120)
        attrs = [AttributeTriple(rng.choice(entities), rng.choice(attributes), f"v{rng.randint(0, 3)}")
                 for _ in range(n_attr)]
        rels = [RelationTriple(rng.choice(entities), f"r:{rng.randint(0, 4)}", rng.choice(entities))
                for _ in range(rng.randint(1, 200 - n_attr))]
        graph = build_graph(attrs, rels)
        config = SelectionConfig(max_triples=rng.randint(1, 6), prefer_low_entropy=rng.random() < 0.8,
                                 important_attributes=["name"],
                                 entropy_scope=rng.choice(["whole_graph", "candidate_set"]))
        entity = rng.choice(entities)
        if not graph.has_entity(entity):
            continue
        candidates = rng.sample(entities, rng.randint(0, n_entities))
        population = None
        if config.entropy_scope == "candidate_set" and candidates:
            population = set(candidates) | {entity}

        assert select_attribute_triples(graph, entity, candidates, config) == \
            _oracle_attributes(attrs, entity, population, config), f"attributes, seed {seed}"
        assert select_relation_triples(graph, entity, config) == \
            _oracle_relations(rels, entity, config.max_triples), f"relations, seed {seed}"
