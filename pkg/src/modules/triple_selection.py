"""
Entropy-based attribute selection and rarity-based relation selection.
"""

import math
from collections import Counter, defaultdict
from typing import Iterable, Mapping
import numpy as np
from loguru import logger

from modules.errors import EmptyGraph, UnknownAttribute
from modules.graph_engine import AttributeTriple, KnowledgeGraph, RelationTriple, is_name_attribute
from modules.schema import SelectionConfig

ValueDistribution = Mapping[str, Mapping[str, int]]

_LOG_BASES = {"e": math.e, "2": 2.0}


def attribute_entropy(scope: ValueDistribution, attribute: str, log_base: str = "e") -> float:
    """
    Shannon entropy of an attribute's value distribution.

    :param scope: Attribute -> value -> count, either a whole graph's
        ``attr_value_dist`` or one built by :func:`candidate_value_distribution`.
    :type scope: Mapping[str, Mapping[str, int]]
    :param attribute: The attribute IRI.
    :type attribute: str
    :param log_base: ``"e"`` or ``"2"``.
    :type log_base: str
    :return: ``-sum(p * log p)``, never negative.
    :rtype: float
    :raises UnknownAttribute: If the attribute does not occur in the scope.
    """
    values = scope.get(attribute)
    if not values:
        raise UnknownAttribute(attribute)
    # sorted so equal distributions give bit-identical entropies
    counts = np.sort(np.fromiter(values.values(), dtype=np.float64, count=len(values)))
    p = counts / counts.sum()
    h = float(-(p * np.log(p)).sum())
    if log_base != "e":
        h /= math.log(_LOG_BASES[log_base])
    return h if h > 0.0 else 0.0


def candidate_value_distribution(graph: KnowledgeGraph, population: Iterable[str]) -> dict[str, dict[str, int]]:
    """
    Value distribution of every attribute restricted to a set of entities.
    Entities absent from the graph contribute nothing.
    """
    dist: dict[str, Counter] = defaultdict(Counter)
    for entity in set(population):
        for triple in graph.attr_index.get(entity, ()):
            dist[triple.attribute][triple.value] += 1
    return {a: dict(c) for a, c in dist.items()}


def _scope_for(graph: KnowledgeGraph, entity: str, candidates: Iterable[str], config: SelectionConfig) -> ValueDistribution:
    candidates = tuple(candidates)
    if config.entropy_scope == "candidate_set" and candidates:
        return candidate_value_distribution(graph, (*candidates, entity))
    return graph.attr_value_dist


def select_attribute_triples(graph: KnowledgeGraph, entity: str, candidates: Iterable[str],
                             config: SelectionConfig) -> list[AttributeTriple]:
    """
    Keeps every whitelisted attribute triple, then fills the remaining slots
    up to ``max_triples`` with the most discriminative other triples.

    Whitelisted triples come first in (attribute, value) order. The others are
    ranked by entropy (ascending unless ``prefer_low_entropy`` is off), then
    attribute, then value. Entropy is measured over the whole graph, or over
    ``candidates`` plus the entity itself when the scope is ``candidate_set``.

    :param graph: Graph holding the entity.
    :type graph: KnowledgeGraph
    :param entity: Entity whose triples are filtered.
    :type entity: str
    :param candidates: Population for the ``candidate_set`` scope; may be empty.
    :type candidates: Iterable[str]
    :param config: Selector settings.
    :type config: SelectionConfig
    :return: The selected triples.
    :rtype: list[AttributeTriple]
    :raises UnknownEntity: If the entity is not in the graph.
    """
    triples = graph.attributes_of(entity)
    whitelist = [t for t in triples if is_name_attribute(t.attribute, config.important_attributes)]
    others = [t for t in triples if not is_name_attribute(t.attribute, config.important_attributes)]
    whitelist.sort(key=lambda t: (t.attribute, t.value))

    slots = max(0, config.max_triples - len(whitelist))
    if slots == 0 or not others:
        return whitelist

    scope = _scope_for(graph, entity, candidates, config)
    sign = 1.0 if config.prefer_low_entropy else -1.0
    entropy = {a: attribute_entropy(scope, a, config.log_base) for a in {t.attribute for t in others}}
    others.sort(key=lambda t: (sign * entropy[t.attribute], t.attribute, t.value))
    return whitelist + others[:slots]


def relation_score(graph: KnowledgeGraph, relation: str) -> float:
    """
    Rarity score ``ln(N / (freq + 1))`` of a relation, ``N`` being the number of
    relation triples in the graph. Unknown relations count as frequency 0.

    :raises EmptyGraph: If the graph has no relation triples.
    """
    total = graph.total_relation_triples
    if total == 0:
        raise EmptyGraph()
    return math.log(total / (graph.relation_freq.get(relation, 0) + 1))


def select_relation_triples(graph: KnowledgeGraph, entity: str, config: SelectionConfig) -> list[RelationTriple]:
    """
    Ranks the entity's outgoing and incoming relation triples by descending
    relation score and keeps the top ``max_triples``. Ties fall back to the
    relation IRI, then the other endpoint.

    :raises UnknownEntity: If the entity is not in the graph.
    """
    triples = graph.relations_of(entity)
    if not triples:
        return []
    scores = {r: relation_score(graph, r) for r in {t.relation for t in triples}}

    def rank(t: RelationTriple):
        other = t.tail if t.head == entity else t.head
        return -scores[t.relation], t.relation, other, t.head, t.tail

    return sorted(triples, key=rank)[:config.max_triples]


def entity_profile(graph: KnowledgeGraph, entity: str, config: SelectionConfig) -> dict:
    """
    Entropies of the entity's attributes and scores of its relations, for inspection.
    """
    attrs = graph.attributes_of(entity)
    rels = graph.relations_of(entity)
    profile = {
        "entropies": {a: attribute_entropy(graph.attr_value_dist, a, config.log_base)
                      for a in sorted({t.attribute for t in attrs})},
        "relation_scores": {r: relation_score(graph, r) for r in sorted({t.relation for t in rels})},
    }
    logger.debug(f"Profiled {entity}: {len(profile['entropies'])} attributes, {len(profile['relation_scores'])} relations")
    return profile
