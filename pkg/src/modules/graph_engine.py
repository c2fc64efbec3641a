"""
Indexed, read-only knowledge graph store and per-entity statistics.
"""

from collections import Counter, defaultdict
from types import MappingProxyType
from typing import Annotated, Iterable, Mapping, NamedTuple
from urllib.parse import unquote
from loguru import logger
from pydantic import AfterValidator, BaseModel, Field, model_validator
from modules.errors import InvalidIri, UnknownEntity


def validate_iri(value: str) -> str:
    """
    Checks that a value can serve as an entity, relation or attribute identifier.

    :param value: The candidate identifier.
    :type value: str
    :return: The unchanged value.
    :rtype: str
    :raises InvalidIri: If the value is empty or contains a tab or newline.
    """
    if not value or "\t" in value or "\n" in value or "\r" in value:
        raise InvalidIri(value)
    return value


Iri = Annotated[str, AfterValidator(validate_iri)]


class AttributeTriple(NamedTuple):
    entity: str
    attribute: str
    value: str


class RelationTriple(NamedTuple):
    head: str
    relation: str
    tail: str


class AlignmentPair(NamedTuple):
    source: str
    target: str


class EntityStatistics(BaseModel):
    """
    Structural statistics of one entity, as shown to the path planner.
    """
    attr_cnt_all: int = Field(ge=0)
    attr_cnt: int = Field(ge=0)
    rel_cnt_all: int = Field(ge=0)
    rel_cnt: int = Field(ge=0)
    signal_attr: bool

    @model_validator(mode="after")
    def _check_counts(self):
        if self.attr_cnt > self.attr_cnt_all or self.rel_cnt > self.rel_cnt_all:
            raise ValueError("distinct type counts cannot exceed triple counts")
        return self


def local_name(iri: str) -> str:
    """
    Returns the part of an IRI after its last '/' or '#', percent-decoded.
    The whole value is used when there is no separator or nothing follows it.

    :param iri: The identifier.
    :type iri: str
    :return: The decoded local name.
    :rtype: str
    """
    cut = max(iri.rfind("/"), iri.rfind("#"))
    tail = iri[cut + 1:] if cut >= 0 else iri
    return unquote(tail or iri)


def is_name_attribute(attribute: str, whitelist: Iterable[str]) -> bool:
    """
    Tells whether an attribute is whitelisted. Entries match the full IRI, the
    local name, or (when they contain '/' or '#') a suffix of the IRI.
    """
    name = local_name(attribute)
    for entry in whitelist:
        if attribute == entry or name == entry:
            return True
        if ("/" in entry or "#" in entry) and attribute.endswith(entry):
            return True
    return False


class KnowledgeGraph:
    """
    Immutable store of attribute and relation triples with lookup indices and
    frequency tables. Duplicate triples are dropped at build time; the first
    occurrence fixes the order used by every index.
    """
    def __init__(self, attribute_triples: Iterable[AttributeTriple], relation_triples: Iterable[RelationTriple]):
        """
        Builds all indices. Use :func:`build_graph` rather than calling this directly.

        :param attribute_triples: (entity, attribute, value) triples.
        :type attribute_triples: Iterable[AttributeTriple]
        :param relation_triples: (head, relation, tail) triples.
        :type relation_triples: Iterable[RelationTriple]
        """
        attrs = tuple(dict.fromkeys(AttributeTriple(*t) for t in attribute_triples))
        rels = tuple(dict.fromkeys(RelationTriple(*t) for t in relation_triples))

        entities: set[str] = set()
        attr_index: dict[str, list[AttributeTriple]] = defaultdict(list)
        out_index: dict[str, list[RelationTriple]] = defaultdict(list)
        in_index: dict[str, list[RelationTriple]] = defaultdict(list)
        value_dist: dict[str, Counter] = defaultdict(Counter)
        relation_freq: Counter = Counter()

        for triple in attrs:
            entities.add(triple.entity)
            attr_index[triple.entity].append(triple)
            value_dist[triple.attribute][triple.value] += 1
        for triple in rels:
            entities.add(triple.head)
            entities.add(triple.tail)
            out_index[triple.head].append(triple)
            in_index[triple.tail].append(triple)
            relation_freq[triple.relation] += 1

        self._entities = frozenset(entities)
        self._attribute_triples = attrs
        self._relation_triples = rels
        self._attr_index = MappingProxyType({e: tuple(ts) for e, ts in attr_index.items()})
        self._rel_out_index = MappingProxyType({e: tuple(ts) for e, ts in out_index.items()})
        self._rel_in_index = MappingProxyType({e: tuple(ts) for e, ts in in_index.items()})
        self._relation_freq = MappingProxyType(dict(relation_freq))
        self._attr_value_dist = MappingProxyType({a: MappingProxyType(dict(c)) for a, c in value_dist.items()})
        self._total_relation_triples = len(rels)

    @property
    def entities(self) -> frozenset[str]:
        return self._entities

    @property
    def attribute_triples(self) -> tuple[AttributeTriple, ...]:
        return self._attribute_triples

    @property
    def relation_triples(self) -> tuple[RelationTriple, ...]:
        return self._relation_triples

    @property
    def attr_index(self) -> Mapping[str, tuple[AttributeTriple, ...]]:
        return self._attr_index

    @property
    def rel_out_index(self) -> Mapping[str, tuple[RelationTriple, ...]]:
        return self._rel_out_index

    @property
    def rel_in_index(self) -> Mapping[str, tuple[RelationTriple, ...]]:
        return self._rel_in_index

    @property
    def relation_freq(self) -> Mapping[str, int]:
        return self._relation_freq

    @property
    def attr_value_dist(self) -> Mapping[str, Mapping[str, int]]:
        return self._attr_value_dist

    @property
    def total_relation_triples(self) -> int:
        return self._total_relation_triples

    def has_entity(self, entity: str) -> bool:
        return entity in self._entities

    def require(self, entity: str) -> None:
        """
        :raises UnknownEntity: If the entity is not part of this graph.
        """
        if entity not in self._entities:
            raise UnknownEntity(entity)

    def attributes_of(self, entity: str) -> tuple[AttributeTriple, ...]:
        self.require(entity)
        return self._attr_index.get(entity, ())

    def outgoing(self, entity: str) -> tuple[RelationTriple, ...]:
        self.require(entity)
        return self._rel_out_index.get(entity, ())

    def incoming(self, entity: str) -> tuple[RelationTriple, ...]:
        self.require(entity)
        return self._rel_in_index.get(entity, ())

    def relations_of(self, entity: str) -> tuple[RelationTriple, ...]:
        """
        Outgoing then incoming triples of an entity; a self-loop is listed once.
        """
        out = self.outgoing(entity)
        return out + tuple(t for t in self.incoming(entity) if t.head != entity)

    def __len__(self) -> int:
        return len(self._entities)

    def __repr__(self) -> str:
        return (f"KnowledgeGraph(entities={len(self._entities)}, "
                f"attribute_triples={len(self._attribute_triples)}, "
                f"relation_triples={self._total_relation_triples})")


def build_graph(attribute_triples: Iterable[AttributeTriple], relation_triples: Iterable[RelationTriple]) -> KnowledgeGraph:
    """
    Builds an immutable knowledge graph; the entity set is the union of heads,
    tails and attribute subjects.

    :return: The indexed graph.
    :rtype: KnowledgeGraph
    """
    graph = KnowledgeGraph(attribute_triples, relation_triples)
    logger.debug(f"Built {graph!r}")
    return graph


def entity_statistics(graph: KnowledgeGraph, entity: str, name_attribute_whitelist: Iterable[str]) -> EntityStatistics:
    """
    Counts an entity's attribute and relation triples (incoming and outgoing) and
    their distinct types, and flags whether it carries a whitelisted name attribute.

    :raises UnknownEntity: If the entity is not in the graph.
    """
    attrs = graph.attributes_of(entity)
    out, inc = graph.outgoing(entity), graph.incoming(entity)
    whitelist = tuple(name_attribute_whitelist)
    return EntityStatistics(
        attr_cnt_all=len(attrs),
        attr_cnt=len({t.attribute for t in attrs}),
        rel_cnt_all=len(out) + len(inc),
        rel_cnt=len({t.relation for t in out} | {t.relation for t in inc}),
        signal_attr=any(is_name_attribute(t.attribute, whitelist) for t in attrs),
    )
