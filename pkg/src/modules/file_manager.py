from __future__ import annotations
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator
from loguru import logger

from modules.errors import (
    BundleError, DuplicateSource, EmptyLinks, InvalidEncoding, InvalidIri, InvalidRatio, MalformedLine,
)
from modules.graph_engine import AlignmentPair, AttributeTriple, KnowledgeGraph, RelationTriple, build_graph, validate_iri
from utils.helpers import sha256_file


def _lines(stream: Iterable[str | bytes]) -> Iterator[tuple[int, str]]:
    """
    Yields ``(line_no, line)`` for every content line, decoding bytes as strict UTF-8.
    Blank lines and lines starting with '#' are skipped.
    """
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise InvalidEncoding(line_no) from None
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        yield line_no, line


def _iri(value: str, line_no: int) -> str:
    try:
        return validate_iri(value)
    except InvalidIri:
        raise MalformedLine(line_no, "empty identifier") from None


def parse_attribute_triples(stream: Iterable[str | bytes]) -> list[AttributeTriple]:
    """
    Parses ``entity<TAB>attribute<TAB>value`` lines. Extra tabs belong to the value.

    :raises MalformedLine: When a line has fewer than three fields.
    :raises InvalidEncoding: When a byte line is not valid UTF-8.
    """
    triples = []
    for line_no, line in _lines(stream):
        parts = line.split("\t")
        if len(parts) < 3:
            raise MalformedLine(line_no, f"expected at least 3 fields, got {len(parts)}")
        triples.append(AttributeTriple(_iri(parts[0], line_no), _iri(parts[1], line_no), "\t".join(parts[2:])))
    return triples


def parse_relation_triples(stream: Iterable[str | bytes]) -> list[RelationTriple]:
    """
    Parses ``head<TAB>relation<TAB>tail`` lines.

    :raises MalformedLine: When a line does not have exactly three fields.
    """
    triples = []
    for line_no, line in _lines(stream):
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLine(line_no, f"expected 3 fields, got {len(parts)}")
        triples.append(RelationTriple(*(_iri(p, line_no) for p in parts)))
    return triples


def parse_entity_links(stream: Iterable[str | bytes]) -> list[AlignmentPair]:
    """
    Parses ``source<TAB>target`` gold links in file order.

    :raises MalformedLine: When a line does not have exactly two fields.
    :raises DuplicateSource: When a source IRI is linked twice.
    """
    pairs = []
    seen: set[str] = set()
    for line_no, line in _lines(stream):
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedLine(line_no, f"expected 2 fields, got {len(parts)}")
        source, target = (_iri(p, line_no) for p in parts)
        if source in seen:
            raise DuplicateSource(source, line_no)
        seen.add(source)
        pairs.append(AlignmentPair(source, target))
    return pairs


def format_triples(triples: Iterable[tuple[str, ...]]) -> Iterator[str]:
    """
    Renders triples or links back to TSV lines (newline included).
    """
    for triple in triples:
        yield "\t".join(triple) + "\n"


def split_links(links: list[AlignmentPair], train_ratio: float, seed: int) -> tuple[list[AlignmentPair], list[AlignmentPair]]:
    """
    Deterministically shuffles the gold links under ``seed`` and cuts them into
    a training and a test part.

    :param links: Gold alignment pairs.
    :type links: list[AlignmentPair]
    :param train_ratio: Share of pairs used for training, strictly between 0 and 1.
    :type train_ratio: float
    :param seed: Shuffle seed.
    :type seed: int
    :return: ``(train, test)`` with ``len(train) == round(train_ratio * len(links))``.
    :rtype: tuple[list[AlignmentPair], list[AlignmentPair]]
    :raises EmptyLinks: If there are no links.
    :raises InvalidRatio: If the ratio is outside (0, 1).
    """
    if not 0.0 < train_ratio < 1.0:
        raise InvalidRatio(train_ratio)
    if not links:
        raise EmptyLinks()
    shuffled = list(links)
    random.Random(seed).shuffle(shuffled)
    n_train = round(train_ratio * len(shuffled))
    return shuffled[:n_train], shuffled[n_train:]


@dataclass
class DatasetBundle:
    """
    Two graphs, their gold links and the train/test split of those links.
    """
    source_graph: KnowledgeGraph
    target_graph: KnowledgeGraph
    gold_links: list[AlignmentPair]
    train_links: list[AlignmentPair]
    test_links: list[AlignmentPair]
    seed: int = 0
    train_ratio: float = 0.3
    sources: dict[str, str] = field(default_factory=dict)

    @property
    def gold_map(self) -> dict[str, str]:
        return {pair.source: pair.target for pair in self.gold_links}


class FileManager:
    """
    Manages dataset files: reading the TSV inputs, and saving and loading
    validated bundles (a JSON manifest plus the split link files).
    """

    FORMAT = "alignpilot-bundle"
    VERSION = 1
    MANIFEST = "manifest.json"
    TRAIN_FILE = "train_links.tsv"
    TEST_FILE = "test_links.tsv"
    INPUT_KEYS = ("attr1", "rel1", "attr2", "rel2", "links")

    @staticmethod
    def _parse_file(path: str | Path, parser):
        logger.info(f"Parsing {path}...")
        try:
            with open(path, "rb") as f:
                return parser(f)
        except (MalformedLine, InvalidEncoding, DuplicateSource) as e:
            logger.error(f"Error parsing {path}: {e}")
            raise

    def read_attribute_file(self, path: str | Path) -> list[AttributeTriple]:
        return self._parse_file(path, parse_attribute_triples)

    def read_relation_file(self, path: str | Path) -> list[RelationTriple]:
        return self._parse_file(path, parse_relation_triples)

    def read_links_file(self, path: str | Path) -> list[AlignmentPair]:
        return self._parse_file(path, parse_entity_links)

    def ingest(self, attr1: str, rel1: str, attr2: str, rel2: str, links: str,
               train_ratio: float = 0.3, seed: int = 42) -> DatasetBundle:
        """
        Parses all five input files, builds both graphs and splits the gold links.

        :return: The in-memory bundle.
        :rtype: DatasetBundle
        """
        source_graph = build_graph(self.read_attribute_file(attr1), self.read_relation_file(rel1))
        target_graph = build_graph(self.read_attribute_file(attr2), self.read_relation_file(rel2))
        gold = self.read_links_file(links)
        train, test = split_links(gold, train_ratio, seed)
        logger.info(f"Ingested {source_graph!r} / {target_graph!r}; "
                    f"{len(gold)} gold links split {len(train)}/{len(test)}")
        sources = dict(zip(self.INPUT_KEYS, (attr1, rel1, attr2, rel2, links)))
        return DatasetBundle(source_graph, target_graph, gold, train, test,
                             seed=seed, train_ratio=train_ratio,
                             sources={k: str(Path(v).resolve()) for k, v in sources.items()})

    def save_bundle(self, bundle: DatasetBundle, out_dir: str | Path) -> Path:
        """
        Writes the manifest and the split files of a bundle.

        :return: Path of the written manifest.
        :rtype: Path
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / self.TRAIN_FILE, "w", encoding="utf-8") as f:
            f.writelines(format_triples(bundle.train_links))
        with open(out / self.TEST_FILE, "w", encoding="utf-8") as f:
            f.writelines(format_triples(bundle.test_links))
        manifest = {
            "format": self.FORMAT,
            "version": self.VERSION,
            "seed": bundle.seed,
            "train_ratio": bundle.train_ratio,
            "inputs": bundle.sources,
            "sha256": {k: sha256_file(p) for k, p in bundle.sources.items()},
            "counts": {
                "source_entities": len(bundle.source_graph),
                "source_attribute_triples": len(bundle.source_graph.attribute_triples),
                "source_relation_triples": bundle.source_graph.total_relation_triples,
                "target_entities": len(bundle.target_graph),
                "target_attribute_triples": len(bundle.target_graph.attribute_triples),
                "target_relation_triples": bundle.target_graph.total_relation_triples,
                "gold_links": len(bundle.gold_links),
                "train_links": len(bundle.train_links),
                "test_links": len(bundle.test_links),
            },
        }
        path = out / self.MANIFEST
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
        logger.info(f"Bundle saved to {out}")
        return path

    def load_bundle(self, bundle_dir: str | Path) -> DatasetBundle:
        """
        Loads a bundle written by :meth:`save_bundle`, re-parsing the inputs.

        :raises BundleError: If the manifest is missing, of another format or
            version, or the split files disagree with the gold links.
        """
        bundle_dir = Path(bundle_dir)
        try:
            with open(bundle_dir / self.MANIFEST, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except FileNotFoundError:
            raise BundleError(f"No {self.MANIFEST} in {bundle_dir}") from None
        except json.JSONDecodeError as e:
            raise BundleError(f"Unreadable manifest in {bundle_dir}: {e}") from None
        if manifest.get("format") != self.FORMAT:
            raise BundleError("Not a valid bundle manifest.")
        if manifest.get("version") != self.VERSION:
            raise BundleError(f"Unsupported version: {manifest.get('version')}")

        inputs = manifest["inputs"]
        for key, path in inputs.items():
            expected = manifest.get("sha256", {}).get(key)
            if expected and Path(path).exists() and sha256_file(path) != expected:
                logger.warning(f"{path} changed since the bundle was written")

        source_graph = build_graph(self.read_attribute_file(inputs["attr1"]), self.read_relation_file(inputs["rel1"]))
        target_graph = build_graph(self.read_attribute_file(inputs["attr2"]), self.read_relation_file(inputs["rel2"]))
        gold = self.read_links_file(inputs["links"])
        train = self.read_links_file(bundle_dir / self.TRAIN_FILE)
        test = self.read_links_file(bundle_dir / self.TEST_FILE)
        if set(train) & set(test) or set(train) | set(test) != set(gold):
            raise BundleError("Split files do not partition the gold links")
        logger.info(f"Bundle loaded from {bundle_dir}")
        return DatasetBundle(source_graph, target_graph, gold, train, test,
                             seed=manifest["seed"], train_ratio=manifest["train_ratio"], sources=inputs)
