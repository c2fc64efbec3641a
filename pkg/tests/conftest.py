import sys
import os
import pytest

# Add the 'src' directory to sys.path so that modules can be imported directly
# as if 'src' were the root of the project.
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

FR = "http://fr.dbpedia.org/resource/"
EN = "http://dbpedia.org/resource/"
FOAF_NAME = "http://xmlns.com/foaf/0.1/name"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: large inputs, deselect with -m 'not slow'")


@pytest.fixture(scope="session")
def app_config():
    """
    Fixture to load the application configuration.
    This can be used by tests that need access to the config.
    """
    from modules.config import load_config
    config = load_config()
    if not config:
        pytest.fail("Failed to load application configuration.")
    return config


def synthetic_triples(n: int = 50):
    """
    A small bilingual pair of graphs. Source entity ``Entite_NN`` is linked to
    target ``Entity_NN``; by local-name similarity the gold target is always the
    unique best candidate and the runner-up is close behind.
    """
    countries_fr = ["France", "Belgique", "Suisse"]
    countries_en = ["France", "Belgium", "Switzerland"]
    attr1, rel1, attr2, rel2, links = [], [], [], [], []
    for i in range(n):
        s, t = f"{FR}Entite_{i:02d}", f"{EN}Entity_{i:02d}"
        attr1 += [(s, FOAF_NAME, f"Entité {i}"),
                  (s, "http://fr.dbpedia.org/property/population", str(1000 + 7 * i)),
                  (s, "http://fr.dbpedia.org/property/pays", countries_fr[i % 3])]
        attr2 += [(t, FOAF_NAME, f"Entity {i}"),
                  (t, "http://dbpedia.org/ontology/populationTotal", str(1000 + 7 * i)),
                  (t, "http://dbpedia.org/ontology/country", countries_en[i % 3])]
        rel1.append((s, "http://fr.dbpedia.org/property/voisin", f"{FR}Entite_{(i + 1) % n:02d}"))
        rel2.append((t, "http://dbpedia.org/ontology/neighbour", f"{EN}Entity_{(i + 1) % n:02d}"))
        if i % 5 == 0:
            rel1.append((s, "http://fr.dbpedia.org/property/jumelage", f"{FR}Entite_{(i + 7) % n:02d}"))
            rel2.append((t, "http://dbpedia.org/ontology/twinCity", f"{EN}Entity_{(i + 7) % n:02d}"))
        links.append((s, t))
    return {"attr1": attr1, "rel1": rel1, "attr2": attr2, "rel2": rel2, "links": links}


@pytest.fixture
def dataset_files(tmp_path):
    """
    Writes the synthetic dataset as the five TSV input files.
    """
    paths = {}
    for key, rows in synthetic_triples().items():
        path = tmp_path / f"{key}.tsv"
        path.write_text("".join("\t".join(row) + "\n" for row in rows), encoding="utf-8")
        paths[key] = str(path)
    return paths


@pytest.fixture
def bundle(dataset_files):
    from modules.file_manager import FileManager
    return FileManager().ingest(**dataset_files, train_ratio=0.3, seed=42)


@pytest.fixture
def candidates(bundle):
    from modules.candidate_engine import retrieve_candidates
    from modules.schema import RetrievalConfig
    return retrieve_candidates(bundle.source_graph, bundle.target_graph,
                               [p.source for p in bundle.gold_links], RetrievalConfig())


@pytest.fixture
def zero_clock():
    return lambda: 0.0
