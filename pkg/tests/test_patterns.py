import pytest
import yaml

from promptsearch.analysis.types import Aspect, Branch, ErrorRecord
from promptsearch.patterns import (
    CATALOG_PATH,
    CountMismatch,
    SchemaError,
    default_catalog,
    load_catalog,
    match_patterns,
    strategy_hints,
)


def test_catalog_has_all_entries():
    cat = default_catalog()
    assert [e.id for e in cat] == list(range(1, 36))
    assert all(e.strategy_text and e.example_pair[0] for e in cat)


def _write(tmp_path, doc):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p


def test_count_mismatch(tmp_path):
    doc = yaml.safe_load(CATALOG_PATH.read_text())
    doc["patterns"] = doc["patterns"][:-1]
    with pytest.raises(CountMismatch):
        load_catalog(_write(tmp_path, doc))


def test_schema_errors(tmp_path):
    doc = yaml.safe_load(CATALOG_PATH.read_text())
    doc["patterns"][0]["categories"] = ["Smell"]
    with pytest.raises(SchemaError):
        load_catalog(_write(tmp_path, doc))
    doc = yaml.safe_load(CATALOG_PATH.read_text())
    del doc["patterns"][3]["strategy"]
    with pytest.raises(SchemaError):
        load_catalog(_write(tmp_path, doc))
    doc = yaml.safe_load(CATALOG_PATH.read_text())
    doc["version"] = 2
    with pytest.raises(SchemaError):
        load_catalog(_write(tmp_path, doc))


def test_count_error_matches_quantity_first():
    err = ErrorRecord(Aspect.NUMBER, "Number of baozi: observed 4, expected 6", Branch.INTEGRATED)
    found = match_patterns(err)
    assert found and found[0].name == "Quantity Errors"
    assert all(Aspect.NUMBER in e.categories for e in found)
    assert strategy_hints(err, limit=1)[0].startswith("Quantity Errors:")


def test_no_keyword_overlap_no_match():
    err = ErrorRecord(Aspect.NUMBER, "zzz qqq", Branch.INTEGRATED)
    assert match_patterns(err) == []
