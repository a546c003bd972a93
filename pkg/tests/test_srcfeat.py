import pytest

from instmeter.cfgcore import extract_loops
from instmeter.srcfeat import SourceError, extract_src_semantics, parse_src_cfg, statement_features

DOC = {
    "name": "k",
    "entry": 0,
    "nodes": [{"id": 0, "text": ["i = 0;"]}, {"id": 1, "text": ["i < n"]}],
    "edges": [{"from": 0, "to": 1}],
}


def test_minimal_document():
    fn = parse_src_cfg(DOC)
    assert fn.name == "k"
    assert fn.cfg.node_ids == [0, 1]


def test_schema_errors():
    bad = {k: v for k, v in DOC.items() if k != "entry"}
    with pytest.raises(SourceError, match="entry"):
        parse_src_cfg(bad)
    with pytest.raises(SourceError, match="missing node 7"):
        parse_src_cfg({**DOC, "trip_exprs": {"7": "n"}})
    with pytest.raises(SourceError, match="name"):
        parse_src_cfg({**DOC, "name": ""})
    with pytest.raises(SourceError, match="trip expression"):
        parse_src_cfg({**DOC, "trip_exprs": {"1": "n +"}})


def test_for_header_features():
    f = statement_features("for (b = 0; b < output.Dims; b++)")
    assert set(f.variable_names) == {"b", "output.Dims"}
    assert f.comparators == {"<": 1}
    assert f.integers == {0: 1}
    assert not f.function_names


def test_memset_call():
    f = statement_features("memset(buf, 0, n);")
    assert f.function_names == {"memset": 1}
    assert f.integers == {0: 1}
    assert set(f.variable_names) == {"buf", "n"}


def test_empty():
    assert statement_features("").is_empty()


def test_maximal_munch_and_logical_ops_skipped():
    f = statement_features("if (a <= b && c >> 2 != d || e & 0x10) x <<= 1;")
    assert f.comparators == {"<=": 1, ">>": 1, "!=": 1, "&": 1, "<<": 1}
    assert f.integers == {2: 1, 16: 1, 1: 1}


def test_keywords_and_strings_ignored():
    f = statement_features('int32_t x = (int)y; printf("a < b %d", 3);')
    assert "int32_t" not in f.variable_names and "int" not in f.variable_names
    assert f.comparators == {}
    assert f.function_names == {"printf": 1}


def test_loop_features_from_cfg():
    doc = {
        "name": "k",
        "entry": 0,
        "nodes": [
            {"id": 0, "text": ["i = 0;"]},
            {"id": 1, "text": ["i < n"]},
            {"id": 2, "text": ["acc += w[i] >> 3;", "i++;"]},
            {"id": 3, "text": ["return acc;"]},
        ],
        "edges": [{"from": 0, "to": 1}, {"from": 1, "to": 2}, {"from": 2, "to": 1}, {"from": 1, "to": 3}],
        "trip_exprs": {"1": "n"},
    }
    fn = parse_src_cfg(doc)
    (loop,) = extract_loops(fn.cfg)
    f = extract_src_semantics(loop, fn)
    assert f.comparators == {"<": 1, ">>": 1}
    assert f.integers == {3: 1}
    assert fn.loop_trip_vars == {1: "n"}
