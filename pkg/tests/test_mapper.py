import json
import random
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

import oracles
from instmeter.cfgcore import RelationGraph, RelationKind
from instmeter.disasm import CpiTable, parse_disasm
from instmeter.features import FeatureBundle
from instmeter.instlib import load_kernel_spec
from instmeter.mapper import (
    FEATURES,
    CandidateMapping,
    LoopCountMismatch,
    SimilarityMatrix,
    StructuralMismatch,
    map_function,
    multiset_jaccard,
    random_weights,
    semantic_score,
    similarity_matrix,
    structural_match,
)
from instmeter.srcfeat import parse_src_cfg

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "instmeter" / "fixtures"
S, I = RelationKind.SUBSET, RelationKind.INTERSECT


def hub(ids):
    a, b, c = ids
    return RelationGraph(tuple(sorted(ids)), ((min(a, b), max(a, b), I), (min(a, c), max(a, c), I)))


def test_fig7_two_candidates():
    got = structural_match(hub((1, 2, 3)), hub((1, 2, 3)))
    assert [c.as_dict() for c in got] == [{1: 1, 2: 2, 3: 3}, {1: 1, 2: 3, 3: 2}]


def test_single_node():
    (c,) = structural_match(RelationGraph((1,), ()), RelationGraph((1,), ()))
    assert c.as_dict() == {1: 1}


def test_direction_matters():
    src = RelationGraph((1, 2), ((1, 2, S),))
    dst = RelationGraph((1, 2), ((2, 1, S),))
    (c,) = structural_match(src, dst)
    assert c.as_dict() == {1: 2, 2: 1}


def test_no_isomorphism():
    with pytest.raises(StructuralMismatch):
        structural_match(RelationGraph((1, 2), ((1, 2, S),)), RelationGraph((1, 2), ((1, 2, I),)))


def test_embedding_into_larger_graph():
    src = RelationGraph((1, 2), ((1, 2, S),))
    dst = RelationGraph((1, 2, 3), ((1, 3, S), (2, 3, S)))
    got = {c.pairs for c in structural_match(src, dst)}
    assert got == {((1, 1), (2, 3)), ((1, 2), (2, 3))}


def test_random_graphs_match_brute_force():
    rng = random.Random(7)
    for _ in range(100):
        n = rng.randint(1, 7)
        g = oracles.random_relation_graph(rng, n)
        targets = list(range(11, 11 + n))
        rng.shuffle(targets)
        perm = dict(zip(g.loop_ids, targets))
        h = oracles.permuted_graph(g, perm)
        got = {c.pairs for c in structural_match(g, h)}
        want = {tuple(sorted(m.items())) for m in oracles.brute_isomorphisms(g, h)}
        assert got == want
        assert tuple(sorted(perm.items())) in got


def test_multiset_jaccard():
    assert multiset_jaccard(Counter(a=2, b=1), Counter(a=1, c=1)) == pytest.approx(1 / 4)
    assert multiset_jaccard(Counter(), Counter()) == 0.0
    assert multiset_jaccard(Counter(x=3), Counter(x=3)) == 1.0


def test_similarity_examples():
    src = {1: FeatureBundle(variable_names=Counter(i_ker_x=1), comparators=Counter({"<": 1}))}
    dst = {7: FeatureBundle(variable_names=Counter(i_ker_x=1), comparators=Counter({">=": 1}))}
    assert similarity_matrix("VariableName", src, dst).at(1, 7) == 1.0
    assert similarity_matrix("Comparator", src, dst).at(1, 7) == 1.0
    assert similarity_matrix("Integer", src, dst).at(1, 7) == 0.0
    m = similarity_matrix("FunctionName", {1: FeatureBundle(), 2: FeatureBundle()}, dst)
    assert m.scores.shape == (2, 1)
    with pytest.raises(ValueError):
        similarity_matrix("Opcode", src, dst)


def test_random_weights():
    for t in range(200):
        w = random_weights(3, t)
        assert abs(sum(w.w) - 1.0) <= 1e-12
        assert min(w.w) >= 0
    assert random_weights(5, 9) == random_weights(5, 9)
    assert random_weights(5, 9).w != random_weights(5, 10).w
    draws = np.array([random_weights(42, t).w for t in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 0.25) < 0.02)


def _matrices(per_feature):
    ids = (1, 2, 3)
    return [SimilarityMatrix(f, np.array(per_feature.get(f, np.zeros((3, 3))), float), ids, ids) for f in FEATURES]


CANDS = [CandidateMapping(((1, 1), (2, 2), (3, 3))), CandidateMapping(((1, 1), (2, 3), (3, 2)))]


def test_comparator_breaks_tie():
    var = [[1, 0, 0], [0, 0.5, 0.5], [0, 0.5, 0.5]]
    cmp_ = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    res = semantic_score(list(reversed(CANDS)), _matrices({"VariableName": var, "Comparator": cmp_}), 42)
    assert res.best == CANDS[0]
    assert not res.ambiguous
    assert res.trials_used == 100
    without = semantic_score(CANDS, _matrices({"VariableName": var}), 42)
    assert without.ambiguous and without.best == CANDS[0]
    assert without.trials_used == 5000


def test_single_candidate_and_score():
    var = np.eye(3)
    res = semantic_score(CANDS[:1], _matrices({"VariableName": var}), 1)
    assert not res.ambiguous
    wsum = sum(np.array(random_weights(1, r).w) for r in range(100))
    assert res.score == pytest.approx(3 * wsum[FEATURES.index("VariableName")])


def test_argmax_invariant_under_scaling_and_dominance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        base = {f: rng.random((3, 3)) for f in FEATURES}
        a = semantic_score(CANDS, _matrices(base), 9).best
        scaled = semantic_score(CANDS, _matrices({f: 0.5 * m for f, m in base.items()}), 9).best
        assert a == scaled
    # a candidate at least as good on every feature and better on one always wins
    dom = {f: np.eye(3) for f in FEATURES}
    assert semantic_score(CANDS, _matrices(dom), 11).best == CANDS[0]


def _load(name):
    _, src, fn, _ = load_kernel_spec(FIXTURES / "kernels" / f"{name}.kernel.json")
    return src, fn


def test_mini_kernel_mapping():
    src, fn = _load("arm_mini_kernel")
    cpi = CpiTable.load(FIXTURES / "cpi_cortex_m4.json")
    res = map_function(src, fn, cpi, 42)
    assert res.best.as_dict() == {1: 1, 2: 2, 3: 3}
    assert not res.ambiguous
    doc = res.to_dict()
    assert doc["function"] == "arm_mini_kernel"
    assert [(p["src"], p["bin"]) for p in doc["pairs"]] == [(1, 1), (2, 2), (3, 3)]
    # loop 2 vs B/C: variable, function and integer features tie, comparator does not
    (c2, c3) = [d["features"] for d in res.diagnostics[1:]]
    assert c2["Comparator"] == 1.0 and c3["Comparator"] == 1.0


def test_mini_kernel_tie_without_comparators():
    from instmeter.mapper import binary_loops, source_loops

    src, fn = _load("arm_mini_kernel")
    s, b = source_loops(src), binary_loops(fn)
    cands = structural_match(s.graph, b.graph)
    assert len(cands) == 2
    full = [similarity_matrix(f, s.bundles, b.bundles) for f in FEATURES]
    blind = [m if m.feature != "Comparator" else SimilarityMatrix(m.feature, np.zeros_like(m.scores), m.src_ids, m.bin_ids)
             for m in full]
    assert semantic_score(cands, blind, 42).ambiguous
    assert not semantic_score(cands, full, 42).ambiguous


def test_all_fixture_kernels_map_to_identity():
    manifest = json.loads((FIXTURES / "manifest.json").read_text())
    cpi = CpiTable.load(FIXTURES / manifest["cpi"])
    for rel in manifest["kernels"]:
        _, src, fn, _ = load_kernel_spec(FIXTURES / rel)
        res = map_function(src, fn, cpi, 42)
        assert all(s == b for s, b in res.best.pairs), rel
        assert not res.ambiguous, rel


LOOPLESS_SRC = {"name": "f", "entry": 0, "nodes": [{"id": 0, "text": ["return;"]}], "edges": []}
LOOPLESS_BIN = """\
08000100 <f>:
 8000100:\t4770      \tbx\tlr
"""


def test_loop_free_pair():
    res = map_function(parse_src_cfg(LOOPLESS_SRC), parse_disasm(LOOPLESS_BIN)[0])
    assert res.best.pairs == () and not res.ambiguous


def _chain_src(k):
    # k sequential while loops
    nodes, edges = [{"id": 0, "text": ["i = 0;"]}], []
    prev = 0
    for j in range(k):
        h, b = 1 + 2 * j, 2 + 2 * j
        nodes += [{"id": h, "text": ["i < n"]}, {"id": b, "text": ["i++;"]}]
        edges += [{"from": prev, "to": h}, {"from": h, "to": b}, {"from": b, "to": h}]
        prev = h
    nodes.append({"id": 2 * k + 1, "text": ["return;"]})
    edges.append({"from": prev, "to": 2 * k + 1})
    return {"name": "f", "entry": 0, "nodes": nodes, "edges": edges}


def test_loop_count_mismatch():
    lines = ["08000100 <f>:"]
    addr = 0x8000100
    for _ in range(4):
        top = addr
        lines.append(f" {addr:x}:\t3401      \tadds\tr4, #1")
        addr += 2
        lines.append(f" {addr:x}:\tdbfb      \tblt.n\t{top:x} <f+0x{top - 0x8000100:x}>")
        addr += 2
    lines.append(f" {addr:x}:\t4770      \tbx\tlr")
    fn = parse_disasm("\n".join(lines) + "\n")[0]
    with pytest.raises(LoopCountMismatch) as err:
        map_function(parse_src_cfg(_chain_src(3)), fn)
    assert err.value.counts == (3, 4)
    assert "3" in str(err.value) and "4" in str(err.value)
