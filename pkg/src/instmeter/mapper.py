"""Loop-level source/binary mapping.

Structural phase: enumerate label-preserving isomorphisms between the two loop
relation graphs with a VF2-style depth-first search.  Semantic phase: rank the
structural candidates by feature similarity under random convex weightings,
drawing fresh weights while the top score is shared.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cfgcore import Loop, RelationGraph, extract_loops, relation_graph
from .disasm import Arch, BinFunction, CpiTable, build_bin_cfg, extract_bin_semantics, get_arch
from .features import FeatureBundle, comparator_class
from .srcfeat import SrcFunction, extract_src_semantics

log = logging.getLogger(__name__)

FEATURES = ("FunctionName", "VariableName", "Integer", "Comparator")
_BUNDLE_FIELD = {
    "FunctionName": "function_names",
    "VariableName": "variable_names",
    "Integer": "integers",
    "Comparator": "comparators",
}

TRIALS_PER_BATCH = 100
MAX_BATCHES = 50
TIE_RTOL = 1e-12


class MappingError(ValueError):
    pass


class StructuralMismatch(MappingError):
    pass


class LoopCountMismatch(MappingError):
    def __init__(self, n_src: int, n_bin: int):
        super().__init__(f"loop count mismatch: source has {n_src} loops, binary has {n_bin}")
        self.counts = (n_src, n_bin)


# -- structural matching ------------------------------------------------------


def _labels(g: RelationGraph) -> dict[tuple[int, int], str]:
    lab = {}
    for a, b, kind in g.edges:
        if kind.value == "Intersect":
            lab[(a, b)] = lab[(b, a)] = "Intersect"
        else:
            lab[(a, b)] = "Subset"
            lab[(b, a)] = "Superset"
    return lab


def _signature(node: int, ids: Sequence[int], lab) -> tuple[int, int, int]:
    counts = {"Subset": 0, "Superset": 0, "Intersect": 0}
    for other in ids:
        if other != node and (node, other) in lab:
            counts[lab[(node, other)]] += 1
    return counts["Subset"], counts["Superset"], counts["Intersect"]


def _search(src: RelationGraph, dst: RelationGraph, seed: tuple[int, int] | None) -> list[dict[int, int]]:
    s_ids, d_ids = list(src.loop_ids), list(dst.loop_ids)
    s_lab, d_lab = _labels(src), _labels(dst)
    exact = len(s_ids) == len(d_ids)
    s_sig = {n: _signature(n, s_ids, s_lab) for n in s_ids}
    d_sig = {n: _signature(n, d_ids, d_lab) for n in d_ids}

    def compatible(s, d):
        if exact:
            return s_sig[s] == d_sig[d]
        return all(x <= y for x, y in zip(s_sig[s], d_sig[d]))

    order = list(s_ids)
    if seed is not None:
        order.remove(seed[0])
        order.insert(0, seed[0])
    results: list[dict[int, int]] = []
    core: dict[int, int] = {}
    used: set[int] = set()

    def feasible(s, d):
        if not compatible(s, d):
            return False
        for ms, md in core.items():
            if s_lab.get((s, ms)) != d_lab.get((d, md)):
                return False
        return True

    def extend(depth):
        if depth == len(order):
            results.append(dict(core))
            return
        s = order[depth]
        choices = [seed[1]] if (seed is not None and depth == 0) else d_ids
        for d in choices:
            if d in used or not feasible(s, d):
                continue
            core[s] = d
            used.add(d)
            extend(depth + 1)
            del core[s]
            used.discard(d)

    if len(s_ids) <= len(d_ids):
        extend(0)
    return results


@dataclass(frozen=True)
class CandidateMapping:
    pairs: tuple[tuple[int, int], ...]

    @classmethod
    def of(cls, m: Mapping[int, int]) -> "CandidateMapping":
        return cls(tuple(sorted(m.items())))

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


def structural_match(src: RelationGraph, dst: RelationGraph) -> list[CandidateMapping]:
    """All label- and direction-preserving embeddings of ``src`` into ``dst``.

    The lowest source loop is tried against the lowest binary loop first, but
    the search carries on past that anchor so every isomorphism is reported.
    Candidates come back sorted by their pair tuples, which puts the anchored
    ones first.
    """
    if not src.loop_ids or not dst.loop_ids:
        raise MappingError("relation graphs must be non-empty")
    found = _search(src, dst, None)
    if not found:
        raise StructuralMismatch("no structure-preserving loop mapping exists")
    return sorted({CandidateMapping.of(m) for m in found}, key=lambda c: c.pairs)


# -- similarity ---------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityMatrix:
    feature: str
    scores: np.ndarray
    src_ids: tuple[int, ...]
    bin_ids: tuple[int, ...]

    def __post_init__(self):
        if self.scores.shape != (len(self.src_ids), len(self.bin_ids)):
            raise ValueError("similarity matrix shape does not match loop ids")

    def at(self, src_id: int, bin_id: int) -> float:
        return float(self.scores[self.src_ids.index(src_id), self.bin_ids.index(bin_id)])


def multiset_jaccard(a, b) -> float:
    keys = set(a) | set(b)
    union = sum(max(a.get(k, 0), b.get(k, 0)) for k in keys)
    if union == 0:
        return 0.0
    return sum(min(a.get(k, 0), b.get(k, 0)) for k in keys) / union


def _canonical(feature: str, bundle: FeatureBundle):
    from collections import Counter

    items = bundle.feature(_BUNDLE_FIELD[feature])
    if feature == "Comparator":
        out = Counter()
        for tok, n in items.items():
            out[comparator_class(tok)] += n
        return out
    if feature in ("FunctionName", "VariableName"):
        out = Counter()
        for name, n in items.items():
            out[str(name).lower()] += n
        return out
    return items


def similarity_matrix(feature: str, src_bundles: Mapping[int, FeatureBundle],
                      bin_bundles: Mapping[int, FeatureBundle]) -> SimilarityMatrix:
    if feature not in FEATURES:
        raise ValueError(f"unknown feature {feature!r}")
    s_ids = tuple(sorted(src_bundles))
    b_ids = tuple(sorted(bin_bundles))
    scores = np.zeros((len(s_ids), len(b_ids)))
    for i, s in enumerate(s_ids):
        fs = _canonical(feature, src_bundles[s])
        for j, b in enumerate(b_ids):
            scores[i, j] = multiset_jaccard(fs, _canonical(feature, bin_bundles[b]))
    return SimilarityMatrix(feature, scores, s_ids, b_ids)


# -- random scalarization -----------------------------------------------------


@dataclass(frozen=True)
class WeightVector:
    w: tuple[float, float, float, float]
    seed: int
    trial: int


def random_weights(rng_seed: int, trial_index: int) -> WeightVector:
    """Uniform draw on the 4-simplex, reproducible from (seed, trial)."""
    rng = np.random.default_rng([rng_seed, trial_index])
    x = rng.standard_exponential(4)
    w = x / x.sum()
    w[-1] = 1.0 - w[:-1].sum()
    if w[-1] < 0:
        w[-1] = 0.0
    return WeightVector(tuple(float(v) for v in w), rng_seed, trial_index)


@dataclass
class MappingResult:
    best: CandidateMapping
    score: float
    ambiguous: bool
    trials_used: int
    diagnostics: list[dict] = field(default_factory=list)
    function: str = ""

    def to_dict(self) -> dict:
        per_pair = {(d["src"], d["bin"]): d for d in self.diagnostics}
        return {
            "function": self.function,
            "pairs": [
                {"src": s, "bin": b, "score": per_pair.get((s, b), {}).get("score", 0.0)}
                for s, b in self.best.pairs
            ],
            "ambiguous": self.ambiguous,
        }


def _feature_totals(candidate: CandidateMapping, matrices: Sequence[SimilarityMatrix]) -> np.ndarray:
    return np.array([sum(m.at(s, b) for s, b in candidate.pairs) for m in matrices])


def semantic_score(candidates: Sequence[CandidateMapping], sim_matrices: Sequence[SimilarityMatrix],
                   rng_seed: int) -> MappingResult:
    if not candidates:
        raise MappingError("semantic scoring needs at least one candidate")
    if len(sim_matrices) != len(FEATURES):
        raise MappingError(f"expected {len(FEATURES)} similarity matrices")
    by_feature = {m.feature: m for m in sim_matrices}
    matrices = [by_feature[f] for f in FEATURES]
    totals = [_feature_totals(c, matrices) for c in candidates]

    ambiguous = False
    batch = 0
    while True:
        weight_sum = np.zeros(len(FEATURES))
        for r in range(TRIALS_PER_BATCH):
            weight_sum += random_weights(rng_seed, batch * TRIALS_PER_BATCH + r).w
        scores = np.array([float(t @ weight_sum) for t in totals])
        top = scores.max()
        leaders = [i for i, s in enumerate(scores) if abs(s - top) <= TIE_RTOL * max(1.0, abs(top))]
        batch += 1
        if len(leaders) == 1:
            pick = leaders[0]
            break
        if batch >= MAX_BATCHES:
            ambiguous = True
            pick = min(leaders, key=lambda i: candidates[i].pairs)
            break

    best = candidates[pick]
    diagnostics = []
    for s, b in best.pairs:
        contrib = {f: m.at(s, b) for f, m in zip(FEATURES, matrices)}
        diagnostics.append({"src": s, "bin": b, "features": contrib,
                            "score": float(sum(contrib[f] * weight_sum[k] for k, f in enumerate(FEATURES)))})
    return MappingResult(best, float(scores[pick]), ambiguous, batch * TRIALS_PER_BATCH, diagnostics)


# -- end to end ---------------------------------------------------------------


@dataclass
class FunctionLoops:
    loops: list[Loop]
    graph: RelationGraph
    bundles: dict[int, FeatureBundle]


def source_loops(src: SrcFunction) -> FunctionLoops:
    loops = extract_loops(src.cfg)
    graph = relation_graph(loops)
    by_id = {l.id: l for l in loops}
    bundles = {i: extract_src_semantics(by_id[i], src) for i in graph.loop_ids}
    return FunctionLoops(loops, graph, bundles)


def binary_loops(fn: BinFunction, cpi: CpiTable | None = None, arch: str | Arch = "cortex-m") -> FunctionLoops:
    a = get_arch(arch)
    cfg = build_bin_cfg(fn, a)
    loops = extract_loops(cfg)
    graph = relation_graph(loops)
    by_id = {l.id: l for l in loops}
    bundles = {i: extract_bin_semantics(by_id[i], fn, cfg, a, cpi) for i in graph.loop_ids}
    return FunctionLoops(loops, graph, bundles)


def map_function(src: SrcFunction, fn: BinFunction, cpi: CpiTable | None = None, rng_seed: int = 42,
                 arch: str | Arch = "cortex-m") -> MappingResult:
    s = source_loops(src)
    b = binary_loops(fn, cpi, arch)
    n_src, n_bin = len(s.graph.loop_ids), len(b.graph.loop_ids)
    if n_src != n_bin:
        raise LoopCountMismatch(n_src, n_bin)
    if n_src == 0:
        return MappingResult(CandidateMapping(()), 0.0, False, 0, [], src.name)
    candidates = structural_match(s.graph, b.graph)
    matrices = [similarity_matrix(f, s.bundles, b.bundles) for f in FEATURES]
    result = semantic_score(candidates, matrices, rng_seed)
    result.function = src.name
    if result.ambiguous:
        log.warning("%s: %d structural candidates could not be separated", src.name, len(candidates))
    return result
