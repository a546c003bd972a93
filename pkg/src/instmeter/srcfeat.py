"""Source-side CFG descriptors and loop-level semantic features."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

from .cfgcore import Cfg, CfgError, Loop, cfg_from_dict
from .exprlang import ExprError, parse_expr
from .features import FeatureBundle


class SourceError(ValueError):
    pass


@dataclass(frozen=True)
class SrcFunction:
    name: str
    cfg: Cfg
    loop_trip_vars: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise SourceError("source function name is empty")


def parse_src_cfg(document: dict) -> SrcFunction:
    if not isinstance(document, dict):
        raise SourceError("source CFG document must be a JSON object")
    name = document.get("name")
    if not isinstance(name, str) or not name:
        raise SourceError("source CFG document needs a non-empty 'name'")
    try:
        cfg = cfg_from_dict(document)
    except CfgError as exc:
        raise SourceError(f"{name}: {exc}") from None
    raw = document.get("trip_exprs", {}) or {}
    if not isinstance(raw, dict):
        raise SourceError(f"{name}: 'trip_exprs' must be an object")
    ids = set(cfg.node_ids)
    trips = {}
    for key, text in raw.items():
        try:
            node = int(key)
        except ValueError:
            raise SourceError(f"{name}: trip_exprs key {key!r} is not a node id") from None
        if node not in ids:
            raise SourceError(f"{name}: trip_exprs references missing node {node}")
        try:
            parse_expr(text)
        except ExprError as exc:
            raise SourceError(f"{name}: trip expression for node {node}: {exc}") from None
        trips[node] = text
    return SrcFunction(name, cfg, trips)


C_KEYWORDS = frozenset(
    """auto break case char const continue default do double else enum extern float for goto if
    inline int long register restrict return short signed sizeof static struct switch typedef union
    unsigned void volatile while bool true false nullptr new delete this class namespace template
    typename using public private protected virtual operator static_cast reinterpret_cast const_cast
    dynamic_cast constexpr
    int8_t int16_t int32_t int64_t uint8_t uint16_t uint32_t uint64_t size_t q7_t q15_t q31_t q63_t
    NULL""".split()
)

_STRING = re.compile(r'"(?:\\.|[^"\\])*"|\'(?:\\.|[^\'\\])*\'')
_COMMENT = re.compile(r"//[^\n]*|/\*.*?\*/", re.S)
_TOKENS = re.compile(
    r"""
    (?P<float>\d+\.\d*(?:[eE][-+]?\d+)?[fF]?|\.\d+(?:[eE][-+]?\d+)?[fF]?)
  | (?P<int>0[xX][0-9a-fA-F]+|\d+)[uUlL]*
  | (?P<ident>[A-Za-z_]\w*(?:(?:\.|->|::)[A-Za-z_]\w*)*)
  | (?P<op><<=|>>=|<=|>=|==|!=|<<|>>|&&|\|\||&=|\|=|->|<|>|&|\|)
  | (?P<other>\S)
    """,
    re.X,
)
_OP_TOKEN = {
    "<<=": "<<", ">>=": ">>", "<=": "<=", ">=": ">=", "==": "==", "!=": "!=",
    "<<": "<<", ">>": ">>", "&=": "&", "|=": "|", "<": "<", ">": ">", "&": "&", "|": "|",
}


def statement_features(text: str) -> FeatureBundle:
    """Features of a block of statement text (maximal-munch operator scan)."""
    text = _COMMENT.sub(" ", text)
    text = _STRING.sub(" ", text)
    bundle = FeatureBundle()
    tokens = list(_TOKENS.finditer(text))
    for i, m in enumerate(tokens):
        kind = m.lastgroup
        if kind == "int":
            bundle.integers[int(m.group("int"), 0)] += 1
        elif kind == "ident":
            word = m.group("ident")
            if word in C_KEYWORDS:
                continue
            nxt = tokens[i + 1].group(0) if i + 1 < len(tokens) else ""
            if nxt == "(":
                bundle.function_names[word] += 1
            else:
                bundle.variable_names[word] += 1
        elif kind == "op":
            tok = _OP_TOKEN.get(m.group("op"))
            if tok is not None:
                bundle.comparators[tok] += 1
    return bundle


def node_text(payload) -> str:
    if isinstance(payload, str):
        return payload
    return "\n".join(str(p) for p in payload)


def extract_src_semantics(loop: Loop, fn: SrcFunction) -> FeatureBundle:
    text = "\n".join(node_text(n.payload) for n in fn.cfg.nodes if n.id in loop.body)
    return statement_features(text)
