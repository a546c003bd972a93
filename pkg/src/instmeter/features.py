"""Loop-level semantic feature bundles shared by the source and binary sides."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

# Canonical operator alphabet.  "<=" and ">=" are spelled in ASCII so they
# survive JSON and terminals unchanged.
COMPARATORS = ("<", "<=", ">", ">=", "==", "!=", ">>", "<<", "&", "|")

# A source comparison compiles to either the identical branch or its counter
# branch (BLT for `<`, BGE for the negated test), so `<` and `>=` are
# indistinguishable on the binary side, as are `>` and `<=`.  Similarity is
# computed after collapsing both sides into these classes.
_COMPARATOR_CLASS = {
    "<": "<",
    ">=": "<",
    ">": ">",
    "<=": ">",
    "==": "==",
    "!=": "!=",
    ">>": ">>",
    "<<": "<<",
    "&": "&",
    "|": "|",
}

FEATURE_KINDS = ("function_names", "variable_names", "integers", "comparators")


def comparator_class(token: str) -> str:
    try:
        return _COMPARATOR_CLASS[token]
    except KeyError:
        raise ValueError(f"not a canonical comparator: {token!r}") from None


@dataclass
class FeatureBundle:
    function_names: Counter = field(default_factory=Counter)
    variable_names: Counter = field(default_factory=Counter)
    integers: Counter = field(default_factory=Counter)
    comparators: Counter = field(default_factory=Counter)

    def __post_init__(self):
        for kind in FEATURE_KINDS:
            value = getattr(self, kind)
            if not isinstance(value, Counter):
                setattr(self, kind, Counter(value))
        bad = set(self.comparators) - set(COMPARATORS)
        if bad:
            raise ValueError(f"comparators outside the canonical alphabet: {sorted(bad)}")

    def feature(self, kind: str) -> Counter:
        if kind not in FEATURE_KINDS:
            raise KeyError(kind)
        return getattr(self, kind)

    def is_empty(self) -> bool:
        return not any(getattr(self, kind) for kind in FEATURE_KINDS)

    def to_dict(self) -> dict:
        return {
            kind: {str(k): v for k, v in sorted(getattr(self, kind).items(), key=lambda kv: str(kv[0]))}
            for kind in FEATURE_KINDS
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureBundle":
        ints = Counter({int(k): v for k, v in doc.get("integers", {}).items()})
        return cls(
            function_names=Counter(doc.get("function_names", {})),
            variable_names=Counter(doc.get("variable_names", {})),
            integers=ints,
            comparators=Counter(doc.get("comparators", {})),
        )
