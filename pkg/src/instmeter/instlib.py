"""Instruction library: per-kernel loop trees and cycle estimation.

A kernel profile is a tree rooted at the function body (trip 1) with one node
per mapped loop.  Every binary instruction is counted in the innermost mapped
loop containing it, once per iteration; a node executes the product of the
trip counts on its root path.  Cycles are then

    sum over nodes, mnemonics:  occurrences * CPI * executions
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import operator
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

from .cfgcore import extract_loops
from .disasm import BinFunction, CpiTable, build_bin_cfg, classify_instruction, get_arch, parse_disasm
from .exprlang import ExprError, eval_expr, names, parse_expr
from .mapper import MappingResult, map_function
from .srcfeat import SrcFunction, parse_src_cfg

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

OPERATOR_TYPES = (
    "Conv2D", "DepthConv2D", "FullyConnected", "MaxPool2D", "AvgPool2D",
    "ReLU", "Add", "Mul", "Softmax", "Reshape",
)


class LibraryError(ValueError):
    pass


@dataclass
class ProfileNode:
    id: int
    parent: int | None
    trip: str
    histogram: dict[str, int] = field(default_factory=dict)
    src_loop: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "trip": self.trip,
            "histogram": dict(sorted(self.histogram.items())),
            "src_loop": self.src_loop,
        }


@dataclass
class KernelProfile:
    kernel_name: str
    nodes: list[ProfileNode]
    cpi: dict[str, Fraction] = field(default_factory=dict)

    def node(self, node_id: int) -> ProfileNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def params(self) -> set[str]:
        out: set[str] = set()
        for n in self.nodes:
            out |= names(_parsed(n.trip))
        return out

    def to_dict(self) -> dict:
        return {
            "kernel_name": self.kernel_name,
            "nodes": [n.to_dict() for n in self.nodes],
            "cpi": {k: _num(v) for k, v in sorted(self.cpi.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelProfile":
        nodes = [
            ProfileNode(n["id"], n["parent"], n["trip"], dict(n["histogram"]), n.get("src_loop"))
            for n in doc["nodes"]
        ]
        return cls(doc["kernel_name"], nodes, {k: Fraction(str(v)) for k, v in doc.get("cpi", {}).items()})


def _num(x: Fraction):
    return int(x) if x.denominator == 1 else str(x)


@lru_cache(maxsize=4096)
def _parsed(text: str):
    return parse_expr(text)


def build_profile(mapping: MappingResult, src: SrcFunction, fn: BinFunction, cpi: CpiTable,
                  arch="cortex-m", name: str | None = None) -> KernelProfile:
    a = get_arch(arch)
    if mapping.ambiguous:
        log.warning("%s: building profile from an ambiguous loop mapping", fn.symbol)
    cfg = build_bin_cfg(fn, a)
    bin_loops = {l.id: l for l in extract_loops(cfg)}
    src_loops = {l.id: l for l in extract_loops(src.cfg)}

    mapped = []  # (bin loop, src loop)
    for s_id, b_id in mapping.best.pairs:
        s_loop, b_loop = src_loops[s_id], bin_loops[b_id]
        if s_loop.header not in src.loop_trip_vars:
            raise LibraryError(f"{fn.symbol}: no trip expression for source loop {s_id} (header node {s_loop.header})")
        mapped.append((b_loop, s_loop))

    def containing(body, strict):
        best = None
        for b_loop, _ in mapped:
            inside = body < b_loop.body if strict else body <= b_loop.body
            if inside and (best is None or (len(b_loop.body), b_loop.id) < (len(best.body), best.id)):
                best = b_loop
        return best

    nodes = {0: ProfileNode(0, None, "1")}
    for b_loop, s_loop in sorted(mapped, key=lambda p: p[0].id):
        parent = containing(b_loop.body, strict=True)
        nodes[b_loop.id] = ProfileNode(
            b_loop.id, parent.id if parent else 0, src.loop_trip_vars[s_loop.header], {}, s_loop.id
        )

    hist: dict[int, Counter] = {i: Counter() for i in nodes}
    for block in cfg.nodes:
        owner = containing(frozenset({block.id}), strict=False)
        target = owner.id if owner else 0
        for ins in block.payload:
            hist[target][ins.base] += 1
    attributed = sum(sum(h.values()) for h in hist.values())
    if attributed != len(fn.instructions):
        raise LibraryError(f"{fn.symbol}: {len(fn.instructions) - attributed} instructions fall in no basic block")
    for i, h in hist.items():
        nodes[i].histogram = dict(sorted(h.items()))

    used = {m for h in hist.values() for m in h}
    table = {m: classify_instruction(m, cpi, a)[1] for m in sorted(used)}
    ordered = [nodes[0]] + [nodes[i] for i in sorted(nodes) if i != 0]
    return KernelProfile(name or fn.symbol, ordered, table)


def node_executions(profile: KernelProfile, env: Mapping[str, int]) -> dict[int, int]:
    by_id = {n.id: n for n in profile.nodes}
    memo: dict[int, int] = {}

    def execs(i):
        if i not in memo:
            n = by_id[i]
            own = eval_expr(_parsed(n.trip), env)
            memo[i] = own if n.parent is None else own * execs(n.parent)
        return memo[i]

    for i in by_id:
        execs(i)
    return memo


def kernel_cycles_exact(profile: KernelProfile, env: Mapping[str, int]) -> Fraction:
    execs = node_executions(profile, env)
    total = Fraction(0)
    for n in profile.nodes:
        for mnemonic, count in n.histogram.items():
            total += count * profile.cpi.get(mnemonic, Fraction(1)) * execs[n.id]
    return total


def kernel_cycles(profile: KernelProfile, env: Mapping[str, int]) -> int:
    """Estimated cycles, rounded half-up when CPI values are fractional."""
    return math.floor(kernel_cycles_exact(profile, env) + Fraction(1, 2))


# -- dispatch -----------------------------------------------------------------

_CMP = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class DispatchRule:
    op_type: str
    kernels: tuple[str, ...]
    when: tuple[tuple[str, str, int], ...] = ()

    def matches(self, op_type: str, params: Mapping[str, int]) -> bool:
        if op_type != self.op_type:
            return False
        for key, cmp, value in self.when:
            if key not in params or not _CMP[cmp](params[key], value):
                return False
        return True

    def to_dict(self) -> dict:
        return {"op_type": self.op_type, "kernels": list(self.kernels), "when": [list(c) for c in self.when]}

    @classmethod
    def from_dict(cls, d: dict) -> "DispatchRule":
        when = tuple((k, c, int(v)) for k, c, v in d.get("when", []))
        for _, c, _ in when:
            if c not in _CMP:
                raise LibraryError(f"unknown comparison {c!r} in dispatch rule")
        return cls(d["op_type"], tuple(d["kernels"]), when)


def default_dispatch_rules() -> list[DispatchRule]:
    R = DispatchRule
    return [
        R("Conv2D", ("arm_convolve_1x1_s8_fast",), (("kh", "==", 1), ("kw", "==", 1))),
        R("Conv2D", ("arm_convolve_1_x_n_s8",), (("kh", "==", 1), ("kw", "!=", 1))),
        R("Conv2D", ("arm_convolve_1_x_n_s8",), (("kh", "!=", 1), ("kw", "==", 1))),
        R("Conv2D", ("arm_convolve_s8",)),
        R("DepthConv2D", ("arm_depthwise_conv_3x3",), (("kh", "==", 3), ("kw", "==", 3))),
        R("DepthConv2D", ("arm_depthwise_conv_s8",)),
        R("FullyConnected", ("arm_fully_connected_s8",)),
        R("MaxPool2D", ("arm_max_pool_s8",)),
        R("AvgPool2D", ("arm_avgpool_s8",)),
        R("ReLU", ("ReluQuantized",)),
        R("Add", ("arm_elementwise_add_s8",)),
        R("Mul", ("arm_elementwise_mul_s8",)),
        R("Softmax", ("arm_softmax_s8",)),
        R("Reshape", ("reshapeOutput",)),
    ]


@dataclass(frozen=True)
class OperatorInstance:
    op_type: str
    params: Mapping[str, int]

    def __post_init__(self):
        if self.op_type not in OPERATOR_TYPES:
            raise LibraryError(f"unsupported operator type {self.op_type!r}")


def dispatch_operator(op: OperatorInstance, rules: Sequence[DispatchRule]) -> list[str]:
    for rule in rules:
        if rule.matches(op.op_type, op.params):
            return list(rule.kernels)
    raise LibraryError(f"no dispatch rule matches operator {op.op_type!r}")


# -- library ------------------------------------------------------------------


@dataclass
class InstructionLibrary:
    architecture: str
    tflm_version_tag: str
    kernels: dict[str, KernelProfile]
    cpi: CpiTable
    dispatch_rules: list[DispatchRule] = field(default_factory=default_dispatch_rules)
    input_hash: str = ""

    def __post_init__(self):
        for rule in self.dispatch_rules:
            for k in rule.kernels:
                if k not in self.kernels:
                    raise LibraryError(f"dispatch rule for {rule.op_type} names unknown kernel {k!r}")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "architecture": self.architecture,
            "tflm_version_tag": self.tflm_version_tag,
            "cpi": self.cpi.to_dict(),
            "kernels": {k: self.kernels[k].to_dict() for k in sorted(self.kernels)},
            "dispatch_rules": [r.to_dict() for r in self.dispatch_rules],
            "input_hash": self.input_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "InstructionLibrary":
        if doc.get("format_version") != FORMAT_VERSION:
            raise LibraryError(f"library format {doc.get('format_version')!r} is not {FORMAT_VERSION}; rebuild it")
        return cls(
            architecture=doc["architecture"],
            tflm_version_tag=doc["tflm_version_tag"],
            kernels={k: KernelProfile.from_dict(v) for k, v in doc["kernels"].items()},
            cpi=CpiTable.from_dict(doc["cpi"]),
            dispatch_rules=[DispatchRule.from_dict(r) for r in doc["dispatch_rules"]],
            input_hash=doc.get("input_hash", ""),
        )

    @classmethod
    def load(cls, path) -> "InstructionLibrary":
        return cls.from_dict(json.loads(Path(path).read_text()))


def model_cycles(model: Sequence[OperatorInstance], lib: InstructionLibrary) -> tuple[int, list[dict]]:
    total = 0
    breakdown = []
    for index, op in enumerate(model):
        kernels = dispatch_operator(op, lib.dispatch_rules)
        cycles = 0
        for k in kernels:
            if k not in lib.kernels:
                raise LibraryError(f"operator {index} ({op.op_type}) dispatches to missing kernel {k!r}")
            try:
                cycles += kernel_cycles(lib.kernels[k], op.params)
            except ExprError as exc:
                raise LibraryError(f"operator {index} ({op.op_type}), kernel {k}: {exc}") from None
        breakdown.append({"index": index, "op_type": op.op_type, "kernels": kernels, "cycles": cycles})
        total += cycles
    return total, breakdown


def _hash_inputs(paths: Sequence[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.name.encode())
        h.update(b"\0")
        h.update(p.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def load_kernel_spec(path: Path) -> tuple[str, SrcFunction, BinFunction, list[Path]]:
    spec = json.loads(path.read_text())
    base = path.parent
    src_path = base / spec["src_cfg"]
    dis_path = base / spec["disasm"]
    src_doc = json.loads(src_path.read_text())
    if spec.get("trip_exprs"):
        src_doc = {**src_doc, "trip_exprs": {**src_doc.get("trip_exprs", {}), **spec["trip_exprs"]}}
    src = parse_src_cfg(src_doc)
    symbol = spec.get("symbol", spec["kernel"])
    fns = [f for f in parse_disasm(dis_path.read_text()) if f.symbol == symbol]
    if not fns:
        raise LibraryError(f"{dis_path}: no function named {symbol!r}")
    return spec["kernel"], src, fns[0], [path, src_path, dis_path]


def build_library(manifest_path, seed: int | None = None, cpi_path=None, arch: str | None = None) -> InstructionLibrary:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    cpi_file = Path(cpi_path) if cpi_path else base / manifest["cpi"]
    cpi = CpiTable.load(cpi_file)
    arch = arch or manifest.get("architecture", "cortex-m")
    seed = manifest.get("seed", 42) if seed is None else seed
    inputs = [manifest_path, cpi_file]
    kernels = {}
    for rel in manifest["kernels"]:
        name, src, fn, files = load_kernel_spec(base / rel)
        inputs.extend(files)
        mapping = map_function(src, fn, cpi, seed, arch)
        kernels[name] = build_profile(mapping, src, fn, cpi, arch, name=name)
    rules = manifest.get("dispatch_rules")
    rules = [DispatchRule.from_dict(r) for r in rules] if rules else default_dispatch_rules()
    rules = [r for r in rules if all(k in kernels for k in r.kernels)] if not manifest.get("dispatch_rules") else rules
    return InstructionLibrary(
        architecture=arch,
        tflm_version_tag=manifest.get("tflm_version_tag", ""),
        kernels=kernels,
        cpi=cpi,
        dispatch_rules=rules,
        input_hash=_hash_inputs(inputs),
    )


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
