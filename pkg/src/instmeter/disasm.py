"""Disassembly listings: parsing, instruction classes, CFGs and loop features.

The accepted listing format is GNU objdump output::

    08000100 <arm_mini_kernel>:
     8000100:	b5f0      	push	{r4, r5, r6, r7, lr}
     8000102:	2400      	movs	r4, #0

Branch mnemonic sets are per architecture (``cortex-m`` and ``riscv`` ship
as defaults).
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .cfgcore import Cfg, Loop, Node, build_cfg
from .features import FeatureBundle

log = logging.getLogger(__name__)


class DisasmError(ValueError):
    pass


@dataclass(frozen=True)
class Instruction:
    address: int
    mnemonic: str
    operands: tuple[str, ...] = ()
    raw: str = ""
    comment: str = ""

    @property
    def base(self) -> str:
        return strip_suffix(self.mnemonic)

    def to_dict(self) -> dict:
        return {
            "address": self.address,
            "mnemonic": self.mnemonic,
            "operands": list(self.operands),
            "raw": self.raw,
            "comment": self.comment,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instruction":
        return cls(d["address"], d["mnemonic"], tuple(d["operands"]), d.get("raw", ""), d.get("comment", ""))


@dataclass(frozen=True)
class BinFunction:
    symbol: str
    instructions: tuple[Instruction, ...]

    def __post_init__(self):
        if not self.symbol:
            raise DisasmError("function symbol is empty")
        if not self.instructions:
            raise DisasmError(f"function {self.symbol} has no instructions")
        addrs = [i.address for i in self.instructions]
        if any(b <= a for a, b in zip(addrs, addrs[1:])):
            raise DisasmError(f"addresses not strictly increasing in {self.symbol}")

    def to_dict(self) -> dict:
        return {"symbol": self.symbol, "instructions": [i.to_dict() for i in self.instructions]}

    @classmethod
    def from_dict(cls, d: dict) -> "BinFunction":
        return cls(d["symbol"], tuple(Instruction.from_dict(i) for i in d["instructions"]))

    def to_listing(self) -> str:
        head = f"{self.instructions[0].address:08x} <{self.symbol}>:"
        return "\n".join([head] + [i.raw for i in self.instructions])


# -- parsing ------------------------------------------------------------------

_HEADER = re.compile(r"^([0-9a-f]+) <([^>]+)>:$")
_INSTR = re.compile(r"^\s*(?P<addr>[0-9A-Za-z_]+):\s+(?P<rest>\S.*?)\s*$")
_HEXWORD = re.compile(r"^(?:[0-9a-f]{2}|[0-9a-f]{4}|[0-9a-f]{8})$")


@dataclass
class ParseResult:
    functions: list[BinFunction]
    skipped: int = 0


def _split_operands(text: str) -> tuple[str, ...]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        out.append(tail)
    return tuple(o for o in out if o)


def _split_comment(text: str) -> tuple[str, str]:
    for marker in (";", "@", "#"):
        if marker == "#":
            # '#' introduces ARM immediates; only a "# " after whitespace is a comment
            m = re.search(r"\s#\s", text)
            if m:
                return text[: m.start()].rstrip(), text[m.end():].strip()
            continue
        idx = text.find(marker)
        if idx >= 0:
            return text[:idx].rstrip(), text[idx + 1:].strip()
    return text, ""


def _parse_instruction(line: str, lineno: int) -> Instruction | None:
    m = _INSTR.match(line)
    if not m:
        return None
    try:
        address = int(m.group("addr"), 16)
    except ValueError:
        if line[:1].isspace():
            raise DisasmError(f"line {lineno}: bad instruction address {m.group('addr')!r}") from None
        return None
    rest = m.group("rest")
    fields = [f.strip() for f in rest.split("\t") if f.strip()]
    if len(fields) >= 2 and all(_HEXWORD.match(w) for w in fields[0].split()):
        body = "\t".join(fields[1:])
    else:
        tokens = rest.split()
        i = 0
        while i < len(tokens) - 1 and _HEXWORD.match(tokens[i]):
            i += 1
        body = rest.split(None, i)[i] if i else rest
    code, comment = _split_comment(body)
    parts = code.split(None, 1)
    if not parts:
        return None
    mnemonic = parts[0].lower()
    if mnemonic.startswith(".") or not re.match(r"^[a-z][a-z0-9_.]*$", mnemonic):
        return None
    operands = _split_operands(parts[1]) if len(parts) > 1 else ()
    return Instruction(address, mnemonic, operands, line.rstrip("\n"), comment)


def parse_listing(text: str) -> ParseResult:
    functions: list[BinFunction] = []
    current: str | None = None
    body: list[Instruction] = []
    skipped = 0

    def flush():
        if current is not None and body:
            functions.append(BinFunction(current, tuple(body)))

    for lineno, line in enumerate(text.splitlines(), 1):
        head = _HEADER.match(line)
        if head:
            flush()
            current, body = head.group(2), []
            continue
        if not line.strip():
            continue
        if current is None:
            skipped += 1
            continue
        instr = _parse_instruction(line, lineno)
        if instr is None:
            skipped += 1
            continue
        body.append(instr)
    flush()
    if not functions:
        raise DisasmError("no functions found in listing (expected '<symbol>:' header lines)")
    if skipped:
        log.warning("skipped %d non-instruction lines", skipped)
    return ParseResult(functions, skipped)


def parse_disasm(text: str) -> list[BinFunction]:
    return parse_listing(text).functions


# -- architectures ------------------------------------------------------------

_ARM_CONDS = ("eq", "ne", "cs", "hs", "cc", "lo", "mi", "pl", "vs", "vc", "hi", "ls", "ge", "lt", "gt", "le")


@dataclass(frozen=True)
class Arch:
    name: str
    cond_branches: frozenset[str]
    uncond_branches: frozenset[str]
    calls: frozenset[str]
    returns: frozenset[str]
    comparators: dict = field(default_factory=dict)  # mnemonic -> canonical token
    shifts: dict = field(default_factory=dict)
    logic: dict = field(default_factory=dict)
    registers: frozenset[str] = frozenset()


CORTEX_M = Arch(
    name="cortex-m",
    cond_branches=frozenset({"b" + c for c in _ARM_CONDS} | {"cbz", "cbnz"}),
    uncond_branches=frozenset({"b", "bx", "tbb", "tbh"}),
    calls=frozenset({"bl", "blx"}),
    returns=frozenset({"bx"}),
    comparators={
        # identical and counter instruction of each source comparison
        "blt": "<", "bge": "<",
        "bgt": ">", "ble": ">",
        "blo": "<", "bcc": "<", "bhs": "<", "bcs": "<",
        "bhi": ">", "bls": ">",
        "beq": "==", "cbz": "==",
        "bne": "!=", "cbnz": "!=",
    },
    shifts={"asr": ">>", "asrs": ">>", "lsr": ">>", "lsrs": ">>", "lsl": "<<", "lsls": "<<"},
    logic={"and": "&", "ands": "&", "orr": "|", "orrs": "|"},
    registers=frozenset(
        [f"r{i}" for i in range(16)] + ["sp", "lr", "pc", "ip", "fp", "sl", "sb"]
    ),
)

_RV_ABI = ["zero", "ra", "sp", "gp", "tp", "fp"] + [f"t{i}" for i in range(7)] + [
    f"s{i}" for i in range(12)
] + [f"a{i}" for i in range(8)]

RISCV = Arch(
    name="riscv",
    cond_branches=frozenset({
        "beq", "bne", "blt", "bge", "bltu", "bgeu", "bgt", "ble", "bgtu", "bleu",
        "beqz", "bnez", "bltz", "bgez", "blez", "bgtz",
    }),
    uncond_branches=frozenset({"j", "jr", "tail"}),
    calls=frozenset({"jal", "jalr", "call"}),
    returns=frozenset({"ret"}),
    comparators={
        "blt": "<", "bge": "<", "bltu": "<", "bgeu": "<", "bltz": "<", "bgez": "<",
        "bgt": ">", "ble": ">", "bgtu": ">", "bleu": ">", "bgtz": ">", "blez": ">",
        "beq": "==", "beqz": "==",
        "bne": "!=", "bnez": "!=",
    },
    shifts={"sra": ">>", "srai": ">>", "srl": ">>", "srli": ">>", "sll": "<<", "slli": "<<"},
    logic={"and": "&", "andi": "&", "or": "|", "ori": "|"},
    registers=frozenset(_RV_ABI + [f"x{i}" for i in range(32)]),
)

ARCHES = {"cortex-m": CORTEX_M, "riscv": RISCV}


def get_arch(name: str | Arch) -> Arch:
    if isinstance(name, Arch):
        return name
    try:
        return ARCHES[name]
    except KeyError:
        raise DisasmError(f"unknown architecture {name!r}; choose from {sorted(ARCHES)}") from None


def strip_suffix(mnemonic: str) -> str:
    """Drop width qualifiers such as ``.n``/``.w`` (``bge.n`` -> ``bge``)."""
    return mnemonic.lower().split(".", 1)[0]


# -- classification -----------------------------------------------------------


class Kind(str, enum.Enum):
    COMPARE_BRANCH = "CompareBranch"
    UNCOND_BRANCH = "UncondBranch"
    CALL = "Call"
    SHIFT = "Shift"
    BIT_LOGIC = "BitLogic"
    COMPUTE = "Compute"
    OTHER = "Other"


@dataclass(frozen=True)
class InstrClass:
    kind: Kind
    token: str | None = None


_COMPUTE = frozenset(
    """add adds adc adcs sub subs sbc sbcs rsb rsbs mul muls mla mls smull umull smlal umlal
    smlabb smlad smlal smulbb sdiv udiv mov movs movw movt mvn mvns ldr ldrb ldrh ldrsb ldrsh ldrd
    ldm ldmia str strb strh strd stm stmia push pop cmp cmn tst teq eor eors bic bics sxtb sxth
    uxtb uxth ssat usat qadd qsub sxtab sxtah uxtab ror rors nop addw subw adr
    addi sub mul mulh div rem li la lui auipc lw lh lb lbu lhu sw sh sb mv neg xor xori slt sltu
    slti sltiu""".split()
)


@dataclass(frozen=True)
class CpiTable:
    architecture: str
    entries: dict  # mnemonic -> Fraction
    default: Fraction = Fraction(1)
    taken: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in list(self.entries.items()) + list(self.taken.items()) + [("default", self.default)]:
            if v <= 0:
                raise ValueError(f"CPI for {k!r} must be positive, got {v}")

    def cycles(self, mnemonic: str, branch: bool = False) -> Fraction:
        base = strip_suffix(mnemonic)
        if branch and base in self.taken:
            return self.taken[base]
        if base in self.entries:
            return self.entries[base]
        # flag-setting forms (adds, lsls, ...) fall back to the plain mnemonic
        if not branch and base.endswith("s") and base[:-1] in self.entries:
            return self.entries[base[:-1]]
        return self.default

    def to_dict(self) -> dict:
        def num(x: Fraction):
            return int(x) if x.denominator == 1 else str(x)

        return {
            "architecture": self.architecture,
            "default": num(self.default),
            "entries": {k: num(v) for k, v in sorted(self.entries.items())},
            "taken": {k: num(v) for k, v in sorted(self.taken.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CpiTable":
        def frac(x):
            return Fraction(str(x))

        return cls(
            architecture=doc.get("architecture", ""),
            entries={k.lower(): frac(v) for k, v in doc.get("entries", {}).items()},
            default=frac(doc.get("default", 1)),
            taken={k.lower(): frac(v) for k, v in doc.get("taken", {}).items()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "CpiTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def classify_instruction(mnemonic: str, cpi: CpiTable, arch: str | Arch = "cortex-m") -> tuple[InstrClass, Fraction]:
    a = get_arch(arch)
    base = strip_suffix(mnemonic)
    is_branch = base in a.cond_branches or base in a.uncond_branches
    cycles = cpi.cycles(base, branch=is_branch)
    if base in a.comparators:
        return InstrClass(Kind.COMPARE_BRANCH, a.comparators[base]), cycles
    if base in a.cond_branches:
        # flag tests such as bmi/bvs have no source comparator
        return InstrClass(Kind.OTHER), cycles
    if base in a.uncond_branches or base in a.returns:
        return InstrClass(Kind.UNCOND_BRANCH), cycles
    if base in a.calls:
        return InstrClass(Kind.CALL), cycles
    if base in a.shifts:
        return InstrClass(Kind.SHIFT, a.shifts[base]), cycles
    if base in a.logic:
        return InstrClass(Kind.BIT_LOGIC, a.logic[base]), cycles
    if base in _COMPUTE or base in cpi.entries:
        return InstrClass(Kind.COMPUTE), cycles
    return InstrClass(Kind.OTHER), cycles


# -- control flow -------------------------------------------------------------

_TARGET = re.compile(r"^(?:0x)?([0-9a-f]+)(?:\s+<([^>]+)>)?$")


def branch_target(instr: Instruction) -> tuple[int | None, str | None]:
    """Direct target address and symbol of a branch/call, if any."""
    for op in reversed(instr.operands):
        m = _TARGET.match(op.strip())
        if m:
            return int(m.group(1), 16), m.group(2)
    return None, None


def _role(instr: Instruction, a: Arch) -> str:
    base = instr.base
    if base in a.calls:
        if a is RISCV and base == "jal" and instr.operands and instr.operands[0] in ("zero", "x0"):
            return "jump"
        if a is RISCV and base == "jalr" and instr.operands and instr.operands[0] in ("zero", "x0"):
            return "return"
        return "call"
    if base in a.returns and (a is RISCV or (instr.operands and instr.operands[-1] == "lr")):
        return "return"
    if base == "pop" and any("pc" in op for op in instr.operands):
        return "return"
    if base in ("ldr", "mov") and instr.operands and instr.operands[0] == "pc":
        return "return"
    if base in a.cond_branches:
        return "cond"
    if base in a.uncond_branches:
        return "jump"
    return "plain"


@dataclass(frozen=True)
class BinCfg:
    """A binary CFG plus the edges that left the function."""

    cfg: Cfg
    external: tuple[tuple[int, int], ...] = ()


def build_bin_cfg_ex(fn: BinFunction, arch: str | Arch = "cortex-m") -> BinCfg:
    a = get_arch(arch)
    instrs = fn.instructions
    addrs = {ins.address: i for i, ins in enumerate(instrs)}
    roles = [_role(ins, a) for ins in instrs]
    targets = [branch_target(ins)[0] if r in ("cond", "jump") else None for ins, r in zip(instrs, roles)]

    leaders = {0}
    for i, (r, t) in enumerate(zip(roles, targets)):
        if r in ("cond", "jump", "return"):
            if i + 1 < len(instrs):
                leaders.add(i + 1)
        if t is not None and t in addrs:
            leaders.add(addrs[t])
    starts = sorted(leaders)
    block_of = {}
    blocks = []
    for b, s in enumerate(starts):
        end = starts[b + 1] if b + 1 < len(starts) else len(instrs)
        blocks.append(instrs[s:end])
        for i in range(s, end):
            block_of[i] = b

    edges, external = [], []
    for b, s in enumerate(starts):
        last = (starts[b + 1] if b + 1 < len(starts) else len(instrs)) - 1
        r, t = roles[last], targets[last]
        falls = r in ("plain", "cond") and last + 1 < len(instrs)
        if r in ("cond", "jump"):
            if t is not None and t in addrs:
                edges.append((b, block_of[addrs[t]]))
            elif t is not None:
                external.append((b, t))
                log.warning("%s: branch at %#x leaves the function (target %#x)", fn.symbol, instrs[last].address, t)
        if falls:
            edges.append((b, b + 1))
    nodes = [Node(b, tuple(block)) for b, block in enumerate(blocks)]
    return BinCfg(build_cfg(nodes, edges, 0), tuple(external))


def build_bin_cfg(fn: BinFunction, arch: str | Arch = "cortex-m") -> Cfg:
    return build_bin_cfg_ex(fn, arch).cfg


def function_from_cfg_doc(doc: dict) -> BinFunction:
    """Recover a BinFunction from a CFG document whose node text holds listing lines."""
    lines = []
    for node in sorted(doc["nodes"], key=lambda n: n["id"]):
        lines.extend(node.get("text", []))
    symbol = doc.get("name") or doc.get("symbol")
    if not symbol:
        raise DisasmError("binary CFG document lacks a 'name'")
    instrs = []
    for lineno, line in enumerate(lines, 1):
        ins = _parse_instruction(line, lineno)
        if ins is not None:
            instrs.append(ins)
    instrs.sort(key=lambda i: i.address)
    return BinFunction(symbol, tuple(instrs))


# -- semantic features --------------------------------------------------------

_IMM = re.compile(r"#(-?(?:0x[0-9a-fA-F]+|\d+))\b")
_BARE_INT = re.compile(r"^(-?(?:0x[0-9a-fA-F]+|\d+))(?:\(.*\))?$")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*")


def _comment_names(comment: str, a: Arch) -> list[str]:
    text = re.sub(r"<[^>]*>", " ", comment)
    text = re.sub(r"\b(?:0x)?[0-9a-fA-F]+\b", " ", text)
    return [t for t in _IDENT.findall(text) if t.lower() not in a.registers]


def instruction_integers(instr: Instruction, a: Arch) -> list[int]:
    role = _role(instr, a)
    if role != "plain":
        # branch/call operands are addresses; cbz/beqz compare with an implicit zero
        return []
    out = [int(v, 0) for v in _IMM.findall(" ".join(instr.operands))]
    if a is RISCV:
        for op in instr.operands:
            m = _BARE_INT.match(op.strip())
            if m:
                out.append(int(m.group(1), 0))
    return out


def extract_bin_semantics(loop: Loop, fn: BinFunction, cfg: Cfg | None = None,
                          arch: str | Arch = "cortex-m", cpi: CpiTable | None = None) -> FeatureBundle:
    a = get_arch(arch)
    cfg = cfg or build_bin_cfg(fn, a)
    cpi = cpi or CpiTable(a.name, {})
    bundle = FeatureBundle()
    for node in cfg.nodes:
        if node.id not in loop.body:
            continue
        for instr in node.payload:
            role = _role(instr, a)
            if role == "call":
                _, sym = branch_target(instr)
                if sym:
                    bundle.function_names[sym.split("+")[0]] += 1
            bundle.variable_names.update(_comment_names(instr.comment, a))
            bundle.integers.update(instruction_integers(instr, a))
            cls, _ = classify_instruction(instr.mnemonic, cpi, a)
            if cls.token is not None:
                bundle.comparators[cls.token] += 1
    return bundle


def instructions_in(cfg: Cfg, node_ids: Iterable[int]) -> list[Instruction]:
    wanted = set(node_ids)
    return [ins for n in cfg.nodes if n.id in wanted for ins in n.payload]


def mnemonic_histogram(instrs: Iterable[Instruction]) -> Counter:
    return Counter(i.base for i in instrs)
