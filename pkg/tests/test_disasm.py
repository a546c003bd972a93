from fractions import Fraction

import pytest

from instmeter.cfgcore import RelationKind, extract_loops, loop_relation
from instmeter.disasm import (
    BinFunction,
    CpiTable,
    DisasmError,
    Kind,
    build_bin_cfg,
    build_bin_cfg_ex,
    classify_instruction,
    extract_bin_semantics,
    parse_disasm,
    parse_listing,
)
from instmeter.features import COMPARATORS

CPI = CpiTable("cortex-m", {"add": Fraction(1), "ldr": Fraction(2)})

NESTED = """\
Disassembly of section .text:

08000100 <nested>:
 8000100:\t2400      \tmovs\tr4, #0
 8000102:\t2500      \tmovs\tr5, #0
 8000104:\t4413      \tadd\tr3, r2
 8000106:\t3501      \tadds\tr5, #1
 8000108:\t2d08      \tcmp\tr5, #8
 800010a:\tdbfb      \tblt.n\t8000104 <nested+0x4>
 800010c:\t3401      \tadds\tr4, #1
 800010e:\t42b4      \tcmp\tr4, r6
 8000110:\tdbf7      \tblt.n\t8000102 <nested+0x2>
 8000112:\tf7ff fff5 \tbl\t8000100 <memcpy>
 8000116:\t4770      \tbx\tlr
 8000118:\t20000000 \t.word\t0x20000000
"""


def test_parse_spec_line():
    fns = parse_disasm("08000100 <f>:\n08000134: f04f 0300  mov.w r3, #0\n")
    ins = fns[0].instructions[0]
    assert ins.address == 0x8000134
    assert ins.mnemonic == "mov.w"
    assert ins.operands == ("r3", "#0")


def test_parse_branch_target():
    fns = parse_disasm("080001a0 <L2>:\n 8000190:\tdb06 \tblt.n\t80001a0 <L2>\n")
    ins = fns[0].instructions[0]
    assert ins.mnemonic == "blt.n"
    assert ins.operands == ("80001a0 <L2>",)
    cls, _ = classify_instruction(ins.mnemonic, CPI)
    assert cls.kind is Kind.COMPARE_BRANCH and cls.token == "<"


def test_parse_errors_and_skips():
    with pytest.raises(DisasmError, match="no functions"):
        parse_disasm(" 8000100:\t2400 \tmovs\tr4, #0\n")
    with pytest.raises(DisasmError, match="address"):
        parse_disasm("08000100 <f>:\n  80zz:\t2400 \tmovs\tr4, #0\n")
    res = parse_listing(NESTED)
    assert res.skipped == 2  # section header, literal pool
    assert len(res.functions[0].instructions) == 11


def test_operands_respect_brackets():
    fns = parse_disasm("08000100 <f>:\n 8000100:\tb5f0 \tpush\t{r4, r5, lr}\n 8000102:\t6813 \tldr\tr3, [r2, #4]\n")
    assert fns[0].instructions[0].operands == ("{r4, r5, lr}",)
    assert fns[0].instructions[1].operands == ("r3", "[r2, #4]")


def test_roundtrip():
    fns = parse_disasm(NESTED)
    again = parse_disasm("\n".join(f.to_listing() for f in fns))
    assert again == fns
    assert [BinFunction.from_dict(f.to_dict()) for f in fns] == fns


@pytest.mark.parametrize(
    "mnemonic, kind, token",
    [
        ("blt", Kind.COMPARE_BRANCH, "<"),
        ("bge", Kind.COMPARE_BRANCH, "<"),
        ("bgt", Kind.COMPARE_BRANCH, ">"),
        ("ble", Kind.COMPARE_BRANCH, ">"),
        ("beq", Kind.COMPARE_BRANCH, "=="),
        ("bne.n", Kind.COMPARE_BRANCH, "!="),
        ("cbz", Kind.COMPARE_BRANCH, "=="),
        ("cbnz", Kind.COMPARE_BRANCH, "!="),
        ("asrs", Kind.SHIFT, ">>"),
        ("lsls", Kind.SHIFT, "<<"),
        ("lsl.w", Kind.SHIFT, "<<"),
        ("and", Kind.BIT_LOGIC, "&"),
        ("orr", Kind.BIT_LOGIC, "|"),
        ("b.n", Kind.UNCOND_BRANCH, None),
        ("bl", Kind.CALL, None),
        ("add", Kind.COMPUTE, None),
        ("frobnicate", Kind.OTHER, None),
    ],
)
def test_classify_table(mnemonic, kind, token):
    cls, _ = classify_instruction(mnemonic, CPI)
    assert cls.kind is kind
    assert cls.token == token


def test_classify_cycles():
    assert classify_instruction("add", CPI) == (classify_instruction("add", CPI)[0], Fraction(1))
    assert classify_instruction("ldr.w", CPI)[1] == 2
    assert classify_instruction("adds", CPI)[1] == 1  # flag-setting form
    assert classify_instruction("frobnicate", CPI)[1] == CPI.default


def test_riscv_classes():
    for m, tok in [("blt", "<"), ("bgeu", "<"), ("bnez", "!="), ("slli", "<<"), ("srai", ">>"), ("andi", "&")]:
        assert classify_instruction(m, CPI, "riscv")[0].token == tok


def test_table1_alphabet_total():
    from instmeter.disasm import ARCHES

    for arch in ARCHES.values():
        for table in (arch.comparators, arch.shifts, arch.logic):
            assert set(table.values()) <= set(COMPARATORS)


def test_taken_cpi_for_branches():
    cpi = CpiTable("cortex-m", {"blt": Fraction(1)}, taken={"blt": Fraction(3)})
    assert classify_instruction("blt.n", cpi)[1] == 3
    assert classify_instruction("blt.n", CpiTable("cortex-m", {"blt": Fraction(1)}))[1] == 1


def test_cpi_must_be_positive():
    with pytest.raises(ValueError):
        CpiTable("x", {"add": Fraction(0)})


def test_straight_line_single_block():
    fn = parse_disasm("08000100 <f>:\n 8000100:\t2400 \tmovs\tr4, #0\n 8000102:\t4413 \tadd\tr3, r2\n 8000104:\t4413 \tadd\tr3, r2\n")[0]
    cfg = build_bin_cfg(fn)
    assert len(cfg.nodes) == 1 and cfg.edges == ()


def test_back_branch_makes_loop():
    fn = parse_disasm(
        "08000100 <f>:\n 8000100:\t2400 \tmovs\tr4, #0\n 8000102:\t3401 \tadds\tr4, #1\n"
        " 8000104:\t42b4 \tcmp\tr4, r6\n 8000106:\tdbfc \tblt.n\t8000102 <f+0x2>\n 8000108:\t4770 \tbx\tlr\n"
    )[0]
    cfg = build_bin_cfg(fn)
    loops = extract_loops(cfg)
    assert len(loops) == 1
    assert loops[0].body == {1}


def test_nested_backward_branches():
    fn = parse_disasm(NESTED)[0]
    cfg = build_bin_cfg(fn)
    loops = extract_loops(cfg)
    assert len(loops) == 2
    outer, inner = loops
    assert loop_relation(inner, outer).kind is RelationKind.SUBSET
    # partition property
    flat = [ins for n in cfg.nodes for ins in n.payload]
    assert flat == list(fn.instructions)


def test_external_branch_dropped():
    fn = parse_disasm("08000100 <f>:\n 8000100:\t2400 \tmovs\tr4, #0\n 8000102:\te000 \tb.n\t8000200 <g>\n")[0]
    res = build_bin_cfg_ex(fn)
    assert res.external == ((0, 0x8000200),)
    assert res.cfg.edges == ()


def test_bin_semantics():
    fn = parse_disasm(NESTED)[0]
    cfg = build_bin_cfg(fn)
    outer, inner = extract_loops(cfg)
    inner_f = extract_bin_semantics(inner, fn, cfg)
    assert inner_f.comparators == {"<": 1}
    assert inner_f.integers == {1: 1, 8: 1}
    assert not inner_f.function_names
    whole = extract_bin_semantics(outer, fn, cfg)
    assert whole.comparators == {"<": 2}


def test_bin_semantics_call_and_annotation():
    text = (
        "08000100 <f>:\n 8000100:\t2400 \tmovs\tr4, #0\n"
        " 8000102:\tf7ff fff5 \tbl\t8000300 <memcpy>\n"
        " 8000106:\t3401 \tadds\tr4, #1\t; i_ker_x\n"
        " 8000108:\t2c00 \tcmp\tr4, #0\n"
        " 800010a:\tdcfa \tbgt.n\t8000102 <f+0x2>\n"
        " 800010c:\t4770 \tbx\tlr\n"
    )
    fn = parse_disasm(text)[0]
    cfg = build_bin_cfg(fn)
    (loop,) = extract_loops(cfg)
    f = extract_bin_semantics(loop, fn, cfg)
    assert f.function_names == {"memcpy": 1}
    assert f.variable_names == {"i_ker_x": 1}
    assert f.comparators == {">": 1}
