#!/usr/bin/env python3
"""Regenerate the bundled fixture kernels under src/instmeter/fixtures/.

Each kernel is described once as a loop nest; the script emits a source CFG
descriptor (statement text per node, while-shaped loops) and a GNU
objdump-style Thumb listing of the same nest (rotated loops closed by a
backward conditional branch), plus a ``.meta.json`` naming every latch
address and its trip expression for the trace-simulation tests.
"""

import hashlib
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "instmeter" / "fixtures"


def loop(var, trip, cmp="<", src_pre=(), bin_pre=(), children=(), src_post=(), bin_post=(), annotate=False):
    return dict(var=var, trip=trip, cmp=cmp, src_pre=list(src_pre), bin_pre=list(bin_pre),
                children=list(children), src_post=list(src_post), bin_post=list(bin_post), annotate=annotate)


MAC = ["ldrsb.w r0, [r1], #1", "ldrsb.w r2, [r3], #1", "smlabb r12, r0, r2, r12"]
REQUANT = ["smull r0, r2, r12, lr", "asrs r0, r2, #7", "ssat r0, #8, r0", "strb.w r0, [r6], #1"]

KERNELS = {
    "arm_mini_kernel": dict(
        params=["filter_dims", "kernel_y", "n"],
        src_prologue=["int32_t i_ker_x = 0;"],
        bin_prologue=["push {r4, r5, r6, r7, lr}"],
        loops=[
            loop("i_ker_x", "filter_dims", "<", annotate=True, children=[
                loop("k_y", "kernel_y", ">", src_pre=["memset(buf, 0, n);"], bin_pre=["strb r2, [r3, r5]"]),
                loop("j", "n", "<", src_pre=["acc[j] = 0;"], bin_pre=["movs r2, #0", "str r2, [r1, r6]"]),
            ]),
        ],
    ),
    "arm_convolve_s8": dict(
        params=["batch", "out_h", "out_w", "out_c", "kh", "kw", "in_c"],
        loops=[loop("i_batch", "batch", children=[
            loop("i_out_y", "out_h", children=[
                loop("i_out_x", "out_w", children=[
                    loop("i_out_ch", "out_c", src_pre=["acc = bias[i_out_ch];"], bin_pre=["ldr.w r12, [r9, r7, lsl #2]"],
                         children=[loop("i_ker_y", "kh", children=[
                             loop("i_ker_x", "kw", children=[
                                 loop("i_input_ch", "in_c", src_pre=["acc += input[in_idx] * filter[k_idx];"], bin_pre=MAC),
                             ]),
                         ])],
                         src_post=["acc = arm_nn_requantize(acc, mult, shift);", "output[o_idx] = acc;"],
                         bin_post=REQUANT),
                ]),
            ]),
        ])],
    ),
    "arm_convolve_1x1_s8_fast": dict(
        params=["batch", "out_h", "out_w", "out_c", "in_c"],
        loops=[loop("i_pix", "batch * out_h * out_w", children=[
            loop("i_out_ch", "out_c", children=[
                loop("i_in", "ceil_div(in_c, 4)", "!=", src_pre=["acc = __SMLAD(in4, w4, acc);"],
                     bin_pre=["ldr.w r0, [r1], #4", "ldr.w r2, [r3], #4", "sxtb16 r4, r0", "sxtb16 r5, r2", "smlad r12, r4, r5, r12"]),
            ], src_post=["output[o] = requantize(acc);"], bin_post=REQUANT),
        ])],
    ),
    "arm_convolve_1_x_n_s8": dict(
        params=["batch", "out_h", "out_w", "out_c", "kh", "kw", "in_c"],
        loops=[loop("i_out_x", "batch * out_h * out_w", children=[
            loop("i_out_ch", "out_c", children=[
                loop("i_ker", "kh * kw", children=[
                    loop("i_in", "ceil_div(in_c, 2)", src_pre=["acc = __SMLAD(a, b, acc);"],
                         bin_pre=["ldrsh.w r0, [r1], #2", "ldrsh.w r2, [r3], #2", "smlad r12, r0, r2, r12"]),
                ]),
            ], src_post=["output[o] = requantize(acc);"], bin_post=REQUANT),
        ])],
    ),
    "arm_depthwise_conv_3x3": dict(
        params=["out_h", "out_w", "in_c"],
        loops=[loop("i_out_y", "out_h", children=[
            loop("i_out_x", "out_w", children=[
                loop("i_ch", "ceil_div(in_c, 4)", "!=", src_pre=["acc = dw3x3_tap9(in, w, acc);"],
                     bin_pre=["ldr.w r0, [r1], #4", "ldr.w r2, [r3], #4", "smlad r12, r0, r2, r12"] * 3 + REQUANT),
            ]),
        ])],
    ),
    "arm_depthwise_conv_s8": dict(
        params=["batch", "out_h", "out_w", "out_c", "kh", "kw"],
        loops=[loop("i_batch", "batch", children=[
            loop("i_out_y", "out_h", children=[
                loop("i_out_x", "out_w", children=[
                    loop("i_ch", "out_c", children=[
                        loop("i_ker_y", "kh", children=[
                            loop("i_ker_x", "kw", src_pre=["acc += in[i] * w[k];"], bin_pre=MAC),
                        ]),
                    ], src_post=["out[o] = requantize(acc);"], bin_post=REQUANT),
                ]),
            ]),
        ])],
    ),
    "arm_fully_connected_s8": dict(
        params=["batch", "out_features", "in_features"],
        loops=[loop("i_batch", "batch", children=[
            loop("i_out", "out_features", children=[
                loop("i_in", "ceil_div(in_features, 4)", "!=", src_pre=["acc = __SMLAD(x4, w4, acc);"],
                     bin_pre=["ldr.w r0, [r1], #4", "ldr.w r2, [r3], #4", "smlad r12, r0, r2, r12"]),
            ], src_post=["out[o] = requantize(acc);"], bin_post=REQUANT),
        ])],
    ),
    "arm_max_pool_s8": dict(
        params=["out_h", "out_w", "in_c", "kh", "kw"],
        loops=[loop("i_y", "out_h", children=[
            loop("i_x", "out_w", children=[
                loop("i_ker_y", "kh", children=[
                    loop("i_ker_x", "kw", children=[
                        loop("i_ch", "in_c", src_pre=["if (in[i] > m[c]) m[c] = in[i];"],
                             bin_pre=["ldrsb.w r0, [r1], #1", "ldrsb.w r2, [r3, r7]", "cmp r0, r2", "it gt", "strbgt r0, [r3, r7]"]),
                    ]),
                ]),
            ]),
        ])],
    ),
    "arm_avgpool_s8": dict(
        params=["out_h", "out_w", "in_c", "kh", "kw"],
        loops=[loop("i_y", "out_h", children=[
            loop("i_x", "out_w", children=[
                loop("i_ch", "in_c", children=[
                    loop("i_k", "kh * kw", src_pre=["sum += in[i];"], bin_pre=["ldrsb.w r0, [r1], #1", "add r12, r0"]),
                ], src_post=["out[o] = sum / count;"], bin_post=["sdiv r0, r12, r8", "strb.w r0, [r6], #1"]),
            ]),
        ])],
    ),
    "ReluQuantized": dict(
        params=["n"],
        loops=[loop("i", "n", src_pre=["out[i] = max(in[i], zero_point);"],
                    bin_pre=["ldrsb.w r0, [r1], #1", "cmp r0, r8", "it lt", "movlt r0, r8", "strb.w r0, [r6], #1"])],
    ),
    "arm_elementwise_add_s8": dict(
        params=["n"],
        loops=[loop("i", "ceil_div(n, 4)", "!=", src_pre=["sum4 = __SADD16(a4, b4);", "out4 = __SSAT(sum4, 8);"],
                    bin_pre=["ldr.w r0, [r1], #4", "ldr.w r2, [r3], #4", "sadd16 r0, r0, r2", "lsls r0, r0, #1", "ssat r0, #8, r0", "str.w r0, [r6], #4"])],
    ),
    "arm_elementwise_mul_s8": dict(
        params=["n"],
        loops=[loop("i", "n", src_pre=["out[i] = requantize(a[i] * b[i]);"],
                    bin_pre=["ldrsb.w r0, [r1], #1", "ldrsb.w r2, [r3], #1", "mul r0, r2", "asrs r0, r0, #7", "ssat r0, #8, r0", "strb.w r0, [r6], #1"])],
    ),
    "arm_softmax_s8": dict(
        params=["batch", "classes"],
        loops=[loop("row", "batch", children=[
            loop("i_max", "classes", "<", src_pre=["if (in[i_max] > m) m = in[i_max];"],
                 bin_pre=["ldrsb.w r0, [r1, r5]", "cmp r0, r8", "it gt", "movgt r8, r0"]),
            loop("i_sum", "classes", ">", src_pre=["sum += exp_on_negative_values(in[i_sum] - m);"],
                 bin_pre=["ldrsb.w r0, [r1], #1", "subs r0, r0, r8", "bl 8000f00 <exp_on_negative_values>", "add r9, r0"]),
            loop("i_out", "classes", "!=", src_pre=["out[i_out] = (in[i_out] - m) >> shift;"],
                 bin_pre=["ldrsb.w r0, [r1, r7]", "subs r0, r0, r8", "asrs r0, r0, r10", "strb r0, [r6, r7]"]),
        ])],
    ),
    "reshapeOutput": dict(
        params=["n"],
        src_prologue=["memcpy(out, in, n);"],
        bin_prologue=["push {r4, lr}", "bl 8000e00 <memcpy>"],
        loops=[],
    ),
}


class Emitter:
    def __init__(self, symbol, base):
        self.symbol = symbol
        self.base = base
        self.addr = base
        self.lines = []  # (addr, text-with-placeholders)
        self.labels = {}
        self.latches = {}

    def emit(self, text, comment=None):
        mnem = text.split()[0]
        wide = mnem.endswith(".w") or mnem in ("bl", "smull", "smlabb", "smlad", "sxtb16", "sadd16", "ssat", "sdiv", "mul", "movw")
        size = 4 if wide else 2
        self.lines.append((self.addr, size, text, comment))
        self.addr += size
        return self.lines[-1][0]

    def render(self):
        out = [f"{self.base:08x} <{self.symbol}>:"]
        for addr, size, text, comment in self.lines:
            mnem, _, ops = text.partition(" ")
            if "@" in ops:
                label = ops.split("@", 1)[1]
                target = self.labels[label]
                ops = ops.split("@", 1)[0] + f"{target:x} <{self.symbol}+0x{target - self.base:x}>"
            digest = hashlib.sha1(f"{addr}{text}".encode()).hexdigest()
            hexw = digest[:4] if size == 2 else f"{digest[:4]} {digest[4:8]}"
            line = f" {addr:7x}:\t{hexw:<10}\t{mnem}\t{ops}" if ops else f" {addr:7x}:\t{hexw:<10}\t{mnem}"
            if comment:
                line += f"\t; {comment}"
            out.append(line)
        return "\n".join(out)


def emit_bin(kernel, symbol, base):
    e = Emitter(symbol, base)
    for t in kernel.get("bin_prologue", ["push {r4, r5, r6, r7, r8, r9, r10, r11, lr}"]):
        e.emit(t)
    counter = [0]

    def emit_loop(lp, depth):
        counter[0] += 1
        label = f"L{counter[0]}"
        c, b = f"r{4 + depth % 4}", f"r{8 + depth % 4}"
        slot = 4 * (counter[0] % 16)
        if lp["cmp"] == ">":
            e.emit(f"ldr {c}, [sp, #{slot}]")
        else:
            e.emit(f"movs {c}, #0")
            e.emit(f"ldr {b}, [sp, #{slot}]")
        e.labels[label] = e.addr
        for t in lp["bin_pre"]:
            e.emit(t)
        for child in lp["children"]:
            emit_loop(child, depth + 1)
        for t in lp["bin_post"]:
            e.emit(t)
        note = lp["var"] if lp["annotate"] else None
        if lp["cmp"] == ">":
            e.emit(f"subs {c}, #1", note)
            e.emit(f"cmp {c}, #0")
            latch = e.emit(f"bgt.n @{label}")
        else:
            e.emit(f"adds {c}, #1", note)
            e.emit(f"cmp {c}, {b}")
            br = "blt.n" if lp["cmp"] == "<" else "bne.n"
            latch = e.emit(f"{br} @{label}")
        e.latches[f"{latch:x}"] = lp["trip"]

    for lp in kernel["loops"]:
        emit_loop(lp, 0)
    pop = kernel.get("bin_prologue", ["push {r4, r5, r6, r7, r8, r9, r10, r11, lr}"])[0].replace("push", "pop").replace("lr", "pc")
    e.emit(pop)
    return e.render(), e.latches


def emit_src(kernel, name):
    nodes, edges, trips = [], [], {}

    def node(lines):
        nodes.append({"id": len(nodes), "text": list(lines)})
        return len(nodes) - 1

    def link(a, b):
        edges.append({"from": a, "to": b})

    def trip_text(expr):
        return expr if all(ch.isalnum() or ch == "_" for ch in expr) else f"({expr})"

    def emit_loop(lp, prev):
        v = lp["var"]
        if lp["cmp"] == ">":
            init = node([f"{v} = {lp['trip']};"])
            cond = node([f"{v} > 0"])
        else:
            init = node([f"{v} = 0;"])
            cond = node([f"{v} {lp['cmp']} {trip_text(lp['trip'])}"])
        link(prev, init)
        link(init, cond)
        trips[str(cond)] = lp["trip"]
        cur = cond
        if lp["src_pre"]:
            n = node(lp["src_pre"])
            link(cur, n)
            cur = n
        for child in lp["children"]:
            cur = emit_loop(child, cur)
        if lp["src_post"]:
            n = node(lp["src_post"])
            link(cur, n)
            cur = n
        inc = node([f"{v}--;" if lp["cmp"] == ">" else f"{v}++;"])
        link(cur, inc)
        link(inc, cond)
        return cond  # loop exit leaves from the header

    entry = node(kernel.get("src_prologue", [f"/* {name} */"]))
    cur = entry
    for lp in kernel["loops"]:
        cur = emit_loop(lp, cur)
    ret = node(["return;"])
    link(cur, ret)
    return {"name": name, "entry": entry, "nodes": nodes, "edges": edges, "trip_exprs": trips}


CPI_CORTEX_M4 = {
    "architecture": "cortex-m",
    "source": "Cortex-M4 TRM instruction timing; loads/stores at 2, branches at 1 + pipeline refill.",
    "default": 1,
    "entries": {
        "mov": 1, "movs": 1, "movw": 1, "movt": 1, "mvn": 1, "add": 1, "adds": 1, "adc": 1, "sub": 1,
        "subs": 1, "rsb": 1, "cmp": 1, "cmn": 1, "tst": 1, "and": 1, "orr": 1, "eor": 1, "bic": 1,
        "lsl": 1, "lsls": 1, "lsr": 1, "lsrs": 1, "asr": 1, "asrs": 1, "mul": 1, "muls": 1, "mla": 2,
        "mls": 2, "smull": 1, "umull": 1, "smlal": 1, "smlabb": 1, "smlad": 1, "sxtb16": 1,
        "sadd16": 1, "ssat": 1, "usat": 1, "sdiv": 7, "udiv": 7, "ldr": 2, "ldrb": 2, "ldrh": 2,
        "ldrsb": 2, "ldrsh": 2, "str": 2, "strb": 2, "strh": 2, "strbgt": 2, "movlt": 1, "movgt": 1,
        "it": 1, "push": 5, "pop": 5, "b": 3, "bl": 4, "bx": 3, "blt": 2, "bgt": 2, "bne": 2,
        "beq": 2, "bge": 2, "ble": 2, "cbz": 2, "cbnz": 2, "nop": 1,
    },
}

CPI_ESP32C3 = {
    "architecture": "riscv",
    "source": "illustrative values; measure per instruction type on the target before use.",
    "default": 1,
    "entries": {
        "addi": 1, "add": 1, "sub": 1, "mul": 1, "div": 33, "lw": 2, "lb": 2, "lbu": 2, "sw": 1,
        "sb": 1, "slli": 1, "srai": 1, "srli": 1, "andi": 1, "beq": 2, "bne": 2, "blt": 2, "bge": 2,
        "j": 2, "jal": 2, "ret": 2, "li": 1, "mv": 1,
    },
}


def main():
    kdir = OUT / "kernels"
    kdir.mkdir(parents=True, exist_ok=True)
    base = 0x08000100
    specs = []
    for name, kernel in KERNELS.items():
        listing, latches = emit_bin(kernel, name, base)
        src = emit_src(kernel, name)
        (kdir / f"{name}.s").write_text(listing + "\n")
        (kdir / f"{name}.src.json").write_text(json.dumps(src, indent=1) + "\n")
        meta = {"kernel": name, "params": kernel["params"], "latches": latches}
        (kdir / f"{name}.meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        spec = {"kernel": name, "symbol": name, "src_cfg": f"{name}.src.json", "disasm": f"{name}.s"}
        (kdir / f"{name}.kernel.json").write_text(json.dumps(spec, indent=1, sort_keys=True) + "\n")
        specs.append(f"kernels/{name}.kernel.json")
        base += 0x400
    (OUT / "cpi_cortex_m4.json").write_text(json.dumps(CPI_CORTEX_M4, indent=1, sort_keys=True) + "\n")
    (OUT / "cpi_esp32c3.json").write_text(json.dumps(CPI_ESP32C3, indent=1, sort_keys=True) + "\n")
    manifest = {
        "architecture": "cortex-m",
        "tflm_version_tag": "fixture-v1",
        "cpi": "cpi_cortex_m4.json",
        "seed": 42,
        "kernels": specs,
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
