"""Emit demo model descriptors and a synthetic measurement CSV.

Cycle counts come from the bundled fixture library; energy and latency are
drawn from a line in cycles with 5% multiplicative noise.  The numbers are
made up for exercising the CLI and carry no hardware meaning.
"""

import csv
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from instmeter.instlib import build_library, model_cycles  # noqa: E402
from instmeter.modelparse import load_model, lower_layers  # noqa: E402

FIX = ROOT / "src" / "instmeter" / "fixtures"
A_ENERGY, B_ENERGY = 2.5e-9, 1.5e-3
CLOCK_HZ, B_LATENCY = 80e6, 4e-4


def random_model(rng, name):
    h = int(rng.choice([8, 12, 16, 24]))
    c = int(rng.choice([1, 3, 4]))
    layers = []
    for _ in range(int(rng.integers(1, 4))):
        k = int(rng.choice([1, 3, 5]))
        out_c = int(rng.choice([4, 8, 16]))
        if rng.random() < 0.3 and k == 3:
            layers.append({"type": "DepthConv2D", "params": {"in_h": h, "in_w": h, "in_c": c, "kh": 3, "kw": 3, "pad": 1}})
        else:
            pad = k // 2
            layers.append({"type": "Conv2D", "params": {"in_h": h, "in_w": h, "in_c": c, "out_c": out_c,
                                                        "kh": k, "kw": k, "pad": pad}})
            c = out_c
        layers.append({"type": "ReLU", "params": {"h": h, "w": h, "c": c}})
        if rng.random() < 0.3:
            layers.append({"type": "BatchNormalization", "params": {"h": h, "w": h, "c": c}})
    layers.append({"type": "AvgPool2D", "params": {"in_h": h, "in_w": h, "in_c": c, "kh": 2, "kw": 2, "stride": 2}})
    h //= 2
    layers.append({"type": "Reshape", "params": {"n": h * h * c}})
    layers.append({"type": "FullyConnected", "params": {"in_features": h * h * c, "out_features": 10}})
    layers.append({"type": "Softmax", "params": {"classes": 10}})
    return {"name": name, "layers": layers}


def main():
    lib = build_library(FIX / "manifest.json")
    rng = np.random.default_rng(20240601)
    (FIX / "models").mkdir(exist_ok=True)
    (FIX / "datasets").mkdir(exist_ok=True)
    rows = []
    for i in range(24):
        name = f"demo_{i:02d}"
        doc = random_model(rng, name)
        cycles, _ = model_cycles(lower_layers(load_model(doc)), lib)
        if i < 3:
            (FIX / "models" / f"{name}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        energy = (A_ENERGY * cycles + B_ENERGY) * (1 + 0.05 * rng.standard_normal())
        latency = (cycles / CLOCK_HZ + B_LATENCY) * (1 + 0.05 * rng.standard_normal())
        # a couple of rows only have one measurement
        rows.append([name, cycles, "" if i == 7 else repr(float(energy)), "" if i == 11 else repr(float(latency))])
    with open(FIX / "datasets" / "demo.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "cycles", "energy_j", "latency_s"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
