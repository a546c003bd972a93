"""Static cycle counting for compiled ML kernels and a linear cost model on top.

Pipeline: disassembly and source CFGs -> natural loops -> loop mapping ->
per-kernel instruction library -> model cycle estimate -> ``a * cycles + b``.
"""

__version__ = "0.1.0"
