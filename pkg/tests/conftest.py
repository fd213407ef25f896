"""Shared fixtures: corpus kernels compiled once per session."""

from __future__ import annotations

import os
from pathlib import Path

import pytest

from minihls.driver import (
    CompileOptions, CompileResult, LutBinding, compile_source,
)

KERNEL_DIR = Path(__file__).parent / "kernels"
GOLDEN_DIR = Path(__file__).parent / "golden"

DEFAULT_SEED = int(os.environ.get("MINIHLS_SEED", "20240613"))


def kernel_source(name: str) -> str:
    return (KERNEL_DIR / f"{name}.c").read_text()


def user_rom_binding() -> LutBinding:
    return LutBinding((KERNEL_DIR / "user_rom.lut").read_text(),
                      address_width=10, data_width=16, signed=False,
                      source="user_rom.lut")


def corpus_options(name: str) -> CompileOptions:
    table = {
        "fir": CompileOptions(bus_width=8),
        "accumulate": CompileOptions(bus_width=8),
        "bit_correlator": CompileOptions(bus_width=8),
        "mul_acc": CompileOptions(bus_width=16),
        "dct8": CompileOptions(bus_width=8),
        "lut_map": CompileOptions(bus_width=16,
                                  lut_bindings={"user_rom":
                                                user_rom_binding()}),
        "cos_wave": CompileOptions(bus_width=16),
        "blur3": CompileOptions(bus_width=8, unroll_limit=1),
    }
    return table[name]


CORPUS = ["fir", "accumulate", "bit_correlator", "mul_acc", "dct8",
          "lut_map", "cos_wave"]
WINDOWED = ["fir", "bit_correlator", "mul_acc", "dct8", "lut_map",
            "cos_wave", "blur3"]


_cache: dict[str, CompileResult] = {}


def compiled(name: str) -> CompileResult:
    if name not in _cache:
        _cache[name] = compile_source(kernel_source(name),
                                      corpus_options(name),
                                      f"{name}.c")
    return _cache[name]


@pytest.fixture(scope="session")
def corpus_results() -> dict[str, CompileResult]:
    return {name: compiled(name) for name in CORPUS}


@pytest.fixture(scope="session")
def fir_result() -> CompileResult:
    return compiled("fir")
