"""Lookup-table contents: the builtin cosine table and text init files.

Init file format: one entry per line, decimal or 0x-hex, `#` starts a
comment, blank lines ignored; line k is the entry at address k.  A table
with address width A must supply exactly 2**A entries, each fitting the
data width (signed tables accept negative values down to -2**(D-1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InitFileError


@dataclass(frozen=True)
class LutSpec:
    name: str
    address_width: int
    data_width: int
    signed: bool
    source: str  # 'builtin:cos' or the init file path
    contents: tuple[int, ...]  # raw bit patterns, length 2**address_width

    def __post_init__(self):
        if len(self.contents) != (1 << self.address_width):
            raise InitFileError(
                f"table '{self.name}': expected {1 << self.address_width}"
                f" entries, got {len(self.contents)}")


COS_ADDRESS_WIDTH = 10
COS_DATA_WIDTH = 16


def builtin_cos() -> LutSpec:
    """10-bit phase in, signed 16-bit amplitude out:
    entry[k] = round(cos(2*pi*k/1024) * 32767)."""
    n = 1 << COS_ADDRESS_WIDTH
    mask = (1 << COS_DATA_WIDTH) - 1
    contents = tuple(
        round(math.cos(2.0 * math.pi * k / n) * 32767) & mask
        for k in range(n))
    return LutSpec("cos", COS_ADDRESS_WIDTH, COS_DATA_WIDTH, True,
                   "builtin:cos", contents)


BUILTIN_TABLES = {"cos": builtin_cos}


def parse_init_file(name: str, text: str, address_width: int,
                    data_width: int, signed: bool, source: str = "<init>",
                    ) -> LutSpec:
    """Parse a text initialization file into a LutSpec."""
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            v = int(line, 16) if line.lower().startswith("0x") else int(line, 10)
        except ValueError:
            raise InitFileError(
                f"table '{name}': bad entry {line!r}", lineno, 1)
        lo = -(1 << (data_width - 1)) if signed else 0
        hi = (1 << data_width) - 1
        if not (lo <= v <= hi):
            raise InitFileError(
                f"table '{name}': value {v} exceeds {data_width} bits",
                lineno, 1)
        values.append(v & ((1 << data_width) - 1))
    expected = 1 << address_width
    if len(values) != expected:
        raise InitFileError(
            f"table '{name}': expected {expected} entries, got {len(values)}")
    return LutSpec(name, address_width, data_width, signed, source,
                   tuple(values))
