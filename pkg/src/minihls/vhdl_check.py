"""Lightweight VHDL sanity checker for emitted designs.

Not a parser: strips comments/strings, then verifies balanced structural
pairs (entity/architecture/process/case/if/for-loop), and that every
identifier used in the architecture body is declared first (ports,
signals, constants, types, enumeration literals) or is a known
numeric_std/standard name.  Catches the classic generator bugs: unbalanced
`end`s and references to never-declared signals.
"""

from __future__ import annotations

import re

_KNOWN = {
    # std / numeric_std vocabulary used by the emitter
    "ieee", "std_logic_1164", "std_logic", "std_logic_vector", "numeric_std",
    "unsigned", "signed", "resize", "to_unsigned", "to_signed", "to_integer",
    "shift_left", "shift_right", "rising_edge", "downto", "others", "note",
    "failure", "severity", "report", "work", "integer", "boolean", "string",
    "true", "false", "ns", "event", "time", "natural", "positive", "range",
}

_STRUCT_OPEN = re.compile(
    r"\b(entity|architecture|process|case|component)\b", re.I)


def _strip(text: str) -> str:
    out = []
    for line in text.splitlines():
        line = re.sub(r'"[^"]*"', '""', line)
        line = re.sub(r"'.'", "' '", line)
        if "--" in line:
            line = line.split("--", 1)[0]
        out.append(line)
    return "\n".join(out)


def check_vhdl(text: str) -> list[str]:
    """Returns a list of findings; empty means the file looks sound."""
    problems: list[str] = []
    body = _strip(text)
    tokens = re.findall(r"[A-Za-z_][A-Za-z0-9_]*", body)
    lowered = [t.lower() for t in tokens]

    # structural balance: entity/component end pairs, process/case/if
    counts = {"entity": 0, "architecture": 0, "process": 0, "case": 0,
              "if": 0, "component": 0, "loop": 0}
    i = 0
    while i < len(lowered):
        t = lowered[i]
        if t in ("entity", "architecture", "component"):
            if i > 0 and lowered[i - 1] == "end":
                counts[t] -= 1
            else:
                counts[t] += 1
        elif t == "process":
            if i > 0 and lowered[i - 1] == "end":
                counts[t] -= 1
            elif lowered[i - 1] != "end":
                counts[t] += 1
        elif t == "case":
            counts[t] += -1 if lowered[i - 1] == "end" else 1
        elif t == "if":
            if lowered[i - 1] == "end":
                counts[t] -= 1
            elif i > 0 and lowered[i - 1] == "elsif":
                pass
            else:
                counts[t] += 1
        elif t == "loop":
            counts[t] += -1 if lowered[i - 1] == "end" else 1
        i += 1
    for kind, n in counts.items():
        if n != 0:
            problems.append(f"unbalanced {kind} begin/end (delta {n})")

    # declared-before-used within the architecture
    decl_names: set[str] = set(_KNOWN)
    entity_match = re.search(r"entity\s+(\w+)", body, re.I)
    if entity_match:
        decl_names.add(entity_match.group(1).lower())
    for m in re.finditer(r"\b(\w+)\s*:\s*(in|out|inout)\s", body, re.I):
        decl_names.add(m.group(1).lower())
    for m in re.finditer(r"\bsignal\s+(\w+)", body, re.I):
        decl_names.add(m.group(1).lower())
    for m in re.finditer(r"\bconstant\s+(\w+)", body, re.I):
        decl_names.add(m.group(1).lower())
    for m in re.finditer(r"\btype\s+(\w+)\s+is\s*\(([^)]*)\)", body, re.I):
        decl_names.add(m.group(1).lower())
        for lit in m.group(2).split(","):
            decl_names.add(lit.strip().lower())
    for m in re.finditer(r"\btype\s+(\w+)\s+is\s+array", body, re.I):
        decl_names.add(m.group(1).lower())
    for m in re.finditer(r"\bcomponent\s+(\w+)", body, re.I):
        decl_names.add(m.group(1).lower())
    for m in re.finditer(r"\bgeneric\s*\(([^)]*)\)", body, re.I | re.S):
        for part in m.group(1).split(";"):
            name = part.split(":")[0].strip()
            if name:
                decl_names.add(name.lower())
    for m in re.finditer(r"\b(\w+)\s*:\s*process\b", body, re.I):
        decl_names.add(m.group(1).lower())
    for m in re.finditer(r"\b(\w+)\s*:\s*(\w+)\s+(?:port|generic)\s+map",
                         body, re.I):
        decl_names.add(m.group(1).lower())
    for m in re.finditer(r"\bfor\s+(\w+)\s+in\b", body, re.I):
        decl_names.add(m.group(1).lower())
    # architecture name
    for m in re.finditer(r"\barchitecture\s+(\w+)\s+of\s+(\w+)", body, re.I):
        decl_names.add(m.group(1).lower())
        decl_names.add(m.group(2).lower())

    arch = re.search(r"\barchitecture\b.*?\bbegin\b(.*)", body,
                     re.I | re.S)
    if not arch:
        problems.append("no architecture body found")
        return problems
    body_text = arch.group(1)
    keywords = {
        "begin", "end", "process", "if", "then", "else", "elsif", "case",
        "when", "is", "and", "or", "not", "xor", "nand", "nor", "null",
        "to", "loop", "for", "in", "out", "wait", "until", "after", "exit",
        "assert", "port", "map", "generic", "architecture", "entity",
        "component", "of", "on", "variable", "signal", "constant", "type",
    }
    for m in re.finditer(r"[A-Za-z_][A-Za-z0-9_]*", body_text):
        name = m.group(0).lower()
        if name in keywords or name in decl_names:
            continue
        problems.append(f"use of undeclared identifier '{m.group(0)}'")
        decl_names.add(name)  # report each name once
    return problems
