"""CPLEX LP-format export and import for ``MilpInstance``.

Variables are written as ``x0, x1, ...`` because role names contain
brackets and commas that the format does not allow; a comment header maps
each generic name back to its role so ``read_lp`` restores the role index.
Row names are carried the same way.
Coefficients use ``repr`` so a write/read round trip is exact.

``run_external`` hands the file to a command-line solver and parses its
solution file.  It is a cross-check only; nothing in the package needs it.
"""

from __future__ import annotations

import math
import re
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .model import BINARY, CONTINUOUS, INTEGER, MilpInstance, Variable

ROLE_TAG = "\\ role "
ROW_TAG = "\\ row "
_ROLE_SEP = "\t"


class LpFormatError(ValueError):
    pass


def _num(v: float) -> str:
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def _expr(coefs) -> str:
    parts = []
    for i, c in coefs:
        parts.append(f"{'-' if c < 0 else '+'} {_num(abs(c))} x{i}")
    return " ".join(parts) if parts else "0 x0"


def write_lp(inst: MilpInstance) -> str:
    lines = ["\\ cmat MilpInstance"]
    for role, i in sorted(inst.roles.items(), key=lambda kv: kv[1]):
        lines.append(ROLE_TAG + f"x{i}" + _ROLE_SEP + _ROLE_SEP.join(role))
    lines.append("Minimize")
    lines.append(" obj: " + _expr(sorted(inst.objective.items())))
    lines.append("Subject To")
    for k, con in enumerate(inst.constraints):
        op = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
        if con.name:
            lines.append(ROW_TAG + f"c{k}" + _ROLE_SEP + con.name)
        lines.append(f" c{k}: {_expr(con.coefs)} {op} {_num(con.rhs)}")
    lines.append("Bounds")
    for i, v in enumerate(inst.variables):
        if v.kind == BINARY:
            continue
        if v.lb == -math.inf and v.ub == math.inf:
            lines.append(f" x{i} free")
        else:
            lines.append(f" {_num(v.lb)} <= x{i} <= {_num(v.ub)}")
    gen = [f"x{i}" for i, v in enumerate(inst.variables) if v.kind == INTEGER]
    if gen:
        lines += ["General", " " + " ".join(gen)]
    bins = [f"x{i}" for i, v in enumerate(inst.variables) if v.kind == BINARY]
    if bins:
        lines += ["Binary", " " + " ".join(bins)]
    lines.append("End")
    return "\n".join(lines) + "\n"


_TERM = re.compile(r"([+-])\s*([0-9.eE+\-]+|inf)\s+x(\d+)")


def _parse_expr(text: str, where: str) -> dict[int, float]:
    out: dict[int, float] = {}
    rest = text.strip()
    if not rest.startswith(("+", "-")):
        rest = "+ " + rest
    pos = 0
    for m in _TERM.finditer(rest):
        if rest[pos:m.start()].strip():
            raise LpFormatError(f"{where}: cannot parse {rest[pos:m.start()]!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        out[int(m.group(3))] = out.get(int(m.group(3)), 0.0) + sign * float(m.group(2))
        pos = m.end()
    if rest[pos:].strip():
        raise LpFormatError(f"{where}: cannot parse {rest[pos:]!r}")
    return out


def read_lp(text: str) -> MilpInstance:
    """Inverse of ``write_lp`` for the subset of LP format it emits."""
    roles: dict[tuple, int] = {}
    row_names: dict[str, str] = {}
    section = None
    objective: dict[int, float] = {}
    rows = []
    bounds: dict[int, tuple[float, float]] = {}
    kinds: dict[int, str] = {}
    n = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if raw.startswith(ROLE_TAG):
            parts = raw[len(ROLE_TAG):].split(_ROLE_SEP)
            idx = int(parts[0][1:])
            roles[tuple(parts[1:])] = idx
            n = max(n, idx + 1)
            continue
        if raw.startswith(ROW_TAG):
            key, name = raw[len(ROW_TAG):].split(_ROLE_SEP, 1)
            row_names[key] = name
            continue
        if not line or line.startswith("\\"):
            continue
        head = line.lower()
        if head in ("minimize", "subject to", "bounds", "general", "binary", "end"):
            section = head
            continue
        where = f"line {lineno}"
        if section == "minimize":
            objective = _parse_expr(line.split(":", 1)[1], where)
        elif section == "subject to":
            name, body = line.split(":", 1)
            m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)$", body)
            if not m:
                raise LpFormatError(f"{where}: constraint without a sense")
            rows.append((_parse_expr(m.group(1), where), m.group(2), float(m.group(3)), row_names.get(name.strip(), "")))
        elif section == "bounds":
            m = re.match(r"x(\d+)\s+free$", line)
            if m:
                bounds[int(m.group(1))] = (-math.inf, math.inf)
                continue
            m = re.match(r"(\S+)\s*<=\s*x(\d+)\s*<=\s*(\S+)$", line)
            if not m:
                raise LpFormatError(f"{where}: unsupported bound {line!r}")
            bounds[int(m.group(2))] = (float(m.group(1)), float(m.group(3)))
        elif section in ("general", "binary"):
            for tok in line.split():
                kinds[int(tok[1:])] = INTEGER if section == "general" else BINARY
        else:
            raise LpFormatError(f"{where}: text outside any section")
    every = set(objective) | set(bounds) | set(kinds) | {i for r in rows for i in r[0]}
    n = max([n, *(i + 1 for i in every)])
    inst = MilpInstance()
    names = {i: role for role, i in roles.items()}
    for i in range(n):
        kind = kinds.get(i, CONTINUOUS)
        lb, ub = (0.0, 1.0) if kind == BINARY else bounds.get(i, (0.0, math.inf))
        role = names.get(i)
        name = f"x{i}" if role is None else (role[0] if len(role) == 1 else f"{role[0]}[{','.join(role[1:])}]")
        inst.variables.append(Variable(name, kind, lb, ub))
    inst.roles = dict(roles)
    inst.objective = {i: c for i, c in objective.items() if c != 0.0}
    for coefs, sense, rhs, name in rows:
        inst.add_row(coefs, sense, rhs, name)
    return inst


def read_solution(text: str, inst: MilpInstance) -> np.ndarray:
    """Column values from a solver's text solution, matched on the ``x<i>`` names.

    Accepts any layout where a column line carries the name followed by its
    value, as HiGHS, CBC and GLPK text output do.
    Columns absent from the file are taken as zero.
    """
    x = np.zeros(inst.n_vars)
    # an optional alphabetic status column (GLPK's "B", "NL", ...) may sit between
    pat = re.compile(r"(?:^|\s)x(\d+)\s+(?:[A-Za-z*]+\s+)?([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)(?:\s|$)")
    for line in text.splitlines():
        m = pat.search(line)
        if m and int(m.group(1)) < inst.n_vars:
            x[int(m.group(1))] = float(m.group(2))
    return x


def run_external(inst: MilpInstance, command: str, timeout: float = 600.0) -> np.ndarray:
    """Solve with an external program, e.g. ``"highs {lp} --solution_file {sol}"``."""
    with tempfile.TemporaryDirectory() as tmp:
        lp = Path(tmp) / "model.lp"
        sol = Path(tmp) / "model.sol"
        lp.write_text(write_lp(inst), encoding="utf-8")
        args = [a.format(lp=lp, sol=sol) for a in shlex.split(command)]
        subprocess.run(args, check=True, capture_output=True, timeout=timeout)
        return read_solution(sol.read_text(encoding="utf-8"), inst)
