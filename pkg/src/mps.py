"""
Free-format MPS for MilpModel.

Written subset: NAME, ROWS (one N row called OBJ), COLUMNS with
'MARKER' INTORG/INTEND around integer runs, RHS (the objective constant c is
written as RHS of OBJ = -c), BOUNDS (FX, MI, LO, UP, PL), ENDATA. Every
variable appears in COLUMNS, every integer variable gets explicit bounds, and
numbers use 17 significant digits, so identical models give identical bytes.
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Tuple

from src.errors import ModelBuildError, SolverError
from src.milp import BINARY, CONTINUOUS, INTEGER, MilpModel

logger = logging.getLogger(__name__)

OBJ_ROW = "OBJ"
MAX_NAME = 255


def _num(v: float) -> str:
    if not math.isfinite(v):
        raise ModelBuildError(f"value {v} cannot be written to MPS")
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return format(v, ".17g")


def _check_name(name: str) -> None:
    if not name or len(name) > MAX_NAME or any(c.isspace() for c in name) or name == OBJ_ROW:
        raise ModelBuildError(f"name {name!r} cannot be written to MPS")


def mps_text(model: MilpModel) -> str:
    lines = [f"NAME {model.name}", "ROWS", f" N  {OBJ_ROW}"]
    for name, sense in zip(model.row_names, model.senses):
        _check_name(name)
        lines.append(f" {sense}  {name}")

    columns: List[List[Tuple[int, float]]] = [[] for _ in range(model.n_vars)]
    for k, coefs in enumerate(model.row_coefs):
        for j, c in coefs.items():
            columns[j].append((k, c))

    lines.append("COLUMNS")
    in_int = False
    for j, name in enumerate(model.var_names):
        _check_name(name)
        integer = model.kinds[j] != CONTINUOUS
        if integer and not in_int:
            lines.append("    MARKER  'MARKER'  'INTORG'")
            in_int = True
        elif not integer and in_int:
            lines.append("    MARKER  'MARKER'  'INTEND'")
            in_int = False
        entries = []
        if j in model.objective:
            entries.append((OBJ_ROW, model.objective[j]))
        entries.extend((model.row_names[k], c) for k, c in sorted(columns[j]))
        if not entries:
            entries.append((OBJ_ROW, 0.0))
        for row, c in entries:
            lines.append(f"    {name}  {row}  {_num(c)}")
    if in_int:
        lines.append("    MARKER  'MARKER'  'INTEND'")

    lines.append("RHS")
    if model.obj_constant != 0.0:
        lines.append(f"    RHS  {OBJ_ROW}  {_num(-model.obj_constant)}")
    for name, rhs in zip(model.row_names, model.rhs):
        if rhs != 0.0:
            lines.append(f"    RHS  {name}  {_num(rhs)}")

    lines.append("BOUNDS")
    for j, name in enumerate(model.var_names):
        lb, ub = model.lb[j], model.ub[j]
        integer = model.kinds[j] != CONTINUOUS
        if lb == ub:
            lines.append(f" FX BND  {name}  {_num(lb)}")
            continue
        if lb == -math.inf:
            lines.append(f" MI BND  {name}")
        elif lb != 0.0 or integer:
            lines.append(f" LO BND  {name}  {_num(lb)}")
        if ub != math.inf:
            lines.append(f" UP BND  {name}  {_num(ub)}")
        elif integer:
            lines.append(f" PL BND  {name}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def write_mps(model: MilpModel, path) -> Path:
    path = Path(path)
    path.write_text(mps_text(model))
    st = model.stats()
    logger.info(f"Wrote MPS {path} ({st['variables']} columns, {st['rows']} rows)")
    return path


def parse_mps(text: str, source: str = "<mps>") -> MilpModel:
    section = None
    name = "MODEL"
    obj_row = None
    senses: Dict[str, str] = {}
    row_order: List[str] = []
    col_order: List[str] = []
    col_int: Dict[str, bool] = {}
    coefs: Dict[str, Dict[str, float]] = {}
    objective: Dict[str, float] = {}
    rhs: Dict[str, float] = {}
    obj_rhs = 0.0
    bounds: Dict[str, List[float]] = {}
    in_int = False

    def fail(n, msg):
        raise SolverError(f"{source}:{n}: {msg}")

    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0].upper()
            if section == "NAME":
                name = tok[1] if len(tok) > 1 else name
            elif section == "ENDATA":
                break
            elif section not in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES", "OBJSENSE"):
                fail(n, f"unknown section {tok[0]}")
            continue
        if section == "ROWS":
            kind, row = tok[0].upper(), tok[1]
            if kind == "N":
                if obj_row is None:
                    obj_row = row
                continue
            if kind not in ("L", "G", "E"):
                fail(n, f"bad row type {kind}")
            senses[row] = kind
            row_order.append(row)
            coefs[row] = {}
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1].strip("'") == "MARKER":
                in_int = tok[2].strip("'") == "INTORG"
                continue
            col = tok[0]
            if col not in col_int:
                col_order.append(col)
                col_int[col] = in_int
            pairs = tok[1:]
            if len(pairs) % 2:
                fail(n, "odd number of fields")
            for row, val in zip(pairs[::2], pairs[1::2]):
                if row == obj_row:
                    objective[col] = objective.get(col, 0.0) + float(val)
                elif row in coefs:
                    coefs[row][col] = coefs[row].get(col, 0.0) + float(val)
                else:
                    fail(n, f"unknown row {row}")
        elif section == "RHS":
            pairs = tok[1:] if len(tok) % 2 else tok
            for row, val in zip(pairs[::2], pairs[1::2]):
                if row == obj_row:
                    obj_rhs = float(val)
                elif row in senses:
                    rhs[row] = float(val)
                else:
                    fail(n, f"RHS on unknown row {row}")
        elif section == "BOUNDS":
            kind, col = tok[0].upper(), tok[2]
            if col not in col_int:
                fail(n, f"bound on unknown column {col}")
            lb, ub = bounds.setdefault(col, [0.0, math.inf])
            val = float(tok[3]) if len(tok) > 3 else None
            if kind == "FX":
                lb = ub = val
            elif kind == "LO":
                lb = val
            elif kind == "UP":
                ub = val
            elif kind == "MI":
                lb = -math.inf
            elif kind == "PL":
                ub = math.inf
            elif kind == "BV":
                lb, ub = 0.0, 1.0
            else:
                fail(n, f"unsupported bound type {kind}")
            bounds[col] = [lb, ub]
        elif section in ("RANGES", "OBJSENSE"):
            fail(n, f"section {section} is not supported")

    model = MilpModel(name)
    for col in col_order:
        lb, ub = bounds.get(col, [0.0, math.inf])
        kind = CONTINUOUS
        if col_int[col]:
            kind = BINARY if (lb, ub) == (0.0, 1.0) else INTEGER
        model.add_var(col, lb, ub, kind)
    for row in row_order:
        model.add_row(row, coefs[row], senses[row], rhs.get(row, 0.0))
    model.set_objective(objective, -obj_rhs)
    return model


def read_mps(path) -> MilpModel:
    path = Path(path)
    if not path.exists():
        raise SolverError(f"MPS file {path} not found")
    return parse_mps(path.read_text(), str(path))
