"""
Bundled MIP runner: reads an MPS file, solves it with scipy's HiGHS MILP
interface and writes a HiGHS-style solution file. Used as the default solver
command so the pipeline runs without an external binary::

    python -m src.scipy_solver model.mps model.sol --time-limit 600 --mip-gap 1e-6
"""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from src.errors import FcucError
from src.milp import MilpModel
from src.mps import read_mps

logger = logging.getLogger(__name__)

HIGHS_OPTIMAL = "Optimal"
HIGHS_INFEASIBLE = "Infeasible"
HIGHS_TIME_LIMIT = "Time limit reached"
HIGHS_UNBOUNDED = "Unbounded"
HIGHS_ERROR = "Solve error"


def lp_arrays(model: MilpModel):
    """Rows in linprog form: (A_ub, b_ub, A_eq, b_eq), None where a part is empty."""
    lo, hi = model.row_bounds()
    a = model.matrix()
    eq = lo == hi
    upper = ~eq & np.isfinite(hi)
    lower = ~eq & np.isfinite(lo)
    a_ub = sparse.vstack([a[np.flatnonzero(upper)], -a[np.flatnonzero(lower)]]).tocsr()
    b_ub = np.r_[hi[upper], -lo[lower]]
    if not a_ub.shape[0]:
        a_ub, b_ub = None, None
    if not eq.any():
        return a_ub, b_ub, None, None
    return a_ub, b_ub, a[np.flatnonzero(eq)], lo[eq]


def _polish(model: MilpModel, x: np.ndarray) -> np.ndarray:
    """Round the integers and re-solve the continuous part with them fixed."""
    integer = model.integrality() == 1
    if not integer.any():
        return x
    fixed = np.round(x[integer])
    lb, ub = np.array(model.lb), np.array(model.ub)
    lb[integer] = ub[integer] = fixed
    a_ub, b_ub, a_eq, b_eq = lp_arrays(model)
    res = linprog(model.cost_vector(), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=list(zip(lb, ub)), method="highs")
    if res.status != 0:
        logger.warning(f"polishing LP failed ({res.message}); keeping the MIP point")
        return x
    out = np.asarray(res.x, dtype=float)
    out[integer] = fixed
    return out


def solve_model(model: MilpModel, time_limit: float = 600.0,
                mip_gap: float = 1e-6) -> Tuple[str, Optional[np.ndarray], Optional[float]]:
    """(HiGHS-style status, values or None, objective or None)."""
    if model.n_vars == 0:
        return HIGHS_OPTIMAL, np.zeros(0), model.obj_constant
    constraints = []
    if model.n_rows:
        lo, hi = model.row_bounds()
        constraints.append(LinearConstraint(model.matrix(), lo, hi))
    res = milp(
        c=model.cost_vector(),
        constraints=constraints,
        integrality=model.integrality(),
        bounds=Bounds(np.array(model.lb), np.array(model.ub)),
        options={"time_limit": float(time_limit), "mip_rel_gap": float(mip_gap), "disp": False},
    )
    x = None if res.x is None else np.asarray(res.x, dtype=float)
    if x is not None:
        x = _polish(model, x)
    obj = None if x is None else model.objective_value(x)
    if res.status == 0:
        return HIGHS_OPTIMAL, x, obj
    if res.status == 1:
        return HIGHS_TIME_LIMIT, x, obj
    if res.status == 2:
        return HIGHS_INFEASIBLE, None, None
    if res.status == 3:
        return HIGHS_UNBOUNDED, None, None
    logger.warning(f"scipy milp: {res.message}")
    return HIGHS_ERROR, x, obj


def solution_text(model: MilpModel, status: str, values: Optional[np.ndarray], objective: Optional[float],
                  solve_time: Optional[float] = None) -> str:
    lines = ["Model status", status, ""]
    if solve_time is not None:
        lines += [f"# Solve time {solve_time:.6f}", ""]
    lines.append("# Primal solution values")
    if values is None:
        lines.append("None")
    else:
        lines.append("Feasible")
        lines.append(f"Objective {objective:.17g}")
        lines.append(f"# Columns {model.n_vars}")
        lines.extend(f"{name} {v:.17g}" for name, v in zip(model.var_names, values))
        activity = model.matrix() @ values if model.n_rows else np.zeros(0)
        lines.append(f"# Rows {model.n_rows}")
        lines.extend(f"{name} {a:.17g}" for name, a in zip(model.row_names, activity))
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m src.scipy_solver", description="Solve an MPS file with scipy/HiGHS")
    ap.add_argument("model")
    ap.add_argument("solution")
    ap.add_argument("--time-limit", type=float, default=600.0)
    ap.add_argument("--mip-gap", type=float, default=1e-6)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    started = time.time()
    try:
        model = read_mps(args.model)
    except FcucError as e:
        logger.error(f"cannot read {args.model}: {e}")
        return 2
    solve_started = time.time()
    status, values, objective = solve_model(model, args.time_limit, args.mip_gap)
    solve_time = time.time() - solve_started
    Path(args.solution).write_text(solution_text(model, status, values, objective, solve_time))
    logger.info(f"{status} in {time.time() - started:.2f}s"
                + (f", objective {objective:.6f}" if objective is not None else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
