import copy
import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
from scipy import sparse

from src.errors import ModelBuildError

logger = logging.getLogger(__name__)

CONTINUOUS = "C"
BINARY = "B"
INTEGER = "I"
SENSES = ("L", "G", "E")   # <=, >=, =


class MilpModel:
    """Mixed-integer linear model kept in declaration order.

    Variables are (name, kind, lb, ub); rows are (name, {var index: coef},
    sense, rhs). The objective is minimized.
    """

    def __init__(self, name: str = "FCUC"):
        self.name = name
        self.var_names: List[str] = []
        self.kinds: List[str] = []
        self.lb: List[float] = []
        self.ub: List[float] = []
        self._index: Dict[str, int] = {}
        self.row_names: List[str] = []
        self.row_coefs: List[Dict[int, float]] = []
        self.senses: List[str] = []
        self.rhs: List[float] = []
        self._row_index: Dict[str, int] = {}
        self.objective: Dict[int, float] = {}
        self.obj_constant = 0.0

    # ---------- construction ----------
    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, kind: str = CONTINUOUS) -> int:
        if name in self._index:
            raise ModelBuildError(f"duplicate variable {name}")
        if kind == BINARY:
            lb, ub = 0.0, 1.0
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelBuildError(f"variable {name}: bad bounds [{lb}, {ub}]")
        self._index[name] = len(self.var_names)
        self.var_names.append(name)
        self.kinds.append(kind)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        return self._index[name]

    def add_binary(self, name: str) -> int:
        return self.add_var(name, kind=BINARY)

    def var(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelBuildError(f"undeclared variable {name}") from None

    def has_var(self, name: str) -> bool:
        return name in self._index

    def _coefs(self, terms, where: str) -> Dict[int, float]:
        items = terms.items() if isinstance(terms, Mapping) else terms
        out: Dict[int, float] = {}
        for name, coef in items:
            coef = float(coef)
            if not math.isfinite(coef):
                raise ModelBuildError(f"{where}: coefficient {coef} on {name}")
            j = self.var(name)
            out[j] = out.get(j, 0.0) + coef
        return {j: c for j, c in out.items() if c != 0.0}

    def add_row(self, name: str, terms, sense: str, rhs: float) -> int:
        if sense not in SENSES:
            raise ModelBuildError(f"row {name}: unknown sense {sense!r}")
        if name in self._row_index:
            raise ModelBuildError(f"duplicate row {name}")
        if math.isnan(rhs) or math.isinf(rhs):
            raise ModelBuildError(f"row {name}: rhs {rhs}")
        coefs = self._coefs(terms, f"row {name}")
        self._row_index[name] = len(self.row_names)
        self.row_names.append(name)
        self.row_coefs.append(coefs)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        return self._row_index[name]

    def set_objective(self, terms, constant: float = 0.0) -> None:
        self.objective = self._coefs(terms, "objective")
        self.obj_constant = float(constant)

    def add_objective(self, terms) -> None:
        for j, c in self._coefs(terms, "objective").items():
            self.objective[j] = self.objective.get(j, 0.0) + c

    def fix(self, name: str, value: float) -> None:
        j = self.var(name)
        self.lb[j] = self.ub[j] = float(value)

    def copy(self) -> "MilpModel":
        return copy.deepcopy(self)

    # ---------- inspection ----------
    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    def row(self, name: str) -> Tuple[Dict[str, float], str, float]:
        k = self._row_index[name]
        return {self.var_names[j]: c for j, c in self.row_coefs[k].items()}, self.senses[k], self.rhs[k]

    def rows_with_prefix(self, prefix: str) -> List[str]:
        return [r for r in self.row_names if r.startswith(prefix)]

    def stats(self) -> Dict[str, int]:
        return {
            "variables": self.n_vars,
            "binaries": sum(1 for k in self.kinds if k == BINARY),
            "rows": self.n_rows,
            "nonzeros": sum(len(c) for c in self.row_coefs),
        }

    def matrix(self) -> sparse.csr_matrix:
        data, ri, ci = [], [], []
        for k, coefs in enumerate(self.row_coefs):
            for j, c in coefs.items():
                ri.append(k)
                ci.append(j)
                data.append(c)
        return sparse.csr_matrix((data, (ri, ci)), shape=(self.n_rows, self.n_vars))

    def row_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        rhs = np.array(self.rhs, dtype=float)
        lo = np.where(np.isin(self.senses, ["G", "E"]), rhs, -np.inf)
        hi = np.where(np.isin(self.senses, ["L", "E"]), rhs, np.inf)
        return lo, hi

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, v in self.objective.items():
            c[j] = v
        return c

    def integrality(self) -> np.ndarray:
        return np.array([0 if k == CONTINUOUS else 1 for k in self.kinds], dtype=np.uint8)

    def objective_value(self, values: np.ndarray) -> float:
        return float(self.cost_vector() @ np.asarray(values, dtype=float)) + self.obj_constant

    def max_violation(self, values) -> Tuple[float, Optional[str]]:
        """Worst row or bound violation of a full assignment, scaled by the row's magnitude.

        Binaries are rounded first. Returns (violation, name of the worst row or variable).
        """
        x = np.asarray(values, dtype=float).copy()
        if len(x) != self.n_vars:
            raise ModelBuildError(f"assignment has {len(x)} values for {self.n_vars} variables")
        binary = self.integrality() == 1
        x[binary] = np.round(x[binary])
        worst, where = 0.0, None

        lb, ub = np.array(self.lb), np.array(self.ub)
        with np.errstate(invalid="ignore"):
            bound_gap = np.maximum(lb - x, x - ub) / np.maximum(1.0, np.abs(x))
        if len(bound_gap):
            j = int(np.argmax(bound_gap))
            if bound_gap[j] > worst:
                worst, where = float(bound_gap[j]), self.var_names[j]

        for k, coefs in enumerate(self.row_coefs):
            act = 0.0
            scale = max(1.0, abs(self.rhs[k]))
            for j, c in coefs.items():
                term = c * x[j]
                act += term
                scale = max(scale, abs(term))
            s = self.senses[k]
            if s == "L":
                gap = act - self.rhs[k]
            elif s == "G":
                gap = self.rhs[k] - act
            else:
                gap = abs(act - self.rhs[k])
            gap /= scale
            if gap > worst:
                worst, where = gap, self.row_names[k]
        return worst, where

    def values_by_name(self, values: Iterable[float]) -> Dict[str, float]:
        return dict(zip(self.var_names, values))
