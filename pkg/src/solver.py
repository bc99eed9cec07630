import logging
import math
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from src import config
from src.errors import SolverError
from src.fcuc import (FEASIBLE_GAP, INFEASIBLE, OPTIMAL, TIMEOUT, FcucModel, UcSchedule,
                      schedule_from_values)
from src.mps import write_mps

logger = logging.getLogger(__name__)

PROFILES = ("highs", "cbc")
REPLAY_TOL = 1e-6
REPO_ROOT = Path(__file__).resolve().parent.parent


@dataclass(frozen=True)
class SolverConfig:
    command: str = config.DEFAULT_SOLVER_CMD
    time_limit: float = 600.0
    mip_gap: float = 1e-6
    profile: str = "highs"
    workdir: Optional[str] = None

    @classmethod
    def from_env(cls, command: Optional[str] = None) -> "SolverConfig":
        return cls(
            command=command or config.solver_cmd(),
            time_limit=config.time_limit(),
            mip_gap=config.mip_gap(),
            profile=config.solver_profile(),
        ).validate()

    def validate(self) -> "SolverConfig":
        for key in ("{model}", "{solution}"):
            if key not in self.command:
                raise SolverError(f"solver command must contain {key}: {self.command!r}")
        if not self.time_limit > 0:
            raise SolverError(f"time limit must be > 0 (got {self.time_limit})")
        if not 0 <= self.mip_gap < 1:
            raise SolverError(f"MIP gap must be in [0, 1) (got {self.mip_gap})")
        if self.profile not in PROFILES:
            raise SolverError(f"unknown solution profile {self.profile!r} (expected {' or '.join(PROFILES)})")
        return self


@dataclass
class SolveResult:
    status: str
    schedule: Optional[UcSchedule]
    objective: Optional[float]
    wall_time: float

    @property
    def solved(self) -> bool:
        return self.schedule is not None


# ---------- solution parsers ----------
def parse_highs_solution(text: str) -> Tuple[str, Dict[str, float], Optional[float]]:
    lines = text.splitlines()
    status, values, objective = None, {}, None
    k = 0
    while k < len(lines):
        line = lines[k].strip()
        if line == "Model status" and k + 1 < len(lines):
            status = lines[k + 1].strip()
            k += 2
            continue
        if line.startswith("Objective"):
            try:
                objective = float(line.split()[-1])
            except ValueError:
                raise SolverError(f"unparseable objective line: {line!r}") from None
        elif line.startswith("# Columns"):
            n = int(line.split()[-1])
            for entry in lines[k + 1:k + 1 + n]:
                parts = entry.split()
                if len(parts) < 2:
                    raise SolverError(f"unparseable column line: {entry!r}")
                values[parts[0]] = float(parts[1])
            k += n + 1
            continue
        elif line.startswith("# Dual"):
            break
        k += 1
    if status is None:
        raise SolverError("solution file has no model status")
    if status == "Optimal":
        return OPTIMAL, values, objective
    if status in ("Infeasible", "Primal infeasible or unbounded"):
        return INFEASIBLE, {}, None
    if status in ("Time limit reached", "Interrupted by user", "Iteration limit reached"):
        return (FEASIBLE_GAP if values else TIMEOUT), values, objective
    raise SolverError(f"solver reported '{status}'")


def parse_cbc_solution(text: str) -> Tuple[str, Dict[str, float], Optional[float]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SolverError("empty CBC solution file")
    head = lines[0].strip()
    objective = None
    if "objective value" in head:
        try:
            objective = float(head.rsplit("objective value", 1)[1].split()[0])
        except (IndexError, ValueError):
            raise SolverError(f"unparseable CBC header: {head!r}") from None
    values: Dict[str, float] = {}
    for entry in lines[1:]:
        parts = entry.replace("**", " ").split()
        if len(parts) < 3:
            raise SolverError(f"unparseable CBC line: {entry!r}")
        values[parts[1]] = float(parts[2])
    low = head.lower()
    if low.startswith("optimal"):
        return OPTIMAL, values, objective
    if "infeasible" in low:
        return INFEASIBLE, {}, None
    if low.startswith("stopped"):
        return (FEASIBLE_GAP if objective is not None and values else TIMEOUT), values, objective
    raise SolverError(f"CBC reported '{head}'")


def reported_solve_time(text: str) -> Optional[float]:
    """Seconds from a "# Solve time" line, when the solver wrote one."""
    for line in text.splitlines():
        if line.startswith("# Solve time"):
            try:
                return float(line.split()[-1])
            except ValueError:
                raise SolverError(f"unparseable solve time line: {line!r}") from None
    return None


PARSERS = {"highs": parse_highs_solution, "cbc": parse_cbc_solution}


# ---------- driver ----------
def fill_command(template: str, **fields) -> str:
    """Substitute ``{name}`` placeholders; any other brace text is passed through."""
    cmd = template
    for name, value in fields.items():
        cmd = cmd.replace("{" + name + "}", str(value))
    return cmd


def _run(cfg: SolverConfig, model_path: Path, sol_path: Path, workdir: Path) -> None:
    options = workdir / "solver.opt"
    options.write_text(f"mip_rel_gap = {cfg.mip_gap}\ntime_limit = {cfg.time_limit}\n")
    cmd = fill_command(
        cfg.command,
        model=shlex.quote(str(model_path)),
        solution=shlex.quote(str(sol_path)),
        time_limit=cfg.time_limit,
        mip_gap=cfg.mip_gap,
        options=shlex.quote(str(options)),
        python=shlex.quote(config.python_executable()),
        workdir=shlex.quote(str(workdir)),
    )
    logger.info(f"Running solver: {cmd}")
    try:
        proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True,
                              timeout=cfg.time_limit + 120, cwd=REPO_ROOT)
    except FileNotFoundError as e:
        raise SolverError(f"solver command not found: {e.filename}") from e
    except subprocess.TimeoutExpired as e:
        raise SolverError(f"solver did not exit within {cfg.time_limit + 120:.0f}s") from e
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-5:]
        raise SolverError(f"solver exited with code {proc.returncode}: {' | '.join(tail)}")
    if not sol_path.exists():
        raise SolverError(f"solver wrote no solution file ({sol_path.name})")


def values_vector(model: FcucModel, values: Dict[str, float]) -> np.ndarray:
    unknown = [n for n in values if not model.has_var(n)]
    if unknown:
        raise SolverError(f"solution names unknown variable(s): {', '.join(unknown[:5])}")
    x = np.zeros(model.n_vars)
    for name, v in values.items():
        x[model.var(name)] = v
    return x


def replay(model: FcucModel, x: np.ndarray) -> None:
    worst, where = model.max_violation(x)
    if worst > REPLAY_TOL:
        raise SolverError(f"solution violates {where} by {worst:.3e} (tolerance {REPLAY_TOL})")


def solve(model: FcucModel, cfg: SolverConfig) -> SolveResult:
    cfg.validate()
    started = time.time()
    with tempfile.TemporaryDirectory(prefix="fcuc_", dir=cfg.workdir) as tmp:
        tmp = Path(tmp)
        model_path, sol_path = tmp / "model.mps", tmp / "model.sol"
        write_mps(model, model_path)
        _run(cfg, model_path, sol_path, tmp)
        text = sol_path.read_text()
        status, values, reported = PARSERS[cfg.profile](text)
    elapsed = time.time() - started
    # process start-up and file I/O are not solver effort
    solver_time = reported_solve_time(text)
    wall = elapsed if solver_time is None else solver_time
    logger.debug(f"Solver process took {elapsed:.2f}s, reported solve time {solver_time}")

    if status not in (OPTIMAL, FEASIBLE_GAP):
        logger.warning(f"Solver status {status} for {model.variant.tag} model after {wall:.1f}s")
        return SolveResult(status, None, None, wall)

    x = values_vector(model, values)
    replay(model, x)
    schedule = schedule_from_values(model, x, status, wall)
    objective = schedule.objective
    if reported is not None and not math.isclose(objective, reported, rel_tol=1e-6, abs_tol=1e-6):
        logger.warning(f"Reported objective {reported:.6f} differs from recomputed {objective:.6f}")
    residual = schedule.balance_residual(model.series.demand)
    if residual > REPLAY_TOL:
        raise SolverError(f"balance residual {residual:.3e} MW")
    logger.info(f"Solved {model.variant.tag} model: {status}, objective {objective:.4f}, {wall:.1f}s")
    return SolveResult(status, schedule, objective, wall)
