import os
import sys

# ---------- ENV ----------
# read at call time so a .env loaded by main.py (or a test monkeypatch) is honoured

DEFAULT_SOLVER_CMD = (
    "{python} -m src.scipy_solver {model} {solution} "
    "--time-limit {time_limit} --mip-gap {mip_gap}"
)
HIGHS_SOLVER_CMD = (
    "highs --model_file {model} --solution_file {solution} "
    "--time_limit {time_limit} --options_file {options}"
)
CBC_SOLVER_CMD = "cbc {model} -sec {time_limit} -ratioGap {mip_gap} -solve -solu {solution}"


def solver_cmd() -> str:
    return os.environ.get("FCUC_SOLVER_CMD", "").strip() or DEFAULT_SOLVER_CMD


def solver_profile() -> str:
    return os.environ.get("FCUC_SOLVER_PROFILE", "highs").strip().lower() or "highs"


def time_limit() -> float:
    return float(os.environ.get("FCUC_TIME_LIMIT", "600").strip() or 600)


def mip_gap() -> float:
    return float(os.environ.get("FCUC_MIP_GAP", "1e-6").strip() or 1e-6)


def jobs() -> int:
    return max(1, int(os.environ.get("FCUC_JOBS", "1").strip() or 1))


def log_level() -> str:
    return os.environ.get("FCUC_LOG_LEVEL", "INFO").strip().upper() or "INFO"


def python_executable() -> str:
    return sys.executable or "python"
