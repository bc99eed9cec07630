import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from src.errors import ManifestError

logger = logging.getLogger(__name__)

VERSION = "0.1.0"


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hashes: Dict[str, str] = field(default_factory=dict)
    input_hashes: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = VERSION
    wall_time: float = 0.0
    outputs: List[Dict[str, str]] = field(default_factory=list)
    details: Dict[str, object] = field(default_factory=dict)
    started: float = field(default_factory=time.time, repr=False)

    def add_config(self, path) -> None:
        if path:
            self.config_hashes[str(path)] = file_hash(path)

    def add_input(self, path) -> None:
        if path:
            self.input_hashes[str(path)] = file_hash(path)

    def add_output(self, path) -> None:
        self.outputs.append({"path": str(path), "sha256": file_hash(path)})

    def write(self, path) -> Path:
        self.wall_time = round(time.time() - self.started, 3)
        d = asdict(self)
        d.pop("started")
        path = Path(path)
        path.write_text(json.dumps(d, indent=2, sort_keys=True, default=str) + "\n")
        logger.info(f"Wrote manifest {path} ({len(self.outputs)} output(s), {self.wall_time:.1f}s)")
        return path


def verify(path) -> RunManifest:
    """Load a manifest and check every listed output still exists with the same hash."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    m = RunManifest(**{k: v for k, v in d.items() if k in RunManifest.__dataclass_fields__ and k != "started"})
    for out in m.outputs:
        p = Path(out["path"])
        if not p.exists():
            raise ManifestError(f"{path}: output {p} is missing")
        if file_hash(p) != out["sha256"]:
            raise ManifestError(f"{path}: output {p} changed since the run")
    return m
