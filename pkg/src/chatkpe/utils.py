"""Run-directory and manifest helpers shared by the CLI subcommands."""

from __future__ import annotations

import json
import time
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigError


def run_stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S-%f")


def prepare_out_dir(out: str | Path | None, command: str, force: bool) -> Path:
    """Resolve the output directory for a run; never overwrite without
    --force."""
    if out is None:
        out = Path("runs") / f"{command}-{run_stamp()}"
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


class RunClock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def seconds(self) -> float:
        return time.perf_counter() - self.t0


def write_manifest(out_dir: Path, command: str, config: dict, clock: RunClock, **extra) -> None:
    payload = {
        "command": command,
        "config": config,
        "wall_time_s": round(clock.seconds(), 3),
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")
