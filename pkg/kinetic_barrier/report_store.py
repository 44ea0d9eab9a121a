"""
Collects the tables and summaries of one command run and writes them under a shared stem
`<command>-<timestamp>`.
"""
import importlib.metadata
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

PYPROJECT = Path(__file__).resolve().parents[1] / "pyproject.toml"


def code_version() -> str:
    """Version from pyproject.toml next to the package, else from the installed metadata."""
    if PYPROJECT.is_file():
        with open(PYPROJECT, "rb") as f:
            return tomllib.load(f)["project"]["version"]
    try:
        return importlib.metadata.version("kinetic-barrier")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class ReportStore:
    """
    Output files of one run.

    Attributes:
        stem (str): `<command>-<timestamp>`, shared by every file of the run.
        written (list[Path]): Files written so far, in order.
    """

    def __init__(self, output_dir, command: str, timestamp: datetime | None = None) -> None:
        self.output_dir = Path(output_dir)
        self.command = command
        stamp = (timestamp or datetime.now()).strftime("%Y%m%dT%H%M%S")
        self.stem = f"{command}-{stamp}"
        self.written: list[Path] = []

    def path(self, suffix: str = "", ext: str = ".csv") -> Path:
        name = self.stem + (f"-{suffix}" if suffix else "") + ext
        return self.output_dir / name

    def _record(self, path: Path) -> Path:
        self.written.append(path)
        logging.info(f"App: Wrote {path}")
        return path

    def add_table(self, frame: pd.DataFrame, suffix: str = "") -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.path(suffix)
        frame.to_csv(path, index=False)
        return self._record(path)

    def add_json(self, payload: dict, suffix: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.path(suffix, ".json")
        with open(path, "w") as f:
            json.dump(_jsonable(payload), f, indent=2)
        return self._record(path)

    def write_manifest(self, settings: dict, argv: list[str], exit_code: int, extra: dict | None = None) -> Path:
        manifest = {
            "command": self.command,
            "argv": list(argv),
            "version": code_version(),
            "exit_code": exit_code,
            "settings": settings,
            "outputs": [p.name for p in self.written],
        }
        if extra:
            manifest.update(extra)
        return self.add_json(manifest, "manifest")
