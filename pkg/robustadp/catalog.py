"""
robustadp/catalog.py
ArtifactCatalog: the output directory of a run and its manifest.json.

Format:
{
  "values.csv": {
    "kind": "table",
    "subcommand": "solve-exact",
    "seed": null,
    "config": {...}
  },
  ...
}

CSV artifacts begin with "# " header lines carrying the subcommand, the seed
and the resolved config as sorted-key JSON. Nothing time-dependent is
written, so a seeded run reproduces its files byte for byte.
"""

from __future__ import annotations
import json
import logging
from pathlib import Path
from typing import Any

import pandas as pd

from robustadp.errors import ArtifactExistsError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


class ArtifactCatalog:
    """
    Registers and writes the artifacts of one output directory.
    """

    FILENAME = "manifest.json"

    def __init__(self, out_dir: str | Path, overwrite: bool = False) -> None:
        self._dir = Path(out_dir)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._path = self._dir / self.FILENAME
        self.overwrite = overwrite
        self._data: dict = self._load()

    def __enter__(self) -> "ArtifactCatalog":
        return self

    def __exit__(self, *_) -> None:
        self._save()

    def __repr__(self) -> str:
        return f"ArtifactCatalog({str(self._dir)!r}, artifacts={len(self._data)})"

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    @property
    def directory(self) -> Path:
        return self._dir

    def register(self, name: str, kind: str, run: dict[str, Any]) -> Path:
        """Record an artifact and return its path. Raises if it exists and overwrite is off."""
        path = self._dir / name
        if (name in self._data or path.exists()) and not self.overwrite:
            raise ArtifactExistsError(f"{path} already exists (pass --overwrite to replace it)")
        self._data[name] = {
            "kind": kind,
            "subcommand": run.get("subcommand"),
            "seed": run.get("seed"),
            "config": run,
        }
        self._save()
        return path

    def ensure_free(self, names: list[str]) -> None:
        """Raise before a long run if any of names would be overwritten."""
        if self.overwrite:
            return
        taken = [n for n in names if n in self._data or (self._dir / n).exists()]
        if taken:
            raise ArtifactExistsError(
                f"{', '.join(taken)} already exist in {self._dir} (pass --overwrite to replace them)"
            )

    def get(self, name: str) -> dict | None:
        return self._data.get(name)

    def list_artifacts(self) -> list[str]:
        return sorted(self._data.keys())

    def write_table(self, name: str, frame: pd.DataFrame, run: dict[str, Any]) -> Path:
        """Register name and write frame as CSV below the run header."""
        path = self.register(name, "table", run)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(header_lines(run))
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.info("wrote %s (%d rows)", path, len(frame))
        return path

    # ------------------------------------------------------------------
    # Internal
    # ------------------------------------------------------------------

    def _load(self) -> dict:
        if not self._path.exists():
            return {}
        with open(self._path, encoding="utf-8") as f:
            return json.load(f)

    def _save(self) -> None:
        with open(self._path, "w", encoding="utf-8") as f:
            json.dump(self._data, f, ensure_ascii=False, indent=2, sort_keys=True)


def header_lines(run: dict[str, Any]) -> str:
    lines = [
        f"# subcommand: {run.get('subcommand')}",
        f"# seed: {run.get('seed')}",
        f"# config: {json.dumps(run, sort_keys=True, default=str)}",
    ]
    return "\n".join(lines) + "\n"


def read_table(path: str | Path) -> pd.DataFrame:
    """Read a CSV artifact back, skipping its header lines."""
    return pd.read_csv(path, comment="#")
