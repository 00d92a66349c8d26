"""Line-delimited JSON metrics: one record per step or epoch."""
from __future__ import annotations

import json
import math
from pathlib import Path


class MetricsWriter:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, kind: str, step: int, **scalars) -> dict:
        rec = {"kind": kind, "step": step}
        for k, v in scalars.items():
            rec[k] = float(v) if isinstance(v, float) or hasattr(v, "dtype") else v
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, allow_nan=True) + "\n")
        return rec


def read_metrics(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def finite(values) -> bool:
    return all(math.isfinite(v) for v in values)
