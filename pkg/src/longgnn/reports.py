"""Machine-readable run reports.

Each command writes <name>.json with a flat metrics map plus a provenance
block (config echo, seed, content hashes of inputs), a metrics.csv twin for
spreadsheets, and, when wall-clock or memory was measured, a separate
<name>.timings.json. Timing files are the only non-deterministic output;
the report body is byte-stable under a fixed seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import threading
import time
from pathlib import Path

import psutil


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hashes(paths: dict[str, str | Path]) -> dict[str, str]:
    return {name: sha256_file(p) for name, p in sorted(paths.items()) if Path(p).exists()}


def _flatten(prefix: str, value, out: dict) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    else:
        out[prefix] = value


def write_report(out_dir, name: str, metrics: dict, provenance: dict,
                 timings: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"{name}.json"
    doc = {"report": name, "metrics": metrics, "provenance": provenance}
    with open(report_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")

    flat: dict = {}
    _flatten("", metrics, flat)
    with open(out_dir / f"{name}.metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for k in sorted(flat):
            w.writerow([k, flat[k]])

    if timings is not None:
        with open(out_dir / f"{name}.timings.json", "w") as fh:
            json.dump({"report": name, "measurements": timings}, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return report_path


class PeakRssSampler:
    """Samples resident set size on a background thread (100 ms cadence)."""

    def __init__(self, interval: float = 0.1):
        self.interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._proc = psutil.Process()

    def _run(self):
        while not self._stop.is_set():
            rss = self._proc.memory_info().rss
            if rss > self.peak:
                self.peak = rss
            time.sleep(self.interval)

    def __enter__(self):
        self.peak = self._proc.memory_info().rss
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        rss = self._proc.memory_info().rss
        if rss > self.peak:
            self.peak = rss
        return False
