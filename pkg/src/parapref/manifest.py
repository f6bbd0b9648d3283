"""Run provenance: one append-only manifest record per CLI run.

A manifest captures everything needed to reproduce a run: the subcommand, the
fully resolved option values (flag > config file > built-in default), SHA-256
digests of every input file, the seed, the toolkit version, and wall-clock
timestamps.  Records append to ``manifests.jsonl`` next to the run's primary
output; outputs themselves never embed timestamps, so re-running a manifest
reproduces them byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifests.jsonl"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command: str, argv, resolved: dict, seed=None):
        self.record = {
            "command": command,
            "argv": list(argv),
            "resolved": {k: _plain(v) for k, v in resolved.items()},
            "input_digests": {},
            "seed": seed,
            "version": __version__,
            "started_unix": time.time(),
            "finished_unix": None,
        }

    def add_input(self, path) -> None:
        self.record["input_digests"][str(path)] = file_digest(path)

    def write(self, directory) -> Path:
        """Finalize and append this run's single manifest record."""
        self.record["finished_unix"] = time.time()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_NAME
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(self.record, sort_keys=True) + "\n")
        return path


def _plain(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return str(value)


def load_manifests(directory) -> list[dict]:
    path = Path(directory) / MANIFEST_NAME
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
