"""Append-only JSON-lines verdict log with a versioned header record."""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterator

from ..fusion import AssemblyVerdict

LOG_FORMAT = "mvqc-verdicts"
LOG_VERSION = 1


class VerdictLogError(ValueError):
    pass


class VerdictLogWriter:
    def __init__(self, stream: IO[str], **header_fields):
        self._stream = stream
        self.count = 0
        self._write({"type": "header", "format": LOG_FORMAT, "format_version": LOG_VERSION, **header_fields})

    @classmethod
    def open(cls, path: str | Path, **header_fields) -> VerdictLogWriter:
        return cls(open(path, "w", encoding="utf-8"), **header_fields)

    def _write(self, record: dict) -> None:
        self._stream.write(json.dumps(record, sort_keys=True) + "\n")
        self._stream.flush()

    def write(self, verdict: AssemblyVerdict) -> None:
        self._write({"type": "verdict", **verdict.to_dict()})
        self.count += 1

    def write_error(self, assembly_id: str, errors: list[str]) -> None:
        self._write({"type": "protocol_error", "assembly_id": assembly_id, "errors": errors})

    def close(self) -> None:
        self._stream.close()

    def __enter__(self) -> VerdictLogWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_log(path: str | Path) -> Iterator[dict]:
    """Yield every record after checking the header."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise VerdictLogError(f"{path}: empty log")
        header = json.loads(first)
        if header.get("format") != LOG_FORMAT:
            raise VerdictLogError(f"{path}: not a verdict log")
        if header.get("format_version") != LOG_VERSION:
            raise VerdictLogError(f"{path}: format_version {header.get('format_version')} unsupported")
        yield header
        for line in fh:
            if line.strip():
                yield json.loads(line)


def read_verdicts(path: str | Path) -> list[dict]:
    return [r for r in read_log(path) if r.get("type") == "verdict"]
