"""Small JSON/JSONL file helpers with atomic writes."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Iterator


def atomic_write_text(path: Path | str, text: str) -> int:
    """Write text via temp-file-and-rename; returns bytes written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return len(data)


def write_jsonl(path: Path | str, rows: Iterable[dict]) -> int:
    lines = [json.dumps(row, ensure_ascii=False) for row in rows]
    text = "".join(line + "\n" for line in lines)
    return atomic_write_text(path, text)


def read_jsonl(path: Path | str) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {line_no}: {exc}") from exc


def write_json(path: Path | str, data) -> int:
    return atomic_write_text(path, json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n")
