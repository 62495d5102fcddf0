from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import orjson
import xxhash

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_APPEND_NEWLINE


def write_json(path: str | Path, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(data, option=JSON_OPTIONS))
    return path


def read_json(path: str | Path) -> Any:
    return orjson.loads(Path(path).read_bytes())


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            count += 1
    return count


def file_checksum(path: str | Path) -> str:
    h = xxhash.xxh64()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def array_digest(arrays: dict[str, Any]) -> str:
    """Order-independent fingerprint of named numpy arrays (names are sorted first)."""
    h = xxhash.xxh64()
    for name in sorted(arrays):
        value = arrays[name]
        h.update(name.encode("utf-8"))
        h.update(str(value.shape).encode("utf-8"))
        h.update(value.tobytes())
    return h.hexdigest()


def fmt(value: float, digits: int = 6) -> str:
    return f"{value:.{digits}f}"


@dataclass
class Manifest:
    """Files a command produced, with their checksums, written as manifest.json in the output directory."""

    out_dir: Path
    command: str
    files: list[dict[str, Any]] = field(default_factory=list)

    def add(self, path: str | Path, rows: int | None = None) -> Path:
        path = Path(path)
        entry = {"path": path.resolve().relative_to(self.out_dir.resolve()).as_posix(), "xxh64": file_checksum(path)}
        if rows is not None:
            entry["rows"] = rows
        self.files = [f for f in self.files if f["path"] != entry["path"]] + [entry]
        return path

    def write(self) -> Path:
        data = {"command": self.command, "files": sorted(self.files, key=lambda f: f["path"])}
        return write_json(self.out_dir / "manifest.json", data)
