"""Dataset entries and JSON-lines stores."""

from __future__ import annotations

import json
import os
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from .chain import SCHEMA_VERSION, Claim, Verdict
from .tables import Table

DOMAINS = ("ml", "material", "medical", "finance", "other")
PROVENANCE = ("GENERATED", "IMPORTED", "HUMAN")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetEntry:
    id: str
    domain: str
    caption: str
    rows: list[list[str]]
    claim: str
    label: Verdict
    provenance: str = "IMPORTED"
    check: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise DatasetError(f"entry {self.id}: unknown domain {self.domain!r}")
        if self.label not in (Verdict.SUPPORT, Verdict.REFUTE):
            raise DatasetError(f"entry {self.id}: gold labels are SUPPORT or REFUTE")
        if self.provenance not in PROVENANCE:
            raise DatasetError(f"entry {self.id}: unknown provenance {self.provenance!r}")

    @property
    def table(self) -> Table:
        return Table.from_grid(self.rows, caption=self.caption)

    def to_claim(self) -> Claim:
        return Claim(self.claim, self.id, self.label, self.domain, self.check)

    def to_json(self) -> dict[str, Any]:
        obj = {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "domain": self.domain,
            "table": {"caption": self.caption, "rows": self.rows},
            "claim": self.claim,
            "label": self.label.value,
            "provenance": self.provenance,
            "check": self.check,
        }
        obj.update(self.extra)
        return obj

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "DatasetEntry":
        known = {"schema_version", "id", "domain", "table", "caption", "rows", "claim",
                 "label", "provenance", "check"}
        table = obj.get("table") or {}
        caption = table.get("caption", obj.get("caption", ""))
        rows = table.get("rows", obj.get("rows"))
        if rows is None:
            raise DatasetError(f"entry {obj.get('id')}: no table rows")
        try:
            label = Verdict(obj["label"])
        except (KeyError, ValueError) as err:
            raise DatasetError(f"entry {obj.get('id')}: bad label {obj.get('label')!r}") from err
        return cls(
            id=str(obj["id"]),
            domain=obj.get("domain", "other"),
            caption=caption,
            rows=[[str(c) for c in r] for r in rows],
            claim=obj["claim"],
            label=label,
            provenance=obj.get("provenance", "IMPORTED"),
            check=obj.get("check"),
            extra={k: v for k, v in obj.items() if k not in known},
        )


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def iter_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    """Records of a JSON-lines file; a torn final line (crash mid-write) is skipped."""
    p = Path(path)
    if not p.exists():
        return
    with open(p, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for n, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError:
            if n == len(lines) - 1 or all(not x.strip() for x in lines[n + 1:]):
                return
            raise


def load_dataset(
    path: str | Path, adapter: Callable[[dict[str, Any]], dict[str, Any]] | None = None
) -> list[DatasetEntry]:
    """Load a dataset JSONL file. ``adapter`` maps foreign records onto this schema."""
    entries = []
    seen: set[str] = set()
    for obj in iter_jsonl(path):
        if adapter is not None:
            obj = adapter(obj)
        e = DatasetEntry.from_json(obj)
        if e.id in seen:
            raise DatasetError(f"duplicate id {e.id!r}")
        seen.add(e.id)
        entries.append(e)
    return entries


def save_dataset(entries: Iterable[DatasetEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(dumps(e.to_json()) + "\n")


class JsonlStore:
    """Append-only JSON-lines file; each append is one write + fsync under a lock."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._repaired = False

    def _drop_torn_tail(self) -> None:
        """Cut an unterminated last line left by a crash, so the next record
        starts on a line of its own."""
        if not self.path.exists():
            return
        with open(self.path, "rb+") as fh:
            data = fh.read()
            if data and not data.endswith(b"\n"):
                fh.truncate(data.rfind(b"\n") + 1)

    def append(self, obj: dict[str, Any]) -> None:
        line = dumps(obj) + "\n"
        with self._lock:
            if not self._repaired:
                self._drop_torn_tail()
                self._repaired = True
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter_jsonl(self.path)


def dataset_statistics(entries: Iterable[DatasetEntry]) -> dict[str, dict[str, int]]:
    """Negative/positive/total counts per domain."""
    stats: dict[str, dict[str, int]] = {}
    for e in entries:
        s = stats.setdefault(e.domain, {"neg": 0, "pos": 0, "sum": 0})
        s["neg" if e.label is Verdict.REFUTE else "pos"] += 1
        s["sum"] += 1
    return stats


def split_dataset(
    entries: list[DatasetEntry], train: int = 350, val: int = 50, seed: int = 0
) -> tuple[list[DatasetEntry], list[DatasetEntry], list[DatasetEntry]]:
    """Seeded shuffle into (train, val, rest)."""
    if train < 0 or val < 0:
        raise ValueError("split sizes must be >= 0")
    order = list(entries)
    random.Random(seed).shuffle(order)
    return order[:train], order[train:train + val], order[train + val:]
