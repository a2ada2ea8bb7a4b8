"""Dataset manifests: JSON-lines listing feature files, labels and splits.

Entry lines look like

    {"id": "img1", "label": 3, "split": "train", "resolution": 336, "path": "feat/img1_336.msvf"}

and relevance lines (retrieval ground truth for query ids) like

    {"query": "q1", "positives": ["img1", "img4"], "junk": ["img9"]}

Feature paths are resolved relative to the manifest's directory. Loading
validates everything eagerly and reports the offending line on failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ChannelMismatchError,
    DanglingPathError,
    DanglingRelevanceError,
    DuplicateEntryError,
    ManifestError,
)
from .tensor_io import read_tensor_header

SPLITS = ("train", "gallery", "query")

ENTRY_KEYS = ("id", "label", "split", "resolution", "path")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    label: int
    split: str
    resolution: int
    feature_path: str


@dataclass(frozen=True)
class Relevance:
    positives: frozenset
    junk: frozenset = frozenset()


@dataclass
class DatasetManifest:
    entries: list
    relevance: dict
    root: Path = field(default_factory=Path)

    def __eq__(self, other):
        # Line order carries no meaning: compare as sets.
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return set(self.entries) == set(other.entries) and self.relevance == other.relevance

    def split_entries(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def ids(self, split: str) -> list:
        seen, out = set(), []
        for e in self.entries:
            if e.split == split and e.image_id not in seen:
                seen.add(e.image_id)
                out.append(e.image_id)
        return out

    def entry_for(self, image_id: str, resolution: int, split: str | None = None):
        for e in self.entries:
            if e.image_id == image_id and e.resolution == resolution:
                if split is None or e.split == split:
                    return e
        return None

    def resolutions_for(self, image_id: str, split: str | None = None) -> list:
        return sorted(
            e.resolution
            for e in self.entries
            if e.image_id == image_id and (split is None or e.split == split)
        )

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.feature_path


def _entry_from_obj(obj: dict, lineno: int) -> ManifestEntry:
    missing = [k for k in ENTRY_KEYS if k not in obj]
    if missing:
        raise ManifestError(f"line {lineno}: entry is missing keys {missing}")
    unknown = [k for k in obj if k not in ENTRY_KEYS]
    if unknown:
        raise ManifestError(f"line {lineno}: unknown keys {unknown}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise ManifestError(f"line {lineno}: 'id' must be a non-empty string")
    if not isinstance(obj["label"], int) or isinstance(obj["label"], bool):
        raise ManifestError(f"line {lineno}: 'label' must be an integer")
    if obj["split"] not in SPLITS:
        raise ManifestError(f"line {lineno}: 'split' must be one of {SPLITS}")
    if not isinstance(obj["resolution"], int) or obj["resolution"] <= 0:
        raise ManifestError(f"line {lineno}: 'resolution' must be a positive integer")
    if not isinstance(obj["path"], str) or not obj["path"]:
        raise ManifestError(f"line {lineno}: 'path' must be a non-empty string")
    return ManifestEntry(obj["id"], obj["label"], obj["split"], obj["resolution"], obj["path"])


def _relevance_from_obj(obj: dict, lineno: int) -> tuple[str, Relevance]:
    unknown = [k for k in obj if k not in ("query", "positives", "junk")]
    if unknown:
        raise ManifestError(f"line {lineno}: unknown keys {unknown}")
    query = obj["query"]
    if not isinstance(query, str) or not query:
        raise ManifestError(f"line {lineno}: 'query' must be a non-empty string")
    positives = obj.get("positives", [])
    junk = obj.get("junk", [])
    for name, ids in (("positives", positives), ("junk", junk)):
        if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
            raise ManifestError(f"line {lineno}: '{name}' must be a list of image ids")
    overlap = set(positives) & set(junk)
    if overlap:
        raise ManifestError(f"line {lineno}: ids {sorted(overlap)} are both positive and junk")
    return query, Relevance(frozenset(positives), frozenset(junk))


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Load and validate a JSON-lines manifest.

    With check_files (the default) every feature path must resolve to a
    readable rank-3 tensor file and all files must agree on channel count.
    """
    root = Path(path).parent
    entries: list[ManifestEntry] = []
    entry_lines: list[int] = []
    relevance: dict[str, Relevance] = {}
    relevance_lines: dict[str, int] = {}
    seen: dict[tuple[str, int], int] = {}

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"line {lineno}: expected a JSON object")
            if "query" in obj:
                query, rel = _relevance_from_obj(obj, lineno)
                if query in relevance:
                    raise DuplicateEntryError(
                        f"line {lineno}: relevance for query '{query}' already "
                        f"given on line {relevance_lines[query]}"
                    )
                relevance[query] = rel
                relevance_lines[query] = lineno
            else:
                entry = _entry_from_obj(obj, lineno)
                key = (entry.image_id, entry.resolution)
                if key in seen:
                    raise DuplicateEntryError(
                        f"line {lineno}: duplicate entry for id '{entry.image_id}' at "
                        f"resolution {entry.resolution} (first on line {seen[key]})"
                    )
                seen[key] = lineno
                entries.append(entry)
                entry_lines.append(lineno)

    manifest = DatasetManifest(entries, relevance, root)

    gallery_ids = set(manifest.ids("gallery"))
    query_ids = set(manifest.ids("query"))
    for query, rel in relevance.items():
        lineno = relevance_lines[query]
        if query not in query_ids:
            raise DanglingRelevanceError(
                f"line {lineno}: relevance for '{query}' which is not a query id"
            )
        stray = (rel.positives | rel.junk) - gallery_ids
        if stray:
            raise DanglingRelevanceError(
                f"line {lineno}: relevance for '{query}' references "
                f"non-gallery ids {sorted(stray)}"
            )

    if check_files:
        channels: int | None = None
        channels_line: int | None = None
        for entry, lineno in zip(entries, entry_lines):
            fpath = manifest.resolve(entry)
            if not fpath.is_file():
                raise DanglingPathError(f"line {lineno}: no feature file at {fpath}")
            shape = read_tensor_header(fpath)
            if len(shape) != 3:
                raise ManifestError(f"line {lineno}: {fpath} is rank {len(shape)}, expected 3")
            if channels is None:
                channels, channels_line = shape[2], lineno
            elif shape[2] != channels:
                raise ChannelMismatchError(
                    f"line {lineno}: {fpath} has {shape[2]} channels but line "
                    f"{channels_line} established {channels}"
                )

    return manifest


def save_manifest(path, entries, relevance: dict | None = None) -> None:
    """Write a manifest; entries first, then relevance lines, both in order."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(
                json.dumps(
                    {
                        "id": e.image_id,
                        "label": e.label,
                        "split": e.split,
                        "resolution": e.resolution,
                        "path": e.feature_path,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
        for query, rel in (relevance or {}).items():
            fh.write(
                json.dumps(
                    {
                        "query": query,
                        "positives": sorted(rel.positives),
                        "junk": sorted(rel.junk),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
