"""Tag-keyed store of recipe outputs.

A cache entry is an ordinary artifact (kind=cache) under the local
repository: a directory holding ``_meta.json`` plus the payload files the
recipe produced.  Entries are keyed by their tag set (the producing
recipe's effective tags, i.e. script tags plus ``_variation`` tags plus an
optional ``version-X.Y.Z`` tag) and by a digest over the resolved
dependency plan.  Environment values are deliberately not part of the key;
``force_rerun`` is the escape hatch when that staleness matters.

Writes are ordered payload-first, meta-last, so an interrupted store
leaves a directory that the registry scan ignores (no meta, no entry).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import metafile
from .query import Query
from .registry import KIND_DIRS, Registry, registry_lock

VERSION_TAG_PREFIX = "version-"


def dep_signature(steps: list[tuple]) -> str:
    """Digest over the canonicalized ordered dependency plan.

    Each step contributes ``(uid, sorted variations, version bounds)``;
    any change to a resolved uid or variation list changes the digest.
    """
    canonical = [
        {
            "uid": uid,
            "variations": sorted(variations),
            "version_min": vmin,
            "version_max": vmax,
        }
        for uid, variations, vmin, vmax in steps
    ]
    blob = json.dumps(canonical, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class CacheEntry:
    uid: str
    alias: str | None
    tags: frozenset[str]
    dir: Path
    env_snapshot: dict[str, str]
    dep_signature: str
    created_at: float = field(default_factory=time.time)
    version: str | None = None

    def version_tag(self) -> str | None:
        return f"{VERSION_TAG_PREFIX}{self.version}" if self.version else None


class CacheStore:
    """Probe/store/invalidate over cache artifacts in the local repo."""

    def __init__(self, registry: Registry):
        self.registry = registry

    @property
    def cache_root(self) -> Path:
        return self.registry.local_root / KIND_DIRS["cache"]

    # -- lookup ---------------------------------------------------------

    def entries(self) -> list[CacheEntry]:
        out = []
        for artifact in self.registry.scan("cache"):
            meta = artifact.meta
            out.append(CacheEntry(
                uid=artifact.id.uid,
                alias=artifact.id.alias,
                tags=artifact.tags,
                dir=artifact.path,
                env_snapshot=dict(meta.get("env_snapshot") or {}),
                dep_signature=str(meta.get("dep_signature") or ""),
                created_at=float(meta.get("created_at") or 0.0),
                version=meta.get("version") or None,
            ))
        return out

    def probe(self, effective_tags: frozenset[str], signature: str,
              version_min: str | None = None,
              version_max: str | None = None) -> CacheEntry | None:
        """Newest entry whose tags cover ``effective_tags`` and whose plan
        digest matches; a miss returns None, never an error."""
        from .executor import check_version  # local import, no cycle at load

        best: CacheEntry | None = None
        for entry in self.entries():
            if not set(effective_tags) <= entry.tags:
                continue
            if entry.dep_signature != signature:
                continue
            if version_min or version_max:
                if not entry.version:
                    continue
                if not check_version(entry.version, version_min, version_max):
                    continue
            if best is None or entry.created_at > best.created_at:
                best = entry
        return best

    # -- mutation ---------------------------------------------------------

    def new_payload_dir(self) -> tuple[str, Path]:
        """Reserve a payload directory for a run that may be cached.

        No meta is written yet, so a crash before ``store`` leaves a
        directory the scanner does not consider an entry.
        """
        with registry_lock(self.registry.home):
            uid = self.registry.fresh_uid()
            directory = self.cache_root / uid
            directory.mkdir(parents=True)
        return uid, directory

    def store(self, entry: CacheEntry) -> str:
        """Register a populated payload directory as a cache entry."""
        doc = {
            "uid": entry.uid,
            "alias": entry.alias,
            "tags": sorted(entry.tags | ({entry.version_tag()}
                                         if entry.version else set())),
            "env_snapshot": dict(sorted(entry.env_snapshot.items())),
            "dep_signature": entry.dep_signature,
            "created_at": entry.created_at,
            "version": entry.version,
        }
        with registry_lock(self.registry.home):
            if not entry.dir.is_dir():
                raise FileNotFoundError(f"cache payload dir {entry.dir} "
                                        "does not exist")
            self._write_meta(entry.dir, doc)
            self.registry.rescan()
        return entry.uid

    @staticmethod
    def _write_meta(directory: Path, doc: dict) -> None:
        # Split out so fault-injection tests can fail between payload
        # creation and index visibility.
        metafile.write_meta_json(directory, doc)

    def invalidate(self, selector: Query, force: bool = False,
                   interactive: bool | None = None) -> int:
        """Remove matching entries and their payload directories."""
        return self.registry.remove_artifact("cache", selector, force=force,
                                             interactive=interactive)
