"""Local repositories of meta-described artifacts.

The framework home (``~/.tagrun`` unless ``TAGRUN_HOME`` is set) holds:

* ``local/``        the implicit local repository (always present)
* ``repos/<name>/`` materialized external repositories
* ``repos.json``    the ordered list of registered external repositories
* ``lock``          advisory lock serializing all registry mutations
* ``tmp/``          scratch workspaces for non-cacheable runs

Every repository is a directory tree ``<root>[/<prefix>]/<kind-plural>/
<alias-or-uid>/`` where each leaf holds exactly one meta document plus its
payload files.  The on-disk tree is the source of truth; the in-memory
index is a cache that supports both incremental updates and full rescans.
"""

from __future__ import annotations

import fcntl
import json
import re
import secrets
import shutil
import subprocess
import sys
import tarfile
import tempfile
import time
import zipfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from . import metafile
from .errors import (
    CollisionError,
    ConfirmationRequired,
    LockTimeoutError,
    MetaError,
    QueryError,
    RepoError,
)
from .query import Query, UID_RE, matches, normalize_tags

ENV_HOME = "TAGRUN_HOME"
ENV_REPO_MIRROR = "TAGRUN_REPO_MIRROR"

LOCAL_REPO = "local"
KINDS = ("script", "cache", "experiment")
KIND_DIRS = {"script": "scripts", "cache": "caches", "experiment": "experiments"}

ALIAS_RE = re.compile(r"^[a-z0-9.-]+$")
LOCATOR_RE = re.compile(r"^[a-z0-9._-]+(@[a-z0-9._-]+)?$")


def framework_home(env: dict | None = None) -> Path:
    import os
    env = env if env is not None else os.environ
    override = env.get(ENV_HOME)
    if override:
        return Path(override).expanduser()
    return Path.home() / ".tagrun"


def new_uid() -> str:
    """16 lowercase hex characters from a cryptographic source."""
    return secrets.token_hex(8)


def validate_alias(alias: str) -> str:
    alias = alias.strip().lower()
    if not ALIAS_RE.match(alias):
        raise MetaError(f"invalid alias {alias!r} (allowed: a-z 0-9 . -)")
    if UID_RE.match(alias):
        raise MetaError(f"alias {alias!r} would be indistinguishable from a UID")
    return alias


@dataclass(frozen=True)
class ArtifactId:
    uid: str
    alias: str | None = None

    def __post_init__(self):
        if not UID_RE.match(self.uid):
            raise MetaError(f"invalid uid {self.uid!r} "
                            "(expected 16 lowercase hex characters)")
        if self.alias is not None:
            object.__setattr__(self, "alias", validate_alias(self.alias))


@dataclass
class Repository:
    name: str
    root: Path
    branch: str | None = None
    registration_order: int = 0
    prefix: str | None = None

    @property
    def artifact_root(self) -> Path:
        return self.root / self.prefix if self.prefix else self.root


@dataclass
class Artifact:
    id: ArtifactId
    kind: str
    tags: frozenset[str]
    repo: str
    path: Path
    meta: dict

    def describe(self) -> str:
        return f"{self.repo}:{self.id.alias or '-'} ({self.id.uid})"


@contextmanager
def registry_lock(home: Path, timeout: float = 10.0):
    """Advisory exclusive lock over all registry mutations."""
    home.mkdir(parents=True, exist_ok=True)
    lock_path = home / "lock"
    deadline = time.monotonic() + timeout
    with open(lock_path, "w") as fh:
        while True:
            try:
                fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
                break
            except OSError:
                if time.monotonic() >= deadline:
                    raise LockTimeoutError(
                        f"could not acquire registry lock {lock_path} "
                        f"within {timeout:.0f}s")
                time.sleep(0.05)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _artifact_from_dir(repo: Repository, kind: str, entry: Path) -> Artifact:
    doc = metafile.read_meta_dir(entry)
    uid = doc.get("uid")
    if not isinstance(uid, str):
        raise MetaError(f"{entry}: meta has no uid")
    alias = doc.get("alias")
    tags_field = doc.get("tags", [])
    if isinstance(tags_field, str):
        raw_tags = [t for t in tags_field.split(",") if t.strip()]
    else:
        raw_tags = list(tags_field)
    tags = normalize_tags(raw_tags, allow_variation_prefix=True)
    if kind == "script" and not tags:
        raise MetaError(f"{entry}: scripts must declare at least one tag")
    return Artifact(
        id=ArtifactId(uid=uid, alias=alias),
        kind=kind,
        tags=tags,
        repo=repo.name,
        path=entry,
        meta=doc,
    )


class Registry:
    """A set of repositories plus an index over their artifacts."""

    def __init__(self, home: Path | None = None):
        self.home = home or framework_home()
        self.home.mkdir(parents=True, exist_ok=True)
        self._ensure_local_repo()
        self._index: dict[str, list[Artifact]] | None = None

    # -- repositories --------------------------------------------------

    @property
    def repos_file(self) -> Path:
        return self.home / "repos.json"

    @property
    def local_root(self) -> Path:
        return self.home / LOCAL_REPO

    def _ensure_local_repo(self) -> None:
        root = self.local_root
        if not metafile.has_repo_descriptor(root):
            root.mkdir(parents=True, exist_ok=True)
            metafile.atomic_write(
                root / "_repo.json",
                json.dumps({"name": LOCAL_REPO, "uid": new_uid()},
                           indent=2, sort_keys=True) + "\n")

    def _read_repo_list(self) -> list[dict]:
        if not self.repos_file.is_file():
            return []
        try:
            entries = json.loads(self.repos_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise RepoError(
                f"repository list {self.repos_file} is corrupted: {exc}"
            ) from exc
        if not isinstance(entries, list):
            raise RepoError(f"repository list {self.repos_file} is corrupted: "
                            "expected a JSON array")
        return entries

    def _write_repo_list(self, entries: list[dict]) -> None:
        metafile.atomic_write(
            self.repos_file,
            json.dumps(entries, indent=2, sort_keys=True) + "\n")

    def _repo_from_entry(self, entry: dict, order: int) -> Repository:
        root = Path(entry["root"])
        repo = Repository(name=entry["name"], root=root,
                          branch=entry.get("branch"),
                          registration_order=order)
        if metafile.has_repo_descriptor(root):
            descriptor = metafile.read_repo_descriptor(root)
            repo.prefix = descriptor.get("prefix")
        else:
            raise RepoError(f"repository {repo.name} at {root} has no "
                            "descriptor file")
        return repo

    def list_repos(self) -> list[Repository]:
        """All repositories in registration order, the local repo first."""
        repos = [Repository(name=LOCAL_REPO, root=self.local_root,
                            registration_order=0)]
        for i, entry in enumerate(self._read_repo_list(), start=1):
            repos.append(self._repo_from_entry(entry, i))
        return repos

    def get_repo(self, name: str) -> Repository:
        for repo in self.list_repos():
            if repo.name == name:
                return repo
        raise NotFoundRepo(name)

    def register_repo(self, locator: str, branch: str | None = None,
                      source: str | Path | None = None) -> Repository:
        """Materialize a repository under the framework home and index it.

        ``source`` may be a local directory, a ``.tar.gz``/``.zip`` archive,
        or a git URL (fetched with the external ``git`` tool).  Without an
        explicit source the locator is looked up in the directory named by
        ``TAGRUN_REPO_MIRROR`` and finally treated as a GitHub project.
        Re-registering an existing name updates it in place.
        """
        import os

        locator = locator.strip().lower()
        if not LOCATOR_RE.match(locator):
            raise RepoError(f"invalid repository locator {locator!r} "
                            "(expected org@repo or a bare name)")
        if locator == LOCAL_REPO:
            raise RepoError("'local' names the implicit local repository")

        dest = self.home / "repos" / locator
        with registry_lock(self.home):
            resolved = self._resolve_repo_source(locator, branch, source,
                                                 os.environ)
            staged = self._materialize(locator, resolved, branch)
            if not metafile.has_repo_descriptor(staged):
                shutil.rmtree(staged, ignore_errors=True)
                raise RepoError(
                    f"source for {locator} has a malformed repository "
                    "descriptor (no _repo.yaml or _repo.json)")
            descriptor = metafile.read_repo_descriptor(staged)
            # The locator is authoritative for the registered name.
            descriptor["name"] = locator
            descriptor.setdefault("uid", new_uid())
            for name in metafile.REPO_STEMS:
                (staged / name).unlink(missing_ok=True)
            metafile.atomic_write(
                staged / "_repo.json",
                json.dumps(descriptor, indent=2, sort_keys=True) + "\n")

            if dest.exists():
                shutil.rmtree(dest)
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(staged, dest)

            entries = self._read_repo_list()
            record = {"name": locator, "root": str(dest), "branch": branch}
            for i, entry in enumerate(entries):
                if entry["name"] == locator:
                    entries[i] = record
                    break
            else:
                entries.append(record)
            self._write_repo_list(entries)

        self._index = None
        return self.get_repo(locator)

    def unregister_repo(self, name: str) -> str:
        """Remove a registered repository and its materialized tree."""
        name = name.strip().lower()
        if name == LOCAL_REPO:
            raise RepoError("the implicit local repository cannot be removed")
        with registry_lock(self.home):
            entries = self._read_repo_list()
            keep = [e for e in entries if e["name"] != name]
            if len(keep) == len(entries):
                raise NotFoundRepo(name)
            removed = next(e for e in entries if e["name"] == name)
            self._write_repo_list(keep)
            root = Path(removed["root"])
            if root.exists():
                shutil.rmtree(root)
        self._index = None
        return name

    def _resolve_repo_source(self, locator: str, branch: str | None,
                             source, env) -> str | Path:
        if source is not None:
            return source
        mirror = env.get(ENV_REPO_MIRROR)
        if mirror:
            base = Path(mirror) / locator
            for candidate in (base, base.with_name(base.name + ".tar.gz"),
                              base.with_name(base.name + ".zip")):
                if candidate.exists():
                    return candidate
        if "@" in locator:
            org, repo = locator.split("@", 1)
            return f"https://github.com/{org}/{repo}"
        raise RepoError(f"no source available for repository {locator!r}; "
                        "pass --url or set " + ENV_REPO_MIRROR)

    def _materialize(self, locator: str, source: str | Path,
                     branch: str | None) -> Path:
        """Stage the repository contents into a temp dir inside home."""
        staging_base = self.home / "repos"
        staging_base.mkdir(parents=True, exist_ok=True)
        staged = Path(tempfile.mkdtemp(prefix=f".{locator}.", dir=staging_base))

        src_str = str(source)
        if isinstance(source, Path) or "://" not in src_str:
            path = Path(src_str).expanduser()
            if path.is_dir():
                shutil.rmtree(staged)
                shutil.copytree(path, staged, symlinks=True)
                return staged
            if path.is_file():
                return self._extract_archive(path, staged)
            raise RepoError(f"repository source {path} does not exist")

        # A URL: delegate to git (archives over HTTP are out of scope).
        cmd = ["git", "clone", "--depth", "1"]
        if branch:
            cmd += ["--branch", branch]
        cmd += [src_str, str(staged)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            shutil.rmtree(staged, ignore_errors=True)
            raise RepoError(f"cannot fetch {src_str}: {proc.stderr.strip()}")
        return staged

    def _extract_archive(self, archive: Path, staged: Path) -> Path:
        name = archive.name
        if name.endswith((".tar.gz", ".tgz", ".tar")):
            with tarfile.open(archive) as tf:
                tf.extractall(staged)
        elif name.endswith(".zip"):
            with zipfile.ZipFile(archive) as zf:
                zf.extractall(staged)
        else:
            raise RepoError(f"unsupported archive format: {name}")
        # Accept archives that wrap everything in one top-level directory.
        entries = [p for p in staged.iterdir()]
        if len(entries) == 1 and entries[0].is_dir() \
                and not metafile.has_repo_descriptor(staged):
            return entries[0]
        return staged

    # -- scanning and the index -----------------------------------------

    def rescan(self) -> dict[str, list[Artifact]]:
        """Rebuild the index from the on-disk repository trees."""
        index: dict[str, list[Artifact]] = {kind: [] for kind in KINDS}
        for repo in self.list_repos():
            for kind in KINDS:
                kind_dir = repo.artifact_root / KIND_DIRS[kind]
                if not kind_dir.is_dir():
                    continue
                for entry in sorted(kind_dir.iterdir()):
                    if not entry.is_dir():
                        continue
                    if not any((entry / n).is_file()
                               for n in metafile.META_STEMS):
                        continue  # payload leftovers are not entries
                    index[kind].append(_artifact_from_dir(repo, kind, entry))
        self._index = index
        return index

    def _ensure_index(self) -> dict[str, list[Artifact]]:
        if self._index is None:
            self.rescan()
        return self._index

    def scan(self, kind: str | None = None) -> list[Artifact]:
        index = self._ensure_index()
        if kind is None:
            return [a for k in KINDS for a in index[k]]
        if kind not in KINDS:
            raise QueryError(f"unknown artifact kind {kind!r}")
        return list(index[kind])

    def index_snapshot(self) -> set[tuple]:
        """Comparable view of the index (for rescan-equivalence checks)."""
        return {
            (a.kind, a.repo, a.id.uid, a.id.alias, tuple(sorted(a.tags)))
            for a in self.scan()
        }

    def find(self, query: Query, kind: str) -> list[Artifact]:
        return [a for a in self.scan(kind) if matches(query, a)]

    def resolve_name(self, kind: str, name: str) -> list[Artifact]:
        """Exact alias-or-uid lookup across all repositories."""
        name = name.strip().lower()
        hits = []
        for artifact in self.scan(kind):
            if artifact.id.uid == name or artifact.id.alias == name:
                hits.append(artifact)
        return hits

    def fresh_uid(self) -> str:
        taken = {a.id.uid for a in self.scan()}
        while True:
            uid = new_uid()
            if uid not in taken:
                return uid

    # -- mutations -------------------------------------------------------

    def add_artifact(self, kind: str, alias: str | None, tags,
                     target_repo: str | None = None,
                     extra_meta: dict | None = None,
                     scaffold: bool = True) -> Artifact:
        """Create an artifact directory with a fresh meta document."""
        if kind not in KINDS:
            raise QueryError(f"unknown artifact kind {kind!r}")
        if alias is not None:
            alias = validate_alias(alias)
        tags = normalize_tags(tags, allow_variation_prefix=True)
        if kind == "script" and not tags:
            raise MetaError("scripts must declare at least one tag")

        repo = self.get_repo(target_repo or LOCAL_REPO)
        with registry_lock(self.home):
            self._ensure_index()
            if alias is not None:
                for existing in self.scan(kind):
                    if existing.repo == repo.name and existing.id.alias == alias:
                        raise CollisionError(
                            f"{kind} alias {alias!r} already exists in "
                            f"repository {repo.name}")
            uid = self.fresh_uid()
            directory = repo.artifact_root / KIND_DIRS[kind] / (alias or uid)
            if directory.exists():
                raise CollisionError(f"directory {directory} already exists")
            directory.mkdir(parents=True)
            doc = dict(extra_meta or {})
            doc.update({"uid": uid, "alias": alias,
                        "tags": sorted(tags)})
            metafile.write_meta_yaml(directory, doc)
            if kind == "script" and scaffold:
                self._scaffold_script(directory, alias or uid)
            artifact = _artifact_from_dir(repo, kind, directory)
            self._index[kind].append(artifact)
        return artifact

    @staticmethod
    def _scaffold_script(directory: Path, name: str) -> None:
        sh = directory / "run.sh"
        sh.write_text("#!/bin/sh\n"
                      f"echo \"running {name}\"\n", encoding="utf-8")
        sh.chmod(0o755)
        (directory / "run.bat").write_text(
            f"@echo off\r\necho running {name}\r\n", encoding="utf-8")

    def remove_artifact(self, kind: str, selector: Query, force: bool = False,
                        interactive: bool | None = None) -> int:
        """Delete all artifacts matching ``selector``; returns the count.

        An empty selector is a full wipe of the kind and needs ``force``
        (or an interactive confirmation on a terminal).
        """
        if interactive is None:
            interactive = sys.stdin.isatty()
        if selector.is_empty() and not force:
            if not interactive:
                raise ConfirmationRequired(
                    f"refusing to remove every {kind} without --force")
            answer = input(f"really remove ALL {KIND_DIRS[kind]}? [y/N] ")
            if answer.strip().lower() not in ("y", "yes"):
                return 0
        with registry_lock(self.home):
            self._ensure_index()
            victims = self.find(selector, kind)
            for artifact in victims:
                shutil.rmtree(artifact.path, ignore_errors=False)
            keep = [a for a in self._index[kind]
                    if a.path not in {v.path for v in victims}]
            self._index[kind] = keep
        return len(victims)


class NotFoundRepo(RepoError):
    error_class = "not-found"

    def __init__(self, name: str):
        super().__init__(f"no repository named {name!r} is registered")
