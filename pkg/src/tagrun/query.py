"""Tag selectors: parsing, normalization and matching.

A selector is a small string language shared by the CLI positional
argument (space separated, e.g. ``"get ml-model resnet50 _fp32"``) and the
``--tags=`` flag (comma separated, e.g. ``--tags=ml-model,resnet50,_fp32``):

* ``name``     required tag
* ``-name``    excluded tag
* ``_name``    variation (configuration variant; matched as a literal
               ``_name`` tag on cache and experiment artifacts)
* a lone 16-hex token selects by UID
* a token containing ``*`` or ``?`` is an anchored alias glob
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, TYPE_CHECKING

from .errors import AmbiguousError, NotFoundError, QueryError

if TYPE_CHECKING:
    from .registry import Artifact

UID_RE = re.compile(r"^[0-9a-f]{16}$")
TAG_RE = re.compile(r"^[a-z0-9._-]+$")
PATTERN_RE = re.compile(r"^[a-z0-9._*?-]+$")

# Variation-selecting kinds: the query's variations act as ``_name`` tags.
VARIATION_TAGGED_KINDS = ("cache", "experiment")


def normalize_tag(raw: str, *, allow_variation_prefix: bool = False) -> str:
    """Lowercase and validate a single tag.

    Tags stored on cache entries may legitimately start with ``_`` (the
    variation marker); query-side tags may not, since the parser already
    consumed that prefix.
    """
    tag = raw.strip().lower()
    if not tag:
        raise QueryError("empty tag")
    body = tag[1:] if (allow_variation_prefix and tag.startswith("_")) else tag
    if not body or not TAG_RE.match(body):
        raise QueryError(f"illegal characters in tag {raw!r} "
                         "(allowed: a-z 0-9 . _ -)")
    return tag


def normalize_tags(raw_tags: Iterable[str], **kw) -> frozenset[str]:
    return frozenset(normalize_tag(t, **kw) for t in raw_tags)


@dataclass(frozen=True)
class Query:
    """A parsed selector.

    ``variations`` keeps surface order: later variations override earlier
    ones when their environment settings collide.  ``source`` remembers
    the surface string the query was parsed from (for echoing commands
    back to the user); it does not participate in equality.
    """

    required: frozenset[str] = frozenset()
    excluded: frozenset[str] = frozenset()
    variations: tuple[str, ...] = ()
    uid: str | None = None
    alias_pattern: str | None = None
    source: str | None = field(default=None, compare=False)

    def is_empty(self) -> bool:
        return (not self.required and not self.excluded
                and not self.variations and self.uid is None
                and self.alias_pattern is None)

    def render(self) -> str:
        """Canonical surface syntax; ``parse_query(q.render()) == q``."""
        tokens = sorted(self.required)
        tokens += [f"-{t}" for t in sorted(self.excluded)]
        tokens += [f"_{v}" for v in self.variations]
        if self.uid:
            tokens.append(self.uid)
        if self.alias_pattern:
            tokens.append(self.alias_pattern)
        return " ".join(tokens)

    def surface(self) -> str:
        """The user's own spelling when known, canonical form otherwise."""
        return self.source if self.source is not None else self.render()


def _tokenize(raw: str, syntax: str) -> list[str]:
    if syntax == "comma":
        tokens = [t.strip() for t in raw.split(",")]
        if any(not t for t in tokens) and raw.strip():
            raise QueryError(f"empty tag in comma-separated selector {raw!r}")
        return [t for t in tokens if t]
    if syntax == "space":
        return raw.split()
    raise ValueError(f"unknown selector syntax {syntax!r}")


def parse_query(raw: str, syntax: str = "space") -> Query:
    """Parse a selector string; see the module docstring for the grammar."""
    tokens = _tokenize(raw, syntax)
    required: list[str] = []
    excluded: list[str] = []
    variations: list[str] = []
    alias_pattern = None

    for token in tokens:
        if token.startswith("_") and len(token) > 1:
            variations.append(normalize_tag(token[1:]))
        elif token.startswith("-") and len(token) > 1:
            excluded.append(
                normalize_tag(token[1:], allow_variation_prefix=True))
        elif "*" in token or "?" in token:
            if alias_pattern is not None:
                raise QueryError(
                    f"more than one wildcard pattern in selector {raw!r}")
            pattern = token.strip().lower()
            if not PATTERN_RE.match(pattern):
                raise QueryError(f"illegal characters in pattern {token!r}")
            alias_pattern = pattern
        else:
            required.append(normalize_tag(token))

    uid = None
    if (len(tokens) == 1 and not variations and not excluded
            and alias_pattern is None and UID_RE.match(tokens[0])):
        uid = tokens[0]
        required = []

    req = frozenset(required)
    exc = frozenset(excluded)
    overlap = req & exc
    if overlap:
        raise QueryError("tags both required and excluded: "
                         + ", ".join(sorted(overlap)))
    return Query(required=req, excluded=exc, variations=tuple(variations),
                 uid=uid, alias_pattern=alias_pattern,
                 source=" ".join(tokens))


def merge_queries(a: Query, b: Query) -> Query:
    """Combine a positional selector with a ``--tags=`` selector."""
    if (a.uid and not b.is_empty()) or (b.uid and not a.is_empty()):
        raise QueryError("cannot combine a UID selector with tags")
    if a.alias_pattern and b.alias_pattern:
        raise QueryError("more than one wildcard pattern")
    required = a.required | b.required
    excluded = a.excluded | b.excluded
    overlap = required & excluded
    if overlap:
        raise QueryError("tags both required and excluded: "
                         + ", ".join(sorted(overlap)))
    if a.is_empty() or b.is_empty():
        source = b.source if a.is_empty() else a.source
    else:
        source = None
    return Query(
        required=required,
        excluded=excluded,
        variations=a.variations + b.variations,
        uid=a.uid or b.uid,
        alias_pattern=a.alias_pattern or b.alias_pattern,
        source=source,
    )


def glob_match(pattern: str, text: str) -> bool:
    """Anchored glob with ``*`` (any run) and ``?`` (one char) only."""
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.fullmatch("".join(parts), text) is not None


def matches(query: Query, artifact: "Artifact") -> bool:
    """Pure predicate: does ``artifact`` satisfy ``query``?

    Variations never participate in script matching (they select a
    configuration of the chosen script); on cache and experiment artifacts
    they are stored as literal ``_name`` tags and must be present.
    """
    if query.uid is not None and artifact.id.uid != query.uid:
        return False
    if query.alias_pattern is not None:
        if not glob_match(query.alias_pattern, artifact.id.alias or ""):
            return False
    required = set(query.required)
    if artifact.kind in VARIATION_TAGGED_KINDS:
        required.update(f"_{v}" for v in query.variations)
    if not required <= artifact.tags:
        return False
    if query.excluded & artifact.tags:
        return False
    return True


def select_unique(query: Query, candidates: list["Artifact"]) -> "Artifact":
    """Require exactly one match; zero and many are distinct errors."""
    if not candidates:
        raise NotFoundError(f"no artifact matches selector '{query.render()}'")
    if len(candidates) > 1:
        listing = [c.describe() for c in candidates]
        raise AmbiguousError(
            f"selector '{query.render()}' is ambiguous, "
            f"{len(candidates)} candidates:\n  " + "\n  ".join(listing),
            candidates=listing,
        )
    return candidates[0]


def strip_variations(query: Query) -> Query:
    return replace(query, variations=())
