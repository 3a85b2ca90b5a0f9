"""tagrun: a decentralized, tag-addressed automation recipe runner.

Recipes (meta description + platform scripts + hooks) live in plain
directory-tree repositories, are discovered by tags, UID or alias glob,
execute through conditional dependency pipelines with layered environment
accumulation, and cache their outputs for reuse by any other pipeline.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import TagrunError, UsageError
from .query import Query, parse_query, matches, select_unique
from .registry import Registry, framework_home
from .executor import Runner, RunFlags, check_version, detect_platform

__all__ = [
    "TagrunError",
    "UsageError",
    "Query",
    "parse_query",
    "matches",
    "select_unique",
    "Registry",
    "framework_home",
    "Runner",
    "RunFlags",
    "check_version",
    "detect_platform",
    "__version__",
]
