"""Shared fixtures: every test runs against an isolated framework home."""

from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from recipes import build_demo_repo  # noqa: E402

from tagrun.executor import RunFlags, Runner  # noqa: E402
from tagrun.registry import Registry  # noqa: E402


@pytest.fixture
def home(tmp_path, monkeypatch) -> Path:
    home = tmp_path / "home"
    monkeypatch.setenv("TAGRUN_HOME", str(home))
    monkeypatch.delenv("TAGRUN_REPO_MIRROR", raising=False)
    monkeypatch.delenv("TAGRUN_URL_MIRROR", raising=False)
    monkeypatch.delenv("USE_CUDA", raising=False)
    return home


@pytest.fixture
def registry(home) -> Registry:
    return Registry(home)


@pytest.fixture
def demo_repo(tmp_path) -> Path:
    return build_demo_repo(tmp_path / "demo-repo")


@pytest.fixture
def seeded(registry, demo_repo) -> Registry:
    registry.register_repo("demo@recipes", source=demo_repo)
    return registry


@pytest.fixture
def make_runner(seeded):
    def factory(**flag_kwargs) -> Runner:
        return Runner(seeded, flags=RunFlags(**flag_kwargs),
                      base_env=dict(os.environ))
    return factory
