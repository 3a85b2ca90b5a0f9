"""Corpus health fixtures: drive the installed CLI as a subprocess only."""

from __future__ import annotations

import json
import os
import shlex
import subprocess
from pathlib import Path

import pytest

CORPUS_ROOT = Path(__file__).resolve().parents[1]


class Cli:
    """Invoke the installed ``cm`` binary against a private home."""

    def __init__(self, home: Path, cwd: Path):
        self.home = home
        self.cwd = cwd
        self.env = {**os.environ, "TAGRUN_HOME": str(home)}
        self.env.pop("TAGRUN_URL_MIRROR", None)
        self.env.pop("USE_CUDA", None)

    def run(self, command: str, expect: int = 0) -> subprocess.CompletedProcess:
        argv = shlex.split(command)
        proc = subprocess.run(["cm", *argv], capture_output=True, text=True,
                              env=self.env, cwd=self.cwd)
        assert proc.returncode == expect, (
            f"cm {command!r} exited {proc.returncode}, expected {expect}\n"
            f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
        return proc

    def json(self, command: str, expect: int = 0) -> dict:
        proc = self.run(command + " --json", expect=expect)
        return json.loads(proc.stdout.strip().splitlines()[-1])


@pytest.fixture
def cli(tmp_path) -> Cli:
    workdir = tmp_path / "work"
    workdir.mkdir()
    client = Cli(home=tmp_path / "home", cwd=workdir)
    client.run(f"pull repo corpus@starter --url={CORPUS_ROOT}")
    return client
