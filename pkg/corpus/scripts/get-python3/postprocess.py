#!/usr/bin/env python3
"""Export the interpreter path written by run.sh."""
import json
import os
import sys

ctx = json.load(sys.stdin)
path_file = os.path.join(ctx["workdir"], "python_path.txt")
with open(path_file) as fh:
    python_bin = fh.read().strip()
print(json.dumps({
    "env_additions": {"CM_PYTHON_BIN_WITH_PATH": python_bin},
    "return_code": 0,
}))
