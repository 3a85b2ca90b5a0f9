#!/usr/bin/env python3
"""Export the measured iteration count."""
import json
import os
import sys

ctx = json.load(sys.stdin)
with open(os.path.join(ctx["workdir"], "iterations.txt")) as fh:
    iterations = fh.read().strip()
started = ctx["state"].get("bench_started_at")
print(json.dumps({
    "env_additions": {
        "CM_BENCH_ITERATIONS_DONE": iterations,
        "CM_BENCH_HAD_START_STAMP": "yes" if started else "no",
    },
    "return_code": 0,
}))
