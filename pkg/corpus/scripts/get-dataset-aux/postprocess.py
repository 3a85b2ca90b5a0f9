#!/usr/bin/env python3
import json
import sys

ctx = json.load(sys.stdin)
print(json.dumps({
    "env_additions": {"CM_DATASET_AUX_PATH": ctx["workdir"]},
    "return_code": 0,
}))
