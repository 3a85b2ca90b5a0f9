#!/usr/bin/env python3
import json
import os
import sys

ctx = json.load(sys.stdin)
print(json.dumps({
    "env_additions": {
        "CM_DATASET_PATH": os.path.join(ctx["workdir"], "data"),
        "CM_DATASET_SIZE": ctx["env"].get("CM_DATASET_SIZE", "50000"),
    },
    "return_code": 0,
}))
