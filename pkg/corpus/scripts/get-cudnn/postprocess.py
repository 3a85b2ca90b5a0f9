#!/usr/bin/env python3
import json
import sys

json.load(sys.stdin)
print(json.dumps({"env_additions": {"CM_CUDNN_VERSION": "9.0-stub"},
                  "return_code": 0}))
