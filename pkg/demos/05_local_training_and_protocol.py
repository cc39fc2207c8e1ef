"""
Local training seen through the protocol
========================================

A front end talks to the engine with fedsim/1 commands, one JSON object per
line. Training clients 0 and 4 on their own data moves their decision surface
away from the global one; clients that never trained still show the global model.
A client that takes part in a federated round keeps its post-training weights
for display, so this is done before any round is run.
"""

import json
from fedsim.protocol import Dispatcher, encode

d = Dispatcher()
created = d.handle({"v": "fedsim/1", "cmd": "create",
                    "config": {"n_clients": 5, "partition": "skewed", "seed": 3}})
print(encode(created)[:120], "...")

for cid in (0, 4):
    ev = d.handle({"cmd": "train_local", "session": "s1", "client_id": cid, "epochs": 5})
    print(f"client {cid} local losses:", [round(l, 4) for l in ev["losses"]])

snap = d.handle({"cmd": "snapshot", "session": "s1",
                 "kinds": ["boundary_global"] + [f"boundary_client:{i}" for i in range(5)]})
grids = snap["payloads"]
glob = grids["boundary_global"]["values"]
for i in range(5):
    same = grids[f"boundary_client:{i}"]["values"] == glob
    print(f"client {i} heatmap equals global: {same}")

# errors come back as events too
print(json.dumps(d.handle({"cmd": "set_param", "session": "s1", "key": "n_clients", "value": 3})))
