"""
Clients dropping out mid-run
============================

Half the clients are sampled each round. At round 50 the dropout probability
jumps from 0 to 0.5; the change lands on the next round boundary.
"""

import numpy as np
from fedsim.cli import execute, resolve_scenario

scenario = resolve_scenario({}, {"n_clients": 10, "client_fraction": 0.5, "rounds": 100,
                                 "seed": 1, "schedule": "50:dropout_prob=0.5"})
session, csv_text = execute(scenario)
reports = session.series.reports

participants = np.array([len(r.participants) for r in reports])
comms = np.cumsum([r.comms_bytes for r in reports])
print("mean participants, rounds 1-50  :", participants[:50].mean())
print("mean participants, rounds 51-100:", participants[50:].mean())
print("comms bytes per round before/after:", comms[49] / 50, (comms[-1] - comms[49]) / 50)

# participation counts per client, ignoring which round they came from
hist = session.snapshot(["participation"])["participation"]
print("per-client participation rate:", hist)

# the first config_version bump marks the round the change took effect
first = next(r.round for r in reports if r.config_version == 1)
print("dropout active from round", first)
print(csv_text.splitlines()[first - 1])
print(csv_text.splitlines()[first])
