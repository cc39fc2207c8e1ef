"""
Two models for two populations
==============================

xor with strongly skewed clients, run once with one global model and once with
cluster_k=2. In the clustered run k-means on client weights regroups clients
every few rounds after a warmup, and each group trains its own model. Whether
that helps depends on how separable the client populations are; print and see.
"""

from fedsim.session import Session

base = {"dataset": "xor", "n_clients": 6, "alpha_label": 0.1, "hidden_layers": [6, 4],
        "local_epochs": 3, "seed": 2}

for k in (1, 2):
    s = Session.create({**base, "cluster_k": k, "cluster_warmup": 10, "cluster_period": 5})
    reports = s.step(80)
    print(f"cluster_k={k}")
    print("  cluster sizes over time:", [r.per_cluster_sizes for r in reports[8:30:5]])
    print("  final train loss:", round(reports[-1].global_train_loss, 4))
    print("  client -> cluster:", [c.cluster_id for c in s.sim.clients])
