"""
Privacy noise versus accuracy
=============================

Every client delta is clipped to norm C and then gets gaussian noise with
standard deviation sigma*C on each coordinate.
"""

from fedsim.session import Session

print("sigma   final test loss")
for sigma in (0.0, 0.01, 0.05, 0.2):
    s = Session.create({"dataset": "circle", "n_clients": 8, "hidden_layers": [6, 3],
                        "input_features": ["x1", "x2", "x1_sq", "x2_sq"],
                        "dp_clip": 0.5, "dp_sigma": sigma, "seed": 6})
    last = s.step(120)[-1]
    print(f"{sigma:<7} {last.global_test_loss:.4f}")
