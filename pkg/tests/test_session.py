import io
import json
import threading

import numpy as np
import pytest

from fedsim.errors import ColdParamError, ConfigError, ParamRangeError, ProtocolError, UnknownClientError
from fedsim.protocol import Dispatcher, encode, serve
from fedsim.session import GRID_SIZE, Session, grid_points


def test_defaults():
    s = Session.create()
    assert s.round == 0 and len(s.sim.clients) == 5
    cfg = s.config.to_record()
    assert cfg["dataset"] == "gauss" and cfg["algorithm"] == "fedavg" and cfg["alpha_label"] == 0.5


def test_validation_names_key():
    with pytest.raises(ConfigError) as err:
        Session.create({"cluster_k": 7, "n_clients": 5})
    assert err.value.key == "cluster_k"
    with pytest.raises(ConfigError) as err:
        Session.create({"bogus": 1})
    assert err.value.key == "bogus"


def test_same_seed_same_snapshot():
    kinds = ["config", "data_distribution", "boundary_global"]
    a = Session.create({"seed": 5}).snapshot(kinds)
    b = Session.create({"seed": 5}).snapshot(kinds)
    assert a == b


def test_split_steps_equal_single_call():
    a = Session.create({"client_fraction": 0.6, "dropout_prob": 0.1, "seed": 9})
    b = Session.create({"client_fraction": 0.6, "dropout_prob": 0.1, "seed": 9})
    a.step(1)
    a.step(1)
    b.step(2)
    assert a.csv() == b.csv() and a.digest() == b.digest()


def test_step_count_and_centralized():
    s = Session.create({"federated_enabled": False})
    reports = s.step(3)
    assert [r.round for r in reports] == [1, 2, 3]
    assert all(r.comms_bytes == 0 for r in reports)
    with pytest.raises(ProtocolError):
        s.step(0)


def test_set_param_boundary_semantics():
    s = Session.create({"n_clients": 10, "client_fraction": 0.5, "seed": 1})
    s.step(2)
    ack = s.set_param("dropout_prob", 0.5)
    assert ack == {"key": "dropout_prob", "value": 0.5, "effective_round": 3}
    assert s.config.fl.dropout_prob == 0.0  # not yet applied
    s.step(1)
    assert s.config.fl.dropout_prob == 0.5
    assert s.series.reports[-1].config_version == 1


def test_set_param_errors_leave_state():
    s = Session.create()
    before = s.digest()
    with pytest.raises(ParamRangeError):
        s.set_param("client_lr", -1)
    with pytest.raises(ColdParamError):
        s.set_param("n_clients", 3)
    with pytest.raises(ColdParamError):
        s.set_param("cluster_k", 2)
    with pytest.raises(ProtocolError):
        s.set_param("nonsense", 3)
    with pytest.raises(ParamRangeError):
        s.set_param("mu", 0.5)  # FedAvg does not take mu
    assert s.digest() == before


def test_set_and_revert_is_invisible():
    a = Session.create({"seed": 4, "n_clients": 6, "client_fraction": 0.5})
    b = Session.create({"seed": 4, "n_clients": 6, "client_fraction": 0.5})
    a.step(3)
    b.step(3)
    a.set_param("dropout_prob", 0.9)
    a.set_param("algorithm", "SCAFFOLD")
    a.set_param("algorithm", "fedavg")
    a.set_param("dropout_prob", 0.0)
    a.step(5)
    b.step(5)
    assert a.csv() == b.csv() and a.sim.state_digest() == b.sim.state_digest()


def test_fedprox_hot_switch_with_mu():
    s = Session.create({"seed": 2})
    s.set_param("algorithm", "fedprox")
    s.set_param("mu", 0.1)
    s.step(2)
    assert s.config.fl.algorithm == "fedprox" and s.config.fl.mu == 0.1


def test_boundary_grid_layout():
    pts = grid_points()
    assert pts.shape == (GRID_SIZE * GRID_SIZE, 2)
    assert tuple(pts[0]) == (-6.0, -6.0)
    assert tuple(pts[1]) == (pytest.approx(-6 + 12 / 49), -6.0)  # x1 fastest
    assert tuple(pts[GRID_SIZE]) == (-6.0, pytest.approx(-6 + 12 / 49))
    assert tuple(pts[-1]) == (6.0, 6.0)


def test_zero_network_boundary():
    s = Session.create({"init_scale": 0.0})
    grid = s.snapshot(["boundary_global"])["boundary_global"]
    assert len(grid["values"]) == 2500 and not any(grid["values"])
    assert grid["origin"] == [-6.0, -6.0]


def test_boundary_values_in_range():
    s = Session.create({"hidden_layers": [8, 8], "init_scale": 2.0})
    s.step(3)
    vals = np.array(s.snapshot(["boundary_global"])["boundary_global"]["values"])
    assert np.all((vals >= -1) & (vals <= 1))


def test_local_training_clients_0_and_4():
    s = Session.create({"n_clients": 5, "partition": "skewed"})
    assert len(s.train_local(0, 5)) == 5
    s.train_local(4, 5)
    snap = s.snapshot(["boundary_global", "boundary_client:0", "boundary_client:4",
                       "boundary_client:1", {"kind": "boundary_cluster", "id": 0}])
    glob = snap["boundary_global"]["values"]
    assert snap["boundary_client:4"]["values"] != glob
    assert snap["boundary_client:0"]["values"] != glob
    assert snap["boundary_client:1"]["values"] == glob == snap["boundary_cluster:0"]["values"]
    with pytest.raises(UnknownClientError):
        s.snapshot(["boundary_client:5"])
    with pytest.raises(UnknownClientError):
        s.train_local(9, 1)


def test_snapshot_is_pure():
    s = Session.create({"n_clients": 4, "cluster_k": 2})
    s.step(4)
    s.train_local(1, 2)
    before = s.digest()
    s.snapshot(["metrics", "participation", "data_distribution", "boundary_global",
                "boundary_client:1", "boundary_cluster:1", "config"])
    assert s.digest() == before


def test_snapshot_unknown_kind():
    with pytest.raises(ProtocolError):
        Session.create().snapshot(["heatmap"])


def test_metrics_snapshot_mirrors_csv():
    s = Session.create()
    s.step(4)
    payload = s.snapshot(["metrics"])["metrics"]
    lines = s.csv().splitlines()
    assert ",".join(payload["columns"]) == lines[0]
    assert [",".join(r) for r in payload["rows"]] == lines[1:]


def test_reset_restarts_and_accepts_cold_changes():
    s = Session.create({"seed": 3})
    s.step(5)
    s.reset()
    assert s.round == 0 and len(s.series) == 0
    s.reset(seed=11, changes={"n_clients": 3})
    assert s.config.seed == 11 and len(s.sim.clients) == 3


def test_set_param_from_other_thread_lands_on_boundary():
    s = Session.create({"n_clients": 10, "client_fraction": 0.5, "seed": 8})
    first = threading.Event()
    original = s.sim.step

    def slow_step():
        report = original()
        first.set()
        return report

    s.sim.step = slow_step
    worker = threading.Thread(target=s.step, args=(40,))
    worker.start()
    first.wait()
    s.set_param("dropout_prob", 1.0)
    worker.join()
    versions = [r.config_version for r in s.series]
    assert versions == sorted(versions) and versions[-1] == 1
    switched = versions.index(1)
    assert all(r.participants == [] for r in s.series.reports[switched:])


def test_interrupt_stops_between_rounds():
    s = Session.create()
    original = s.sim.step

    def step_then_interrupt():
        r = original()
        if r.round == 3:
            s.interrupt()
        return r

    s.sim.step = step_then_interrupt
    assert len(s.step(10)) == 3
    assert s.status == "idle"


# -- protocol -------------------------------------------------------------------

def transcript():
    return [
        {"v": "fedsim/1", "cmd": "create", "config": {"n_clients": 5, "seed": 21, "client_fraction": 0.8}},
        {"v": "fedsim/1", "cmd": "step", "session": "s1", "count": 3},
        {"v": "fedsim/1", "cmd": "set_param", "session": "s1", "key": "dropout_prob", "value": 0.4},
        {"v": "fedsim/1", "cmd": "step", "session": "s1", "count": 2},
        {"v": "fedsim/1", "cmd": "train_local", "session": "s1", "client_id": 4, "epochs": 2},
        {"v": "fedsim/1", "cmd": "snapshot", "session": "s1",
         "kinds": ["metrics", "participation", "boundary_client:4", "config"]},
        {"v": "fedsim/1", "cmd": "set_param", "session": "s1", "key": "n_clients", "value": 2},
        {"v": "fedsim/1", "cmd": "reset", "session": "s1", "seed": 2},
        {"v": "fedsim/1", "cmd": "step", "session": "s1", "count": 1},
        {"v": "fedsim/1", "cmd": "destroy", "session": "s1"},
        {"v": "fedsim/1", "cmd": "step", "session": "s1"},
    ]


def test_one_event_per_command_and_codes():
    d = Dispatcher()
    events = [d.handle(c) for c in transcript()]
    assert [e["event"] for e in events] == [
        "created", "round_reports", "param_ack", "round_reports", "local_report",
        "snapshot", "error", "created", "round_reports", "destroyed", "error",
    ]
    assert all(e["v"] == "fedsim/1" for e in events)
    assert events[0]["P"] == 25 and events[0]["layout"] == [[4, 2], [2, 4], [1, 2]]
    assert events[6]["code"] == "E_COLD_PARAM"
    assert events[10]["code"] == "E_BAD_COMMAND"
    assert len(events[1]["reports"]) == 3


@pytest.mark.parametrize("command, code", [
    ({"cmd": "create", "config": {"cluster_k": 7}}, "E_VALIDATION"),
    ({"cmd": "launch"}, "E_BAD_COMMAND"),
    ({"v": "fedsim/0", "cmd": "create"}, "E_BAD_COMMAND"),
    ({"cmd": "set_param", "session": "s1", "key": "client_lr", "value": -1}, "E_RANGE"),
    ({"cmd": "train_local", "session": "s1", "client_id": 99}, "E_UNKNOWN_CLIENT"),
    ({"cmd": "snapshot", "session": "s1", "kinds": ["boundary_client:12"]}, "E_UNKNOWN_CLIENT"),
    ({"cmd": "step", "session": "s1", "count": -2}, "E_BAD_COMMAND"),
])
def test_error_codes(command, code):
    d = Dispatcher()
    d.handle({"cmd": "create"})
    ev = d.handle(command)
    assert ev["event"] == "error" and ev["code"] == code


def test_replay_is_bit_identical():
    first, second = Dispatcher(), Dispatcher()
    a = [encode(first.handle(c)) for c in transcript()]
    b = [encode(second.handle(c)) for c in transcript()]
    assert a == b


def test_stdio_transport():
    lines = "\n".join(json.dumps(c) for c in transcript()[:3]) + "\nnot json\n"
    out = io.StringIO()
    serve(io.StringIO(lines), out)
    events = [json.loads(l) for l in out.getvalue().splitlines()]
    assert [e["event"] for e in events] == ["created", "round_reports", "param_ack", "error"]
