"""Headless scenario runner.

    fedsim run --dataset gauss --clients 10 --fraction 0.5 --rounds 100 \\
        --schedule 50:dropout_prob=0.5 --out run.csv
    fedsim run --config run.manifest.json --out replay.csv
    fedsim compare a.manifest.json b.manifest.json
    fedsim serve            # fedsim/1 protocol over stdin/stdout
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import HOT_KEYS, PROTOCOL_VERSION, SessionConfig, coerce
from .errors import ConfigError, FedsimError
from .session import Session

EXIT_OK, EXIT_ENGINE, EXIT_USAGE = 0, 1, 2

# flag dest -> config key
FLAG_KEYS = {
    "dataset": "dataset",
    "n": "n_points",
    "noise": "noise",
    "train_ratio": "train_ratio",
    "clients": "n_clients",
    "fraction": "client_fraction",
    "dropout": "dropout_prob",
    "alpha": "alpha_label",
    "size_alpha": "alpha_size",
    "partition": "partition",
    "algorithm": "algorithm",
    "mu": "mu",
    "server_lr": "server_lr",
    "beta1": "beta1",
    "beta2": "beta2",
    "tau": "tau",
    "dp_clip": "dp_clip",
    "dp_sigma": "dp_sigma",
    "clusters": "cluster_k",
    "cluster_metric": "cluster_metric",
    "cluster_warmup": "cluster_warmup",
    "cluster_period": "cluster_period",
    "local_epochs": "local_epochs",
    "batch": "batch_size",
    "lr": "client_lr",
    "hidden": "hidden_layers",
    "activation": "hidden_activation",
    "features": "input_features",
    "l2": "l2_lambda",
    "seed": "seed",
}


class UsageError(Exception):
    pass


def parse_schedule(text: str) -> list[tuple[int, str, object]]:
    """``"50:dropout_prob=0.5,60:client_lr=0.01"`` -> [(50, key, value), ...]."""
    entries = []
    for chunk in filter(None, (c.strip() for c in text.split(","))):
        try:
            when, assignment = chunk.split(":", 1)
            key, value = assignment.split("=", 1)
            entries.append((int(when), key.strip(), value.strip()))
        except ValueError:
            raise UsageError(f"bad schedule entry {chunk!r}; expected round:key=value") from None
    return entries


def resolve_scenario(base: dict, overrides: dict) -> dict:
    """Merge a file record with flag overrides and validate the result."""
    record = dict(base.get("scenario", base))
    record.update(overrides)
    rounds = record.pop("rounds", 100)
    schedule = record.pop("schedule", [])
    fmt = record.pop("format", "csv")
    if isinstance(schedule, str):
        schedule = parse_schedule(schedule)
    schedule = [tuple(e) for e in schedule]
    try:
        rounds = int(rounds)
        config = SessionConfig.from_record(record)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if rounds < 1:
        raise UsageError("rounds must be positive")
    if fmt not in ("csv", "records"):
        raise UsageError("format must be csv or records")
    for when, key, value in schedule:
        if not 1 <= int(when) <= rounds:
            raise UsageError(f"schedule round {when} outside [1, {rounds}]")
        if key not in HOT_KEYS:
            raise UsageError(f"schedule key {key!r} is not a hot parameter")
        try:
            coerce(key, value)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    scenario = config.to_record()
    scenario.update(rounds=rounds, schedule=[[int(w), k, v] for w, k, v in schedule], format=fmt)
    return scenario


def execute(scenario: dict) -> tuple[Session, str]:
    """Run a resolved scenario; returns the session and the rendered output."""
    record = {k: v for k, v in scenario.items() if k not in ("rounds", "schedule", "format")}
    session = Session.create(record)
    by_round: dict[int, list] = {}
    for when, key, value in scenario["schedule"]:
        by_round.setdefault(int(when), []).append((key, value))
    for r in range(1, scenario["rounds"] + 1):
        session.step(1)
        # entries at round r take effect from round r + 1, in listed order
        for key, value in by_round.get(r, ()):
            session.set_param(key, value)
    if scenario["format"] == "csv":
        text = session.csv()
    else:
        text = "".join(json.dumps(rec) + "\n" for rec in session.series.to_records())
    return session, text


def manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def run_scenario(scenario: dict, out: str | Path | None = None) -> tuple[int, str, dict]:
    session, text = execute(scenario)
    last = session.series.reports[-1]
    manifest = {
        "version": PROTOCOL_VERSION,
        "scenario": scenario,
        "summary": {
            "rounds": len(session.series),
            "final_global_train_loss": last.global_train_loss,
            "final_global_test_loss": last.global_test_loss,
            "total_comms_bytes": sum(r.comms_bytes for r in session.series),
        },
    }
    if out is not None:
        out = Path(out)
        out.write_text(text)
        manifest_path(out).write_text(json.dumps(manifest, indent=2) + "\n")
    return EXIT_OK, text, manifest


# fields that must agree for two runs to be comparable
_DATA_KEYS = ("dataset", "n_points", "noise", "train_ratio", "partition",
              "alpha_label", "alpha_size", "n_clients", "seed")


def compare_runs(manifests: list[dict], names: list[str] | None = None) -> list[dict]:
    if len(manifests) < 2:
        raise UsageError("compare needs at least two manifests")
    names = names or [f"run{i}" for i in range(len(manifests))]
    ref = manifests[0]["scenario"]
    rows = []
    for name, m in zip(names, manifests):
        sc = m["scenario"]
        diff = [k for k in _DATA_KEYS if sc.get(k) != ref.get(k)]
        if diff:
            raise UsageError(f"{name} differs in data settings: {', '.join(diff)}")
        rows.append({
            "run": name,
            "algorithm": sc["algorithm"],
            "federated": sc["federated_enabled"],
            "final_global_test_loss": m["summary"]["final_global_test_loss"],
            "total_comms_bytes": m["summary"]["total_comms_bytes"],
        })
    rows.sort(key=lambda r: r["final_global_test_loss"])
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'run':<32} {'algorithm':<9} {'test_loss':>12} {'comms_bytes':>14}"]
    for r in rows:
        algo = r["algorithm"] if r["federated"] else "central"
        lines.append(
            f"{r['run']:<32} {algo:<9} {r['final_global_test_loss']:>12.9g} {r['total_comms_bytes']:>14d}"
        )
    return "\n".join(lines) + "\n"


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Federated learning playground simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario headlessly", argument_default=argparse.SUPPRESS)
    run.add_argument("--config", help="JSON scenario or manifest file")
    run.add_argument("--dataset", choices=["circle", "xor", "gauss", "spiral"])
    run.add_argument("--n", type=int, help="number of points")
    run.add_argument("--noise", type=float)
    run.add_argument("--train-ratio", type=float)
    run.add_argument("--clients", type=int)
    run.add_argument("--fraction", type=float)
    run.add_argument("--dropout", type=float)
    run.add_argument("--alpha", type=float, help="Dirichlet label concentration")
    run.add_argument("--size-alpha", type=float, help="Dirichlet size concentration")
    run.add_argument("--partition", choices=["iid", "dirichlet", "skewed"])
    run.add_argument("--algorithm", type=str.lower, choices=["fedavg", "fedprox", "fedadam", "scaffold"])
    run.add_argument("--mu", type=float)
    run.add_argument("--server-lr", type=float)
    run.add_argument("--beta1", type=float)
    run.add_argument("--beta2", type=float)
    run.add_argument("--tau", type=float)
    run.add_argument("--dp-clip", type=float)
    run.add_argument("--dp-sigma", type=float)
    run.add_argument("--clusters", type=int)
    run.add_argument("--cluster-metric", choices=["l2", "cosine"])
    run.add_argument("--cluster-warmup", type=int)
    run.add_argument("--cluster-period", type=int)
    run.add_argument("--local-epochs", type=int)
    run.add_argument("--batch", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--hidden", help="comma-separated widths, e.g. 4,2")
    run.add_argument("--activation", choices=["tanh", "relu", "sigmoid", "linear"])
    run.add_argument("--features", help="comma-separated, e.g. x1,x2,x1_x2")
    run.add_argument("--l2", type=float)
    run.add_argument("--rounds", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--schedule", help="round:key=value[,...]")
    run.add_argument("--centralized", action="store_true")
    run.add_argument("--out", help="output file; the manifest goes next to it")
    run.add_argument("--format", choices=["csv", "records"])

    cmp_ = sub.add_parser("compare", help="compare finished runs by their manifests")
    cmp_.add_argument("manifests", nargs="+")

    sub.add_parser("serve", help="speak the fedsim/1 protocol on stdin/stdout")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "serve":
            from .protocol import serve

            serve()
            return EXIT_OK
        if args.command == "compare":
            manifests = [_load_json(p) for p in args.manifests]
            sys.stdout.write(format_table(compare_runs(manifests, args.manifests)))
            return EXIT_OK

        opts = vars(args)
        base = _load_json(opts["config"]) if "config" in opts else {}
        overrides = {FLAG_KEYS[k]: v for k, v in opts.items() if k in FLAG_KEYS}
        for key in ("rounds", "schedule", "format"):
            if key in opts:
                overrides[key] = opts[key]
        if opts.get("centralized"):
            overrides["federated_enabled"] = False
        scenario = resolve_scenario(base, overrides)
    except UsageError as exc:
        print(f"fedsim: E_VALIDATION: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        _, text, _ = run_scenario(scenario, opts.get("out"))
    except FedsimError as exc:
        print(f"fedsim: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    if "out" not in opts:
        sys.stdout.write(text)
    return EXIT_OK


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


if __name__ == "__main__":
    sys.exit(main())
