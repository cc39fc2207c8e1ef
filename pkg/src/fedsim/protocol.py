"""The ``fedsim/1`` command/event protocol.

Messages are JSON objects, one per line. Every command yields exactly one
event. Commands::

    {"v": "fedsim/1", "cmd": "create", "config": {...}}
    {"v": "fedsim/1", "cmd": "step", "session": "s1", "count": 10}
    {"v": "fedsim/1", "cmd": "set_param", "session": "s1", "key": "dropout_prob", "value": 0.5}
    {"v": "fedsim/1", "cmd": "train_local", "session": "s1", "client_id": 0, "epochs": 5}
    {"v": "fedsim/1", "cmd": "snapshot", "session": "s1", "kinds": ["metrics", "boundary_client:4"]}
    {"v": "fedsim/1", "cmd": "reset", "session": "s1", "seed": 3, "config": {...}}
    {"v": "fedsim/1", "cmd": "destroy", "session": "s1"}

Events carry ``"event"`` in {created, round_reports, param_ack, local_report,
snapshot, destroyed, error}; errors carry ``code`` and ``message``.
"""

from __future__ import annotations

import json
import sys
from typing import IO

from .config import PROTOCOL_VERSION
from .errors import FedsimError, ProtocolError
from .session import Session

COMMANDS = ("create", "step", "set_param", "train_local", "snapshot", "reset", "destroy")


def _event(name: str, **body) -> dict:
    return {"v": PROTOCOL_VERSION, "event": name, **body}


def error_event(code: str, message: str, key: str | None = None) -> dict:
    ev = _event("error", code=code, message=message)
    if key is not None:
        ev["key"] = key
    return ev


class Dispatcher:
    """Routes commands to sessions; session ids are assigned sequentially."""

    def __init__(self):
        self.sessions: dict[str, Session] = {}
        self._counter = 0

    def handle(self, command: dict) -> dict:
        try:
            return self._handle(command)
        except FedsimError as exc:
            return error_event(exc.code, str(exc), exc.key)
        except (TypeError, ValueError, KeyError) as exc:
            return error_event("E_BAD_COMMAND", f"{type(exc).__name__}: {exc}")

    def _handle(self, cmd: dict) -> dict:
        if not isinstance(cmd, dict):
            raise ProtocolError("command must be an object")
        version = cmd.get("v", PROTOCOL_VERSION)
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {version!r}", "v")
        name = cmd.get("cmd")
        if name not in COMMANDS:
            raise ProtocolError(f"unknown command {name!r}", "cmd")

        if name == "create":
            self._counter += 1
            sid = f"s{self._counter}"
            session = Session.create(cmd.get("config") or {}, sid)
            self.sessions[sid] = session
            return self._created(session)

        session = self._session(cmd)
        if name == "step":
            reports = session.step(cmd.get("count", 1))
            return _event("round_reports", session=session.id,
                          reports=[r.to_record() for r in reports])
        if name == "set_param":
            if "key" not in cmd or "value" not in cmd:
                raise ProtocolError("set_param needs key and value")
            ack = session.set_param(cmd["key"], cmd["value"])
            return _event("param_ack", session=session.id, **ack)
        if name == "train_local":
            cid, epochs = cmd.get("client_id"), cmd.get("epochs", 1)
            losses = session.train_local(cid, epochs)
            return _event("local_report", session=session.id, client_id=cid,
                          epochs=epochs, losses=losses)
        if name == "snapshot":
            kinds = cmd.get("kinds") or ["metrics"]
            return _event("snapshot", session=session.id, round=session.round,
                          payloads=session.snapshot(kinds))
        if name == "reset":
            session.reset(cmd.get("seed"), cmd.get("config"))
            return self._created(session)
        del self.sessions[session.id]
        return _event("destroyed", session=session.id)

    def _session(self, cmd: dict) -> Session:
        sid = cmd.get("session")
        if sid not in self.sessions:
            raise ProtocolError(f"unknown session {sid!r}", "session")
        return self.sessions[sid]

    @staticmethod
    def _created(session: Session) -> dict:
        return _event(
            "created",
            session=session.id,
            P=session.spec.n_params,
            layout=[list(pair) for pair in session.spec.layout],
            round=session.round,
            config=session.config.to_record(),
        )


def encode(message: dict) -> str:
    return json.dumps(message, separators=(",", ":"), allow_nan=False)


def serve(stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> None:
    """Line-oriented transport: one JSON command in, one JSON event out."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    dispatcher = Dispatcher()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            command = json.loads(line)
        except json.JSONDecodeError as exc:
            event = error_event("E_BAD_COMMAND", f"malformed JSON: {exc.msg}")
        else:
            event = dispatcher.handle(command)
        stdout.write(encode(event) + "\n")
        stdout.flush()
