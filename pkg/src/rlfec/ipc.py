"""Newline-delimited JSON bridge between the simulator and an external rate agent.

Addresses are `unix:/path/to.sock` or `tcp:host:port`. One connection
carries a whole campaign; each round opens with a `start` message.

Simulator -> agent:
    {"type": "start", "round": k, "time_ms": t, "training": bool}
    {"type": "feedback", "action_id", "matrix_id", "I", "K", "N", "tx_time_ms",
     "total", "received", "status", "time_ms"}
    {"type": "bye"}
Agent -> simulator, exactly one per start or feedback:
    {"type": "action", "action_id": int, "rc": float, "p_e_est": float (optional)}
"""

from __future__ import annotations

import json
import logging
import os
import socket
import threading

from .policies import STATUSES, RateDecision, RatePolicy

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 30.0


class BridgeError(RuntimeError):
    """Malformed message, timeout or closed connection; the session is aborted."""


def parse_address(address: str) -> tuple[int, object]:
    kind, _, rest = address.partition(":")
    if kind == "unix" and rest:
        return socket.AF_UNIX, rest
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        if host and port.isdigit():
            return socket.AF_INET, (host, int(port))
    raise ValueError(f"bad IPC address {address!r}; use unix:/path or tcp:host:port")


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BridgeError(f"malformed message: {exc}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise BridgeError(f"malformed message: {line[:80]!r}")
    return msg


def check_action(msg: dict) -> RateDecision:
    if msg.get("type") != "action":
        raise BridgeError(f"expected an action, got {msg.get('type')!r}")
    aid, rc = msg.get("action_id"), msg.get("rc")
    if isinstance(aid, bool) or not isinstance(aid, int) or aid < 0:
        raise BridgeError(f"bad action_id {aid!r}")
    if isinstance(rc, bool) or not isinstance(rc, (int, float)) or not 0.0 < rc <= 1.0:
        raise BridgeError(f"bad rc {rc!r}")
    return RateDecision(float(rc), aid, 0)


def check_feedback(msg: dict) -> dict:
    for key in ("action_id", "matrix_id", "I", "K", "N", "tx_time_ms", "total", "received", "time_ms"):
        v = msg.get(key)
        if isinstance(v, bool) or not isinstance(v, int):
            raise BridgeError(f"feedback field {key!r} missing or not an integer")
    if msg.get("status") not in STATUSES:
        raise BridgeError(f"bad status {msg.get('status')!r}")
    if not 0 <= msg["received"] <= msg["total"]:
        raise BridgeError("received outside [0, total]")
    return msg


class LineChannel:
    def __init__(self, sock: socket.socket, timeout_s: float | None):
        self.sock = sock
        self.sock.settimeout(timeout_s)
        self.rfile = sock.makefile("rb")

    def send(self, msg: dict) -> None:
        try:
            self.sock.sendall(encode(msg))
        except OSError as exc:
            raise BridgeError(f"send failed: {exc}") from None

    def recv(self) -> dict:
        try:
            line = self.rfile.readline()
        except socket.timeout:
            raise BridgeError("timed out waiting for the agent") from None
        except OSError as exc:
            raise BridgeError(f"receive failed: {exc}") from None
        if not line:
            raise BridgeError("connection closed by peer")
        return decode(line)

    def close(self) -> None:
        try:
            self.rfile.close()
        finally:
            self.sock.close()


def connect(address: str, timeout_s: float = DEFAULT_TIMEOUT_S) -> LineChannel:
    family, addr = parse_address(address)
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.settimeout(timeout_s)
    try:
        sock.connect(addr)
    except OSError as exc:
        sock.close()
        raise BridgeError(f"cannot reach agent at {address}: {exc}") from None
    return LineChannel(sock, timeout_s)


class IpcPolicy(RatePolicy):
    """Rate policy whose decisions come from an external agent.

    Calls block until the reply arrives, which holds the FEC seal path at
    the start of a round until the first action is known.
    """

    def __init__(self, channel: LineChannel, name: str = "rl", training: bool = False):
        self.ch = channel
        self.name = name
        self.training = training
        self.round = 0
        self.p_e_est = float("nan")

    def _reply(self, now: int) -> RateDecision:
        msg = self.ch.recv()
        d = check_action(msg)
        pe = msg.get("p_e_est")
        self.p_e_est = float(pe) if isinstance(pe, (int, float)) else float("nan")
        return RateDecision(d.rc, d.action_id, now)

    def start(self, now: int) -> RateDecision:
        self.ch.send({"type": "start", "round": self.round, "time_ms": now, "training": self.training})
        self.round += 1
        return self._reply(now)

    def on_feedback(self, record, now: int) -> RateDecision:
        self.ch.send({"type": "feedback", "action_id": record.action_id, "matrix_id": record.matrix_id,
                      "I": record.I, "K": record.K, "N": record.N, "tx_time_ms": record.tx_time,
                      "total": record.total, "received": record.received, "status": record.status,
                      "time_ms": now})
        return self._reply(now)

    def close(self) -> None:
        try:
            self.ch.send({"type": "bye"})
        except BridgeError:
            pass
        self.ch.close()


class AgentHandler:
    """Answers start/feedback messages; subclasses decide the action."""

    def on_start(self, msg: dict) -> dict:
        raise NotImplementedError

    def on_feedback(self, msg: dict) -> dict:
        raise NotImplementedError

    def serve(self, ch: LineChannel) -> None:
        while True:
            msg = ch.recv()
            kind = msg["type"]
            if kind == "bye":
                return
            if kind == "start":
                ch.send(self.on_start(msg))
            elif kind == "feedback":
                ch.send(self.on_feedback(check_feedback(msg)))
            else:
                raise BridgeError(f"unexpected message type {kind!r}")


class EchoAgent(AgentHandler):
    """Replies with the same rate to everything."""

    def __init__(self, rc: float):
        self.rc = rc
        self.next_id = 0

    def _act(self) -> dict:
        msg = {"type": "action", "action_id": self.next_id, "rc": self.rc}
        self.next_id += 1
        return msg

    def on_start(self, msg: dict) -> dict:
        self.next_id = 0
        return self._act()

    def on_feedback(self, msg: dict) -> dict:
        return self._act()


class RLAgentHandler(AgentHandler):
    def __init__(self, agent):
        self.agent = agent

    @staticmethod
    def _msg(d: RateDecision, pe: float) -> dict:
        return {"type": "action", "action_id": d.action_id, "rc": d.rc, "p_e_est": pe}

    def on_start(self, msg: dict) -> dict:
        self.agent.training = bool(msg.get("training", False))
        d = self.agent.begin_round(int(msg.get("time_ms", 0)))
        return self._msg(d, self.agent.state.s1)

    def on_feedback(self, msg: dict) -> dict:
        d = self.agent.on_feedback(msg["action_id"], msg["received"], msg["total"], msg["status"],
                                   msg["time_ms"])
        return self._msg(d, self.agent.state.s1)


class AgentServer:
    """Listens on an address and serves one connection at a time, sequentially."""

    def __init__(self, address: str, handler: AgentHandler, timeout_s: float | None = None):
        self.address = address
        self.handler = handler
        self.timeout_s = timeout_s
        family, addr = parse_address(address)
        if family == socket.AF_UNIX and os.path.exists(addr):
            os.unlink(addr)
        self.sock = socket.socket(family, socket.SOCK_STREAM)
        if family == socket.AF_INET:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(addr)
        self.sock.listen(1)
        self._family, self._addr = family, addr
        self.errors: list[str] = []

    @property
    def bound_address(self) -> str:
        if self._family == socket.AF_UNIX:
            return f"unix:{self._addr}"
        host, port = self.sock.getsockname()[:2]
        return f"tcp:{host}:{port}"

    def serve_one(self) -> None:
        conn, _ = self.sock.accept()
        ch = LineChannel(conn, self.timeout_s)
        try:
            self.handler.serve(ch)
        except BridgeError as exc:
            log.warning("agent session aborted: %s", exc)
            self.errors.append(str(exc))
        finally:
            ch.close()

    def serve_forever(self) -> None:
        while True:
            self.serve_one()

    def serve_in_thread(self, sessions: int = 1) -> threading.Thread:
        def run():
            for _ in range(sessions):
                self.serve_one()
        t = threading.Thread(target=run, daemon=True)
        t.start()
        return t

    def close(self) -> None:
        self.sock.close()
        if self._family == socket.AF_UNIX and os.path.exists(self._addr):
            os.unlink(self._addr)
