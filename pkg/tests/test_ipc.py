import socket
import threading

import pytest

from rlfec.agent import RLPolicy
from rlfec.campaign import make_agent
from rlfec.config import ScenarioConfig
from rlfec.ipc import (AgentServer, BridgeError, EchoAgent, IpcPolicy, RLAgentHandler, check_action,
                       connect, decode, parse_address)
from rlfec.policies import FixedPolicy
from rlfec.transfer import run_transfer

CFG = ScenarioConfig().replace(**{"scenario.file_size": 6_000_000})


@pytest.fixture
def sock_path(tmp_path):
    return f"unix:{tmp_path}/agent.sock"


def test_address_parsing():
    assert parse_address("unix:/tmp/a.sock") == (socket.AF_UNIX, "/tmp/a.sock")
    assert parse_address("tcp:127.0.0.1:9000") == (socket.AF_INET, ("127.0.0.1", 9000))
    for bad in ("udp:x", "tcp:nohost", "unix:"):
        with pytest.raises(ValueError):
            parse_address(bad)


def test_message_validation():
    with pytest.raises(BridgeError):
        decode(b"not json\n")
    with pytest.raises(BridgeError):
        decode(b"[1,2]\n")
    with pytest.raises(BridgeError):
        check_action({"type": "action", "action_id": -1, "rc": 0.7})
    with pytest.raises(BridgeError):
        check_action({"type": "action", "action_id": 0, "rc": "fast"})
    assert check_action({"type": "action", "action_id": 3, "rc": 0.74}).rc == 0.74


def test_echo_agent_behaves_like_fixed_policy(sock_path):
    server = AgentServer(sock_path, EchoAgent(0.78), timeout_s=5)
    t = server.serve_in_thread()
    pol = IpcPolicy(connect(server.bound_address), name="fixed")
    try:
        via_ipc = run_transfer(CFG, pol, 21).result
    finally:
        pol.close()
        t.join(5)
        server.close()
    direct = run_transfer(CFG, FixedPolicy(0.78), 21).result
    assert (via_ipc.delay_s, via_ipc.decoding_failures) == (direct.delay_s, direct.decoding_failures)
    assert not server.errors


def test_bridge_is_transparent_for_the_rl_agent(sock_path):
    local = make_agent(CFG, 7, training=True)
    remote = make_agent(CFG, 7, training=True)
    server = AgentServer(sock_path, RLAgentHandler(remote), timeout_s=5)
    t = server.serve_in_thread()
    pol = IpcPolicy(connect(server.bound_address), training=True)
    try:
        runs_ipc = [run_transfer(CFG, pol, s, k) for k, s in enumerate((31, 32))]
    finally:
        pol.close()
        t.join(5)
        server.close()
    runs_local = [run_transfer(CFG, RLPolicy(local), s, k) for k, s in enumerate((31, 32))]
    for a, b in zip(runs_local, runs_ipc):
        assert a.decisions == b.decisions and a.result == b.result
    assert local.epoch == remote.epoch > 0


def test_silent_agent_times_out(sock_path):
    family, path = parse_address(sock_path)
    lsock = socket.socket(family, socket.SOCK_STREAM)
    lsock.bind(path)
    lsock.listen(1)
    held = []
    threading.Thread(target=lambda: held.append(lsock.accept()), daemon=True).start()
    pol = IpcPolicy(connect(sock_path, timeout_s=0.3))
    with pytest.raises(BridgeError, match="timed out"):
        run_transfer(CFG, pol, 1)
    lsock.close()


def test_malformed_reply_aborts_session(sock_path):
    family, path = parse_address(sock_path)
    lsock = socket.socket(family, socket.SOCK_STREAM)
    lsock.bind(path)
    lsock.listen(1)

    def bad_agent():
        conn, _ = lsock.accept()
        conn.makefile("rb").readline()
        conn.sendall(b'{"type": "action", "rc": 0.7}\n')

    threading.Thread(target=bad_agent, daemon=True).start()
    pol = IpcPolicy(connect(sock_path, timeout_s=2))
    with pytest.raises(BridgeError, match="action_id"):
        pol.start(0)
    lsock.close()


def test_server_rejects_malformed_feedback(sock_path):
    server = AgentServer(sock_path, EchoAgent(0.7), timeout_s=2)
    t = server.serve_in_thread()
    ch = connect(server.bound_address, 2)
    ch.send({"type": "start", "round": 0, "time_ms": 0})
    assert ch.recv()["action_id"] == 0
    ch.send({"type": "feedback", "action_id": 0})
    t.join(5)
    ch.close()
    server.close()
    assert server.errors and "feedback field" in server.errors[0]
