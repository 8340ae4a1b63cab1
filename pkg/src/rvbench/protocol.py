"""Newline-delimited JSON wire protocol for the episode engine.

One JSON object per line; every message carries {type, episode_id, seq,
payload}.  Client sequence numbers start at 0 with hello and must increase
by exactly one per message within an episode; gaps are protocol errors.
Server replies echo the request's seq.

Message types:
  client -> server: hello, submit, usage, finalize
  server -> client: task, report, usage_ack, result, error

Transports: the standard streams of a `serve` process, or a local TCP
socket (address via --addr or RVBENCH_ADDR, replay mode via --replay or
RVBENCH_REPLAY=1; replay disables wall-clock enforcement so recorded
transcripts grade identically).
"""
from __future__ import annotations

import json
import os
import socketserver
import sys
import threading

from .documents import report_to_doc, submission_from_doc, task_to_doc, SchemaError
from .episodes import EpisodeEngine, EpisodeError

ADDR_ENV_VAR = "RVBENCH_ADDR"
REPLAY_ENV_VAR = "RVBENCH_REPLAY"

CLIENT_TYPES = ("hello", "submit", "usage", "finalize")


def replay_mode_from_env() -> bool:
    return os.environ.get(REPLAY_ENV_VAR, "") not in ("", "0", "false")


class ProtocolServer:
    """Transport-independent message dispatcher around an EpisodeEngine."""

    def __init__(self, engine: EpisodeEngine):
        self.engine = engine
        self._expected_seq: dict = {}
        self._locks: dict = {}
        self._registry_lock = threading.Lock()

    # ------------------------------------------------------------- dispatch
    def handle_line(self, line: str) -> str:
        return json.dumps(self.handle_message_dict(_parse_line(line)),
                          sort_keys=True)

    def handle_message_dict(self, msg: dict) -> dict:
        episode_id = msg.get("episode_id")
        seq = msg.get("seq")
        mtype = msg.get("type")
        try:
            if not isinstance(episode_id, str) or not episode_id:
                raise EpisodeError("protocol", "missing episode_id")
            if not isinstance(seq, int) or seq < 0:
                raise EpisodeError("protocol", "missing or negative seq")
            if mtype not in CLIENT_TYPES:
                raise EpisodeError("protocol", f"unknown message type {mtype!r}")
            with self._episode_lock(episode_id):
                self._check_seq(episode_id, seq, mtype)
                payload = msg.get("payload") or {}
                reply = self._dispatch(mtype, episode_id, payload)
            return {"type": reply[0], "episode_id": episode_id, "seq": seq,
                    "payload": reply[1]}
        except EpisodeError as exc:
            return _error_reply(episode_id, seq, exc.code, str(exc))
        except SchemaError as exc:
            return _error_reply(episode_id, seq, "schema", str(exc))

    def _episode_lock(self, episode_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(episode_id, threading.Lock())

    def _check_seq(self, episode_id: str, seq: int, mtype: str):
        expected = self._expected_seq.get(episode_id, 0)
        if mtype == "hello" and expected != 0:
            raise EpisodeError("protocol", "hello after other messages")
        if seq != expected:
            raise EpisodeError("protocol",
                               f"seq gap: expected {expected}, got {seq}")
        self._expected_seq[episode_id] = expected + 1

    def _dispatch(self, mtype: str, episode_id: str, payload: dict):
        if mtype == "hello":
            task_id = payload.get("task_id")
            if not task_id:
                raise EpisodeError("protocol", "hello payload needs task_id")
            episode = self.engine.start_episode(episode_id, str(task_id))
            cfg = episode.cfg
            return "task", {
                "task": task_to_doc(episode.bundle),
                "budgets": {
                    "max_tokens": cfg.max_tokens,
                    "max_wall_seconds": cfg.max_wall_seconds,
                    "max_submissions": cfg.max_submissions,
                    "max_planets_per_submission": cfg.max_planets_per_submission,
                },
                "remaining": episode.remaining(),
            }
        episode = self.engine.episode(episode_id)
        if mtype == "submit":
            sub = submission_from_doc(dict(payload, schema_version=1)
                                      if "schema_version" not in payload
                                      else payload)
            report = episode.handle_submit(sub)
            return "report", {"report": report_to_doc(report),
                              "remaining": episode.remaining()}
        if mtype == "usage":
            tokens = payload.get("tokens")
            if not isinstance(tokens, int) or tokens < 0:
                raise EpisodeError("invalid_usage", "tokens must be a "
                                   "non-negative integer")
            status = episode.report_usage(tokens, payload.get("tool_calls"))
            return "usage_ack", {"status": status,
                                 "remaining": episode.remaining()}
        # finalize
        result = episode.finalize(payload.get("reason", "agent_done"))
        return "result", {
            "passed": result.passed,
            "status": result.status,
            "best_report": (None if result.best_report is None
                            else report_to_doc(result.best_report)),
            "reports": [report_to_doc(r) for r in result.reports],
            "n_submissions": result.n_submissions,
        }


def _parse_line(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(msg, dict):
        raise SchemaError("message must be a JSON object")
    return msg


def _error_reply(episode_id, seq, code, message) -> dict:
    return {"type": "error",
            "episode_id": episode_id if isinstance(episode_id, str) else "",
            "seq": seq if isinstance(seq, int) else -1,
            "payload": {"code": code, "message": message}}


def serve_stdio(server: ProtocolServer, stdin=None, stdout=None):
    """Blocking line loop over the standard streams."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            reply = server.handle_line(line)
        except SchemaError as exc:
            reply = json.dumps(_error_reply("", -1, "schema", str(exc)),
                               sort_keys=True)
        stdout.write(reply + "\n")
        stdout.flush()


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            try:
                reply = self.server.protocol.handle_line(line)
            except SchemaError as exc:
                reply = json.dumps(_error_reply("", -1, "schema", str(exc)),
                                   sort_keys=True)
            self.wfile.write(reply.encode() + b"\n")
            self.wfile.flush()


class TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, protocol: ProtocolServer):
        super().__init__(address, _LineHandler)
        self.protocol = protocol


def serve_tcp(server: ProtocolServer, host: str, port: int) -> TcpServer:
    """Start a threaded TCP server; caller runs serve_forever or shutdown."""
    return TcpServer((host, port), server)
