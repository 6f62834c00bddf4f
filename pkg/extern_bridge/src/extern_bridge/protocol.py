"""Newline-delimited JSON server half of the evaluator protocol.

One request, one reply, strictly in order; stdin/stdout carry protocol
traffic only and diagnostics go to stderr. A malformed line gets an error
with id -1 and the loop continues, so one bad message never wedges a
long-running search on the engine side.
"""

from __future__ import annotations

import json
import sys

PROTOCOL_VERSION = 1


def _write(stream, message: dict) -> None:
    stream.write(json.dumps(message) + "\n")
    stream.flush()


def _error(stream, request_id, code: str, text: str) -> None:
    _write(stream, {"type": "error", "id": request_id, "code": code, "message": text})


def _request_id(message: dict):
    rid = message.get("id", -1)
    return rid if isinstance(rid, int) else -1


def serve(adapter, stdin=None, stdout=None, stderr=None) -> int:
    """Run the request loop until shutdown or EOF; returns the exit code."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr

    for line in stdin:
        if not line.strip():
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            _error(stdout, -1, "parse", f"unparseable line: {line.strip()[:200]!r}")
            continue
        if not isinstance(message, dict):
            _error(stdout, -1, "parse", "message must be a JSON object")
            continue

        kind = message.get("type")
        rid = _request_id(message)
        if kind == "hello":
            version = message.get("protocol_version")
            if version != PROTOCOL_VERSION:
                _error(
                    stdout, rid, "version",
                    f"adapter speaks v{PROTOCOL_VERSION}, engine sent {version!r}",
                )
                return 1
            _write(
                stdout,
                {
                    "type": "hello_ack",
                    "id": rid,
                    "protocol_version": PROTOCOL_VERSION,
                    "capabilities": list(adapter.capabilities),
                },
            )
        elif kind == "eval_request":
            try:
                result = adapter.evaluate(message)
            except Exception as exc:  # one error per request, loop survives
                _error(stdout, rid, "eval", str(exc))
                continue
            _write(stdout, {"type": "eval_response", "id": rid, **result})
        elif kind == "shutdown":
            print("adapter: shutdown received", file=stderr)
            return 0
        else:
            _error(stdout, rid, "unsupported", f"unknown message type {kind!r}")

    print("adapter: stdin closed without shutdown", file=stderr)
    return 0
