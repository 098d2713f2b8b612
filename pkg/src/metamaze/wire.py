"""Length-prefixed binary protocol for external policies and predictors.

Frame layout (normative, frozen): 4-byte magic "GPW1", 1-byte type,
little-endian u32 payload length, payload.  An ACT frame carrying one
action byte is therefore exactly 10 bytes.  A one-byte version exchange
follows the magic during the handshake.  The per-episode state machine
is RESET (OBS (PREDICT_REQ PREDICT_RESP)* ACT)* END.
"""

import json
import socket
import struct
import subprocess
import sys
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Optional

import numpy as np

MAGIC = b"GPW1"
VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
_FRAME_HEAD = struct.Struct("<4sBI")
_OBS_HEAD = struct.Struct("<IfBB")

OBS_KIND_FP = 0
OBS_KIND_TOPDOWN = 1


class MsgType(IntEnum):
    RESET = 1
    OBS = 2
    ACT = 3
    PREDICT_REQ = 4
    PREDICT_RESP = 5
    END = 6
    ERROR = 7


class WireError(RuntimeError):
    pass


class ShortReadError(WireError):
    pass


class LengthOverflowError(WireError):
    pass


class UnknownTypeError(WireError):
    pass


class BadMagicError(WireError):
    pass


class OutOfOrderError(WireError):
    pass


@dataclass(frozen=True)
class Message:
    type: MsgType
    payload: bytes = b""


def encode(msg: Message) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise LengthOverflowError(f"payload of {len(msg.payload)} bytes")
    return _FRAME_HEAD.pack(MAGIC, int(msg.type), len(msg.payload)) + msg.payload


def decode(data: bytes) -> Message:
    msg, rest = _decode_prefix(data)
    if rest:
        raise WireError(f"{len(rest)} trailing bytes after message")
    return msg


def _decode_prefix(data: bytes) -> tuple[Message, bytes]:
    if len(data) < _FRAME_HEAD.size:
        raise ShortReadError("incomplete frame header")
    magic, mtype, length = _FRAME_HEAD.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if length > MAX_PAYLOAD:
        raise LengthOverflowError(f"declared length {length}")
    end = _FRAME_HEAD.size + length
    if len(data) < end:
        raise ShortReadError("declared length exceeds buffer")
    try:
        t = MsgType(mtype)
    except ValueError:
        raise UnknownTypeError(f"unknown message type {mtype}") from None
    return Message(t, bytes(data[_FRAME_HEAD.size:end])), data[end:]


class Transport:
    """Blocking message transport over a (reader, writer) byte-stream pair."""

    def __init__(self, reader: BinaryIO, writer: BinaryIO):
        self._r = reader
        self._w = writer

    @classmethod
    def over_socket(cls, sock: socket.socket) -> "Transport":
        f = sock.makefile("rwb")
        return cls(f, f)

    def _read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            try:
                chunk = self._r.read(n - len(buf))
            except (BrokenPipeError, ConnectionResetError) as e:
                raise ShortReadError(f"stream failed mid-read: {e}") from None
            if not chunk:
                raise ShortReadError(f"stream closed after {len(buf)}/{n} bytes")
            buf += chunk
        return buf

    def _write_all(self, data: bytes) -> None:
        try:
            self._w.write(data)
            self._w.flush()
        except (BrokenPipeError, ConnectionResetError) as e:
            raise ShortReadError(f"peer closed the stream: {e}") from None

    def send(self, msg: Message) -> None:
        self._write_all(encode(msg))

    def recv(self) -> Message:
        head = self._read_exact(_FRAME_HEAD.size)
        magic, mtype, length = _FRAME_HEAD.unpack(head)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        if length > MAX_PAYLOAD:
            raise LengthOverflowError(f"declared length {length}")
        payload = self._read_exact(length)
        try:
            t = MsgType(mtype)
        except ValueError:
            raise UnknownTypeError(f"unknown message type {mtype}") from None
        return Message(t, payload)

    def handshake_server(self) -> None:
        self._write_all(MAGIC + bytes([VERSION]))
        reply = self._read_exact(5)
        if reply[:4] != MAGIC:
            raise BadMagicError("client handshake magic mismatch")
        if reply[4] != VERSION:
            raise WireError(f"client version {reply[4]} != {VERSION}")

    def handshake_client(self) -> None:
        greeting = self._read_exact(5)
        if greeting[:4] != MAGIC:
            raise BadMagicError("server handshake magic mismatch")
        if greeting[4] != VERSION:
            raise WireError(f"server version {greeting[4]} != {VERSION}")
        self._write_all(MAGIC + bytes([VERSION]))


def pack_obs(step: int, reward: float, command_color: int, obs_kind: int,
             frame: np.ndarray) -> bytes:
    return _OBS_HEAD.pack(step, reward, command_color, obs_kind) + frame.tobytes()


def unpack_obs(payload: bytes) -> tuple[int, float, int, int, bytes]:
    step, reward, command, kind = _OBS_HEAD.unpack_from(payload)
    return step, reward, command, kind, payload[_OBS_HEAD.size:]


def serve_episode(task, transport: Transport, horizon: int,
                  handshake: bool = True) -> float:
    """Drive one episode over `transport` against an external policy.

    Sends RESET with episode metadata, then alternates OBS/ACT for
    `horizon` steps, and finishes with END carrying the accumulated
    reward.  Any protocol violation produces an ERROR frame and raises.
    """
    from .maze.core import initial_state, step as env_step, current_command
    from .maze.render import render_fp

    if handshake:
        transport.handshake_server()
    reset_meta = {"size": task.config.size, "horizon": horizon,
                  "obs_kind": OBS_KIND_FP}
    transport.send(Message(MsgType.RESET, json.dumps(reset_meta).encode()))
    state = initial_state(task)
    reward = 0.0
    try:
        for t in range(horizon):
            frame = render_fp(task, state)
            transport.send(Message(MsgType.OBS, pack_obs(
                t, reward, current_command(task, state), OBS_KIND_FP, frame)))
            reply = transport.recv()
            if reply.type != MsgType.ACT:
                raise OutOfOrderError(
                    f"expected ACT at step {t}, got {reply.type.name}")
            if len(reply.payload) != 1:
                raise WireError("ACT payload must be one byte")
            state, reward, _ = env_step(task, state, reply.payload[0])
    except WireError as e:
        try:
            transport.send(Message(MsgType.ERROR, json.dumps(
                {"code": type(e).__name__, "detail": str(e)}).encode()))
        except Exception:
            pass
        raise
    total = float(state.accumulated_reward)
    transport.send(Message(MsgType.END, json.dumps(
        {"steps": horizon, "accumulated_reward": total}).encode()))
    return total


def run_policy_client(act_fn, transport: Transport,
                      handshake: bool = True) -> dict:
    """Client-side loop: call `act_fn(step, reward, command, frame_bytes)`
    for every OBS and reply with its action until END.  Returns the END
    metadata."""
    if handshake:
        transport.handshake_client()
    msg = transport.recv()
    if msg.type != MsgType.RESET:
        raise OutOfOrderError(f"expected RESET, got {msg.type.name}")
    while True:
        msg = transport.recv()
        if msg.type == MsgType.END:
            return json.loads(msg.payload.decode())
        if msg.type == MsgType.ERROR:
            raise WireError(msg.payload.decode())
        if msg.type != MsgType.OBS:
            raise OutOfOrderError(f"unexpected {msg.type.name}")
        step, reward, command, kind, frame = unpack_obs(msg.payload)
        action = int(act_fn(step, reward, command, frame))
        transport.send(Message(MsgType.ACT, bytes([action])))


_PRED_HEAD = struct.Struct("<II")  # (history action count, rollout depth k)


def pack_predict_req(actions: np.ndarray, future_actions: np.ndarray) -> bytes:
    return (_PRED_HEAD.pack(len(actions), len(future_actions))
            + bytes(np.asarray(actions, dtype=np.uint8))
            + bytes(np.asarray(future_actions, dtype=np.uint8)))


def unpack_predict_req(payload: bytes) -> tuple[np.ndarray, np.ndarray]:
    t, k = _PRED_HEAD.unpack_from(payload)
    body = payload[_PRED_HEAD.size:]
    if len(body) != t + k:
        raise WireError(f"PREDICT_REQ body has {len(body)} bytes, expected {t + k}")
    return (np.frombuffer(body[:t], dtype=np.uint8),
            np.frombuffer(body[t:], dtype=np.uint8))


class WirePredictor:
    """World-model predictor behind the wire protocol.

    Satisfies the in-process PredictorHandle interface.  Per episode it
    sends RESET (task manifest JSON), streams every new frame as OBS,
    and exchanges PREDICT_REQ (action history + future actions) for
    PREDICT_RESP (k concatenated raw frames).
    """

    def __init__(self, argv: Optional[list[str]] = None,
                 address: Optional[tuple[str, int]] = None,
                 timeout: float = 30.0):
        if (argv is None) == (address is None):
            raise ValueError("exactly one of argv or address is required")
        self.argv = argv
        self.address = address
        self.timeout = timeout
        self._proc = None
        self._sock = None
        self._transport = None

    def begin_episode(self, manifest: dict, seed: int) -> None:
        self.close()
        if self.argv is not None:
            self._proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE)
            self._transport = Transport(self._proc.stdout, self._proc.stdin)
        else:
            self._sock = socket.create_connection(self.address,
                                                  timeout=self.timeout)
            self._transport = Transport.over_socket(self._sock)
        self._transport.handshake_server()
        self._transport.send(Message(MsgType.RESET, json.dumps(
            {"task": manifest, "seed": int(seed)}).encode()))
        self._frames_sent = 0

    def predict(self, frames: np.ndarray, actions: np.ndarray,
                future_actions: np.ndarray) -> np.ndarray:
        for i in range(self._frames_sent, len(frames)):
            self._transport.send(Message(MsgType.OBS, pack_obs(
                i, 0.0, 0, OBS_KIND_FP, frames[i])))
        self._frames_sent = len(frames)
        self._transport.send(Message(MsgType.PREDICT_REQ,
                                     pack_predict_req(actions, future_actions)))
        reply = self._transport.recv()
        if reply.type != MsgType.PREDICT_RESP:
            raise OutOfOrderError(f"expected PREDICT_RESP, got {reply.type.name}")
        k = len(future_actions)
        expected = k * 128 * 128 * 3
        if len(reply.payload) != expected:
            raise WireError(f"PREDICT_RESP has {len(reply.payload)} bytes, "
                            f"expected {expected}")
        return np.frombuffer(reply.payload, dtype=np.uint8) \
                 .reshape(k, 128, 128, 3)

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
            self._proc = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        self._transport = None


class WirePolicy:
    """Interactive-eval policy backed by an external process.

    `exec` mode spawns argv once per episode and speaks over its stdio;
    `tcp` mode opens one connection per episode to a listening policy
    server.  The evaluator holds the server role of the protocol.
    Satisfies the in-process PolicyHandle interface.
    """

    needs_frames = True

    def __init__(self, argv: Optional[list[str]] = None,
                 address: Optional[tuple[str, int]] = None,
                 timeout: float = 30.0):
        if (argv is None) == (address is None):
            raise ValueError("exactly one of argv or address is required")
        self.argv = argv
        self.address = address
        self.timeout = timeout
        self._proc = None
        self._sock = None
        self._transport = None
        self.last_end_meta: Optional[dict] = None

    def begin_episode(self, task, seed) -> None:
        self._close()
        if self.argv is not None:
            self._proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE)
            self._transport = Transport(self._proc.stdout, self._proc.stdin)
        else:
            self._sock = socket.create_connection(self.address,
                                                  timeout=self.timeout)
            self._transport = Transport.over_socket(self._sock)
        self._transport.handshake_server()
        meta = {"size": task.config.size, "obs_kind": OBS_KIND_FP,
                "seed": int(seed)}
        self._transport.send(Message(MsgType.RESET, json.dumps(meta).encode()))
        self._step = 0
        self._last_acc = 0.0

    def act(self, task, state, frame) -> int:
        from .maze.core import current_command
        reward = state.accumulated_reward - self._last_acc
        self._last_acc = state.accumulated_reward
        self._transport.send(Message(MsgType.OBS, pack_obs(
            self._step, reward, current_command(task, state), OBS_KIND_FP,
            frame)))
        reply = self._transport.recv()
        if reply.type != MsgType.ACT:
            raise OutOfOrderError(
                f"expected ACT at step {self._step}, got {reply.type.name}")
        if len(reply.payload) != 1:
            raise WireError("ACT payload must be one byte")
        self._step += 1
        return reply.payload[0]

    def finish_episode(self, state) -> dict:
        self._transport.send(Message(MsgType.END, json.dumps(
            {"steps": self._step,
             "accumulated_reward": float(state.accumulated_reward)}).encode()))
        self.last_end_meta = {"steps": self._step,
                              "accumulated_reward": float(state.accumulated_reward)}
        self._close()
        return self.last_end_meta

    def _close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
            self._proc = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        self._transport = None
