"""Length-prefixed binary frames between master and workers.

Frame: magic ``CCOI`` | version u8 | msg_type u8 | payload_len u64 LE | payload.
Tensors inside payloads use the tensor container format.
"""

from __future__ import annotations

import asyncio
import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Union

import numpy as np

from ..tensor import ConvSpec, tensor_from_bytes, tensor_to_bytes

MAGIC = b"CCOI"
VERSION = 1
HEADER = struct.Struct("<4sBBQ")
MAX_PAYLOAD = 1 << 30


class MsgType(IntEnum):
    HELLO = 1
    LOAD_LAYER = 2
    TASK_ASSIGN = 3
    RESULT_RETURN = 4
    CANCEL = 5
    HEARTBEAT = 6
    ERROR = 7


class ErrorCode(IntEnum):
    MALFORMED = 1
    UNKNOWN_TYPE = 2
    LAYER_NOT_LOADED = 3
    BAD_TENSOR = 4
    INTERNAL = 5


class ProtocolError(ValueError):
    def __init__(self, code: ErrorCode, text: str):
        super().__init__(text)
        self.code = code


@dataclass(frozen=True)
class Hello:
    worker_id: str


@dataclass(frozen=True)
class LoadLayer:
    layer_id: int
    spec: ConvSpec  # carries weights and optional bias


@dataclass(frozen=True)
class TaskAssign:
    task_id: int
    layer_id: int
    subtask_index: int
    tensor: np.ndarray


@dataclass(frozen=True)
class ResultReturn:
    task_id: int
    subtask_index: int
    tensor: np.ndarray


@dataclass(frozen=True)
class Cancel:
    task_id: int


@dataclass(frozen=True)
class Heartbeat:
    pass


@dataclass(frozen=True)
class Error:
    code: int
    text: str


Message = Union[Hello, LoadLayer, TaskAssign, ResultReturn, Cancel, Heartbeat, Error]

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_TASK = struct.Struct("<QII")
_RESULT = struct.Struct("<QI")
_ERR = struct.Struct("<H")


def _blob(data: bytes) -> bytes:
    return _U64.pack(len(data)) + data


def _take_blob(buf: memoryview, pos: int) -> tuple[bytes, int]:
    if pos + 8 > len(buf):
        raise ProtocolError(ErrorCode.MALFORMED, "truncated blob length")
    (n,) = _U64.unpack_from(buf, pos)
    pos += 8
    if pos + n > len(buf):
        raise ProtocolError(ErrorCode.MALFORMED, "blob runs past payload")
    return bytes(buf[pos:pos + n]), pos + n


def _tensor(data: bytes) -> np.ndarray:
    try:
        return tensor_from_bytes(data)
    except ValueError as exc:
        raise ProtocolError(ErrorCode.BAD_TENSOR, str(exc)) from None


def encode_payload(msg: Message) -> tuple[MsgType, bytes]:
    if isinstance(msg, Hello):
        return MsgType.HELLO, msg.worker_id.encode()
    if isinstance(msg, LoadLayer):
        s = msg.spec
        meta = json.dumps(s.geometry(), sort_keys=True).encode()
        w = s.weights.astype("<f4").reshape(1, s.out_channels, s.in_channels, -1)
        bias = b"" if s.bias is None else tensor_to_bytes(s.bias.astype(np.float32).reshape(1, 1, 1, -1))
        body = _U32.pack(msg.layer_id) + _blob(meta) + _blob(tensor_to_bytes(w)) + _blob(bias)
        return MsgType.LOAD_LAYER, body
    if isinstance(msg, TaskAssign):
        return MsgType.TASK_ASSIGN, _TASK.pack(msg.task_id, msg.layer_id, msg.subtask_index) + \
            tensor_to_bytes(msg.tensor)
    if isinstance(msg, ResultReturn):
        return MsgType.RESULT_RETURN, _RESULT.pack(msg.task_id, msg.subtask_index) + \
            tensor_to_bytes(msg.tensor)
    if isinstance(msg, Cancel):
        return MsgType.CANCEL, _U64.pack(msg.task_id)
    if isinstance(msg, Heartbeat):
        return MsgType.HEARTBEAT, b""
    if isinstance(msg, Error):
        return MsgType.ERROR, _ERR.pack(int(msg.code)) + msg.text.encode()
    raise TypeError(f"not a protocol message: {msg!r}")


def decode_payload(kind: int, payload: bytes) -> Message:
    """Parse a payload; raises ProtocolError for anything malformed."""
    buf = memoryview(payload)
    try:
        kind = MsgType(kind)
    except ValueError:
        raise ProtocolError(ErrorCode.UNKNOWN_TYPE, f"unknown message type {kind}") from None
    try:
        if kind == MsgType.HELLO:
            return Hello(bytes(buf).decode())
        if kind == MsgType.LOAD_LAYER:
            if len(buf) < 4:
                raise ProtocolError(ErrorCode.MALFORMED, "short LoadLayer")
            (layer_id,) = _U32.unpack_from(buf, 0)
            meta, pos = _take_blob(buf, 4)
            w, pos = _take_blob(buf, pos)
            b, pos = _take_blob(buf, pos)
            if pos != len(buf):
                raise ProtocolError(ErrorCode.MALFORMED, "trailing bytes in LoadLayer")
            g = json.loads(meta.decode())
            if not isinstance(g, dict):
                raise ProtocolError(ErrorCode.MALFORMED, "layer geometry is not an object")
            spec = ConvSpec(int(g["in_channels"]), int(g["out_channels"]), int(g["kernel_size"]),
                            int(g["stride"]), int(g["padding"]))
            weights = _tensor(w).reshape(spec.out_channels, spec.in_channels,
                                         spec.kernel_size, spec.kernel_size)
            bias = _tensor(b).reshape(-1) if b else None
            return LoadLayer(layer_id, spec.with_weights(weights, bias))
        if kind == MsgType.TASK_ASSIGN:
            if len(buf) < _TASK.size:
                raise ProtocolError(ErrorCode.MALFORMED, "short TaskAssign")
            task_id, layer_id, idx = _TASK.unpack_from(buf, 0)
            return TaskAssign(task_id, layer_id, idx, _tensor(bytes(buf[_TASK.size:])))
        if kind == MsgType.RESULT_RETURN:
            if len(buf) < _RESULT.size:
                raise ProtocolError(ErrorCode.MALFORMED, "short ResultReturn")
            task_id, idx = _RESULT.unpack_from(buf, 0)
            return ResultReturn(task_id, idx, _tensor(bytes(buf[_RESULT.size:])))
        if kind == MsgType.CANCEL:
            if len(buf) != 8:
                raise ProtocolError(ErrorCode.MALFORMED, "Cancel payload must be 8 bytes")
            return Cancel(_U64.unpack_from(buf, 0)[0])
        if kind == MsgType.HEARTBEAT:
            if len(buf):
                raise ProtocolError(ErrorCode.MALFORMED, "Heartbeat carries no payload")
            return Heartbeat()
        if len(buf) < 2:
            raise ProtocolError(ErrorCode.MALFORMED, "short Error")
        return Error(_ERR.unpack_from(buf, 0)[0], bytes(buf[2:]).decode(errors="replace"))
    except ProtocolError:
        raise
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise ProtocolError(ErrorCode.MALFORMED, f"bad {kind.name} payload: {exc}") from None


def encode_frame(msg: Message) -> bytes:
    kind, payload = encode_payload(msg)
    return HEADER.pack(MAGIC, VERSION, int(kind), len(payload)) + payload


def parse_header(head: bytes) -> tuple[int, int]:
    magic, version, kind, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(ErrorCode.MALFORMED, f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(ErrorCode.MALFORMED, f"unsupported version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(ErrorCode.MALFORMED, f"payload of {length} bytes exceeds limit")
    return kind, length


def decode_frame(data: bytes) -> tuple[Optional[Message], int]:
    """Decode one frame from the front of ``data``.

    Returns ``(None, 0)`` when more bytes are needed, otherwise the message
    and the number of bytes consumed.
    """
    if len(data) < HEADER.size:
        return None, 0
    kind, length = parse_header(bytes(data[:HEADER.size]))
    end = HEADER.size + length
    if len(data) < end:
        return None, 0
    return decode_payload(kind, bytes(data[HEADER.size:end])), end


async def read_message(reader: asyncio.StreamReader) -> Message:
    """Read one frame; raises IncompleteReadError on EOF."""
    kind, length = parse_header(await reader.readexactly(HEADER.size))
    payload = await reader.readexactly(length) if length else b""
    return decode_payload(kind, payload)


async def write_message(writer: asyncio.StreamWriter, msg: Message) -> None:
    writer.write(encode_frame(msg))
    await writer.drain()


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)
