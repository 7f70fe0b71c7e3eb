"""Container <-> centralizer wire protocol.

Frames on the byte stream are length-prefixed:

    frame  := length:u32le  type:u8  body
    HELLO        body = container_id:u32
    TRAJ_BATCH   body = container_id:u32 batch_seq:u64 count:u32 trajectory*
    WEIGHTS      body = version:u64 global_env_steps:u64 blob
                 (blob = checkpoint-encoded arrays; keys are
                  "shared/<name>", "central/<name>", "head/<cid>/<name>")
    HEAD_UPLOAD  body = container_id:u32 version:u64 blob
    STATS        body = UTF-8 JSON object
    ACK          body = container_id:u32 batch_seq:u64

ACK confirms durable receipt of a TRAJ_BATCH; after a reconnect the
container resends every unacknowledged batch and the centralizer drops
duplicates by (container_id, batch_seq). Version numbers strictly increase.

Trajectory encoding: six typed arrays (obs f8, state f8, avail u1,
actions i8, rewards f8, terminated u1) each as ndim:u8 dims:u64*
payload, followed by container_id:u32, priority:f8 and the uid triple
(u32, u32, u64).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ProtocolError
from .replay import Trajectory

HELLO = 1
TRAJ_BATCH = 2
WEIGHTS = 3
HEAD_UPLOAD = 4
STATS = 5
ACK = 6

_DTYPES = {0: "<f8", 1: "<i8", 2: "|u1"}
_DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<i8"): 1, np.dtype("|u1"): 2}


def _encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ProtocolError(f"unsupported dtype {arr.dtype}")
    head = struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def _decode_array(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    code, ndim = struct.unpack_from("<BB", buf, offset)
    offset += 2
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    dtype = np.dtype(_DTYPES[code])
    n = int(np.prod(dims)) if ndim else 1
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=offset).reshape(dims).copy()
    offset += dtype.itemsize * n
    return arr, offset


def encode_trajectory(tr: Trajectory) -> bytes:
    parts = [
        _encode_array(np.asarray(tr.obs, dtype="<f8")),
        _encode_array(np.asarray(tr.state, dtype="<f8")),
        _encode_array(np.asarray(tr.avail, dtype="|u1")),
        _encode_array(np.asarray(tr.actions, dtype="<i8")),
        _encode_array(np.asarray(tr.rewards, dtype="<f8")),
        _encode_array(np.asarray(tr.terminated, dtype="|u1")),
        struct.pack("<Id", tr.container_id, tr.priority),
        struct.pack("<IIQ", *tr.uid),
    ]
    return b"".join(parts)


def decode_trajectory(buf: bytes, offset: int) -> tuple[Trajectory, int]:
    obs, offset = _decode_array(buf, offset)
    state, offset = _decode_array(buf, offset)
    avail, offset = _decode_array(buf, offset)
    actions, offset = _decode_array(buf, offset)
    rewards, offset = _decode_array(buf, offset)
    terminated, offset = _decode_array(buf, offset)
    container_id, priority = struct.unpack_from("<Id", buf, offset)
    offset += struct.calcsize("<Id")
    uid = struct.unpack_from("<IIQ", buf, offset)
    offset += struct.calcsize("<IIQ")
    return (
        Trajectory(
            obs=obs,
            state=state,
            avail=avail.astype(np.float64),
            actions=actions,
            rewards=rewards,
            terminated=terminated.astype(np.float64),
            container_id=int(container_id),
            priority=float(priority),
            uid=(int(uid[0]), int(uid[1]), int(uid[2])),
        ),
        offset,
    )


# -- message bodies ---------------------------------------------------------


def encode_hello(container_id: int) -> bytes:
    return struct.pack("<BI", HELLO, container_id)


def encode_traj_batch(container_id: int, batch_seq: int, trajs: list[Trajectory]) -> bytes:
    body = [struct.pack("<BIQI", TRAJ_BATCH, container_id, batch_seq, len(trajs))]
    body.extend(encode_trajectory(t) for t in trajs)
    return b"".join(body)


def encode_weights(version: int, global_env_steps: int, arrays: dict[str, np.ndarray]) -> bytes:
    from .checkpoint import encode_arrays

    return struct.pack("<BQQ", WEIGHTS, version, global_env_steps) + encode_arrays(arrays)


def encode_head_upload(container_id: int, version: int, arrays: dict[str, np.ndarray]) -> bytes:
    from .checkpoint import encode_arrays

    return struct.pack("<BIQ", HEAD_UPLOAD, container_id, version) + encode_arrays(arrays)


def encode_stats(payload: dict) -> bytes:
    return struct.pack("<B", STATS) + json.dumps(payload).encode("utf-8")


def encode_ack(container_id: int, batch_seq: int) -> bytes:
    return struct.pack("<BIQ", ACK, container_id, batch_seq)


def decode_message(payload: bytes) -> dict:
    """Parse one frame body (without the length prefix) into a dict with a
    ``type`` key."""
    from .checkpoint import decode_arrays

    if not payload:
        raise ProtocolError("empty frame")
    mtype = payload[0]
    try:
        if mtype == HELLO:
            (cid,) = struct.unpack_from("<I", payload, 1)
            return {"type": HELLO, "container_id": cid}
        if mtype == TRAJ_BATCH:
            cid, seq, count = struct.unpack_from("<IQI", payload, 1)
            offset = 1 + struct.calcsize("<IQI")
            trajs = []
            for _ in range(count):
                tr, offset = decode_trajectory(payload, offset)
                trajs.append(tr)
            if offset != len(payload):
                raise ProtocolError("trailing bytes in TRAJ_BATCH")
            return {"type": TRAJ_BATCH, "container_id": cid, "batch_seq": seq, "trajectories": trajs}
        if mtype == WEIGHTS:
            version, steps = struct.unpack_from("<QQ", payload, 1)
            arrays = decode_arrays(payload[1 + 16 :])
            return {"type": WEIGHTS, "version": version, "global_env_steps": steps, "arrays": arrays}
        if mtype == HEAD_UPLOAD:
            cid, version = struct.unpack_from("<IQ", payload, 1)
            arrays = decode_arrays(payload[1 + struct.calcsize("<IQ") :])
            return {"type": HEAD_UPLOAD, "container_id": cid, "version": version, "arrays": arrays}
        if mtype == STATS:
            return {"type": STATS, "payload": json.loads(payload[1:].decode("utf-8"))}
        if mtype == ACK:
            cid, seq = struct.unpack_from("<IQ", payload, 1)
            return {"type": ACK, "container_id": cid, "batch_seq": seq}
    except ProtocolError:
        raise
    except Exception as exc:
        raise ProtocolError(f"malformed message of type {mtype}: {exc}") from exc
    raise ProtocolError(f"unknown message type {mtype}")


# -- framing ------------------------------------------------------------------

MAX_FRAME = 256 * 1024 * 1024


def pack_frame(body: bytes) -> bytes:
    return struct.pack("<I", len(body)) + body


class FrameAssembler:
    """Incremental frame splitter for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        frames = []
        while True:
            if len(self._buf) < 4:
                break
            (length,) = struct.unpack_from("<I", self._buf, 0)
            if length > MAX_FRAME:
                raise ProtocolError(f"frame of {length} bytes exceeds limit")
            if len(self._buf) < 4 + length:
                break
            frames.append(bytes(self._buf[4 : 4 + length]))
            del self._buf[: 4 + length]
        return frames
