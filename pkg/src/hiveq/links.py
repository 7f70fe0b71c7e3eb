"""Transport between containers and the centralizer.

``TcpLink`` is the production client: it frames messages over a TCP byte
stream, keeps every TRAJ_BATCH in an outbox until the centralizer
acknowledges it, and reconnects with exponential backoff when the link
dies, resending the outbox (the centralizer deduplicates by batch
sequence). Learning inside the container continues regardless of link
health.

``LocalLink`` is the deterministic in-process stand-in: delivery goes
through plain channels ticked by the scheduler, with the same
at-least-once + dedup contract.
"""

from __future__ import annotations

import socket
import threading
import time
from collections import deque

import numpy as np

from .errors import ProtocolError
from .fabric import ChannelEmpty, LocalChannel, ThreadChannel
from .replay import Trajectory
from . import wire


class LinkCounters:
    def __init__(self):
        self.batches_queued = 0
        self.batches_acked = 0
        self.batch_retries = 0
        self.reconnects = 0
        self.dropped_outbox = 0
        self.acked_seqs: set[int] = set()

    def snapshot(self) -> dict:
        return {
            "batches_queued": self.batches_queued,
            "batches_acked": self.batches_acked,
            "batch_retries": self.batch_retries,
            "reconnects": self.reconnects,
            "dropped_outbox": self.dropped_outbox,
        }


class TcpLink:
    """Container side of the wire protocol; owns one background thread."""

    def __init__(
        self,
        address: tuple[str, int],
        container_id: int,
        outbox_capacity: int = 4096,
        backoff_initial: float = 0.1,
        backoff_max: float = 2.0,
    ):
        self.address = address
        self.container_id = container_id
        self.outbox: deque[tuple[int, bytes]] = deque()
        self.outbox_capacity = outbox_capacity
        self.fire_and_forget: deque[bytes] = deque()
        self.inbound = ThreadChannel()
        self.lock = threading.Lock()
        self.counters = LinkCounters()
        self.next_seq = 0
        self.backoff_initial = backoff_initial
        self.backoff_max = backoff_max
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # -- producer API (called from container threads) --------------------------

    def send_batch(self, trajs: list[Trajectory]) -> int:
        with self.lock:
            seq = self.next_seq
            self.next_seq += 1
            frame = wire.encode_traj_batch(self.container_id, seq, trajs)
            self.outbox.append((seq, frame))
            self.counters.batches_queued += 1
            while len(self.outbox) > self.outbox_capacity:
                self.outbox.popleft()
                self.counters.dropped_outbox += 1
        return seq

    def send_stats(self, payload: dict) -> None:
        with self.lock:
            self.fire_and_forget.append(wire.encode_stats(payload))

    def send_head(self, version: int, arrays: dict[str, np.ndarray]) -> None:
        with self.lock:
            self.fire_and_forget.append(
                wire.encode_head_upload(self.container_id, version, arrays)
            )

    def poll_inbound(self) -> list[dict]:
        out = []
        while True:
            try:
                out.append(self.inbound.get_nowait())
            except ChannelEmpty:
                return out

    # -- background I/O ----------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="container-link", daemon=True)
        self._thread.start()

    def stop(self, drain_timeout: float = 5.0) -> None:
        deadline = time.monotonic() + drain_timeout
        while time.monotonic() < deadline:
            with self.lock:
                if not self.outbox and not self.fire_and_forget:
                    break
            time.sleep(0.02)
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=2.0)

    def _connect(self) -> socket.socket | None:
        backoff = self.backoff_initial
        while not self._stop.is_set():
            try:
                sock = socket.create_connection(self.address, timeout=1.0)
                sock.settimeout(0.02)
                sock.sendall(wire.pack_frame(wire.encode_hello(self.container_id)))
                return sock
            except OSError:
                self.counters.reconnects += 1
                time.sleep(backoff)
                backoff = min(backoff * 2, self.backoff_max)
        return None

    def _run(self) -> None:
        assembler = wire.FrameAssembler()
        sock: socket.socket | None = None
        sent_this_conn: set[int] = set()
        first_attach = True
        while not self._stop.is_set():
            if sock is None:
                sock = self._connect()
                if sock is None:
                    break
                assembler = wire.FrameAssembler()
                sent_this_conn = set()
                if not first_attach:
                    with self.lock:
                        self.counters.batch_retries += len(self.outbox)
                first_attach = False
            try:
                progress = self._pump(sock, sent_this_conn, assembler)
            except (OSError, ProtocolError):
                try:
                    sock.close()
                except OSError:
                    pass
                sock = None
                continue
            if not progress:
                time.sleep(0.002)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    def _pump(self, sock: socket.socket, sent: set, assembler: wire.FrameAssembler) -> bool:
        progress = False
        with self.lock:
            to_send = [
                (seq, frame) for seq, frame in self.outbox if seq not in sent
            ][:16]
            extras = []
            while self.fire_and_forget:
                extras.append(self.fire_and_forget.popleft())
        for seq, frame in to_send:
            sock.sendall(wire.pack_frame(frame))
            sent.add(seq)
            progress = True
        for frame in extras:
            sock.sendall(wire.pack_frame(frame))
            progress = True
        try:
            data = sock.recv(1 << 16)
            if data == b"":
                raise OSError("link closed by peer")
        except socket.timeout:
            return progress
        for payload in assembler.feed(data):
            msg = wire.decode_message(payload)
            if msg["type"] == wire.ACK:
                with self.lock:
                    before = len(self.outbox)
                    self.outbox = deque(
                        (s, f) for s, f in self.outbox if s != msg["batch_seq"]
                    )
                    if len(self.outbox) != before:
                        self.counters.batches_acked += 1
                        self.counters.acked_seqs.add(msg["batch_seq"])
            else:
                self.inbound.put_nowait(msg)
        return True


class LocalLink:
    """Deterministic-mode link: reliable in-process delivery via channels.

    ``deliver`` is called by the hub to feed centralizer replies back in;
    outgoing messages queue in ``outgoing`` until the hub's tick moves them.
    """

    def __init__(self, container_id: int):
        self.container_id = container_id
        self.outgoing = LocalChannel()
        self.inbound = LocalChannel()
        self.counters = LinkCounters()
        self.next_seq = 0

    def send_batch(self, trajs: list[Trajectory]) -> int:
        seq = self.next_seq
        self.next_seq += 1
        self.outgoing.put_nowait(
            {
                "type": wire.TRAJ_BATCH,
                "container_id": self.container_id,
                "batch_seq": seq,
                "trajectories": trajs,
            }
        )
        self.counters.batches_queued += 1
        return seq

    def send_stats(self, payload: dict) -> None:
        self.outgoing.put_nowait({"type": wire.STATS, "payload": payload})

    def send_head(self, version: int, arrays: dict[str, np.ndarray]) -> None:
        self.outgoing.put_nowait(
            {
                "type": wire.HEAD_UPLOAD,
                "container_id": self.container_id,
                "version": version,
                "arrays": {k: v.copy() for k, v in arrays.items()},
            }
        )

    def poll_inbound(self) -> list[dict]:
        out = []
        while True:
            try:
                msg = self.inbound.get_nowait()
            except ChannelEmpty:
                return out
            if msg["type"] == wire.ACK:
                self.counters.batches_acked += 1
                self.counters.acked_seqs.add(msg["batch_seq"])
            else:
                out.append(msg)
