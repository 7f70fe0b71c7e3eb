"""Production (multiprocess) runtime.

Containers are independent OS processes talking to the centralizer process
over TCP; inside each container the actors are child processes feeding
bounded queues while the queue manager, buffer manager, and learner run as
threads. All socket I/O on the centralizer side is owned by one transport
thread; roles only enqueue outbound frames.
"""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import os
import queue as _queue
import select
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .centralizer import CentralConfig, Centralizer
from .container import ActorWorker, ContainerConfig, PolicySnapshot
from .errors import ProtocolError
from .fabric import MpChannel, ThreadChannel
from .links import TcpLink
from .runtime import ContainerRuntime
from . import wire

log = logging.getLogger(__name__)


# -- centralizer transport ------------------------------------------------------


class _Conn:
    def __init__(self, sock):
        self.sock = sock
        self.assembler = wire.FrameAssembler()
        self.cid: int | None = None
        self.out: deque[bytes] = deque()
        self.out_offset = 0


class CentralServer:
    """Accepts container connections and moves frames in both directions."""

    MAX_BACKLOG_FRAMES = 64

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(32)
        self.listener.setblocking(False)
        self.port = self.listener.getsockname()[1]
        self.incoming = ThreadChannel()
        self._conns: dict[socket.socket, _Conn] = {}
        self._by_cid: dict[int, _Conn] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.paused = threading.Event()  # fault-injection hook: refuse traffic

    def start(self) -> None:
        self._thread = threading.Thread(target=self.run, name="central-server", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=2.0)

    def send_to(self, cid: int, data: bytes, droppable: bool = False) -> bool:
        with self._lock:
            conn = self._by_cid.get(cid)
            if conn is None:
                return False
            if droppable and len(conn.out) >= self.MAX_BACKLOG_FRAMES:
                return False
            conn.out.append(data)
            return True

    def _close_conn(self, conn: _Conn) -> None:
        with self._lock:
            self._conns.pop(conn.sock, None)
            if conn.cid is not None and self._by_cid.get(conn.cid) is conn:
                del self._by_cid[conn.cid]
        try:
            conn.sock.close()
        except OSError:
            pass
        if conn.cid is not None:
            self.incoming.put_nowait({"type": "disconnect", "container_id": conn.cid})

    def _drop_all(self) -> None:
        for conn in list(self._conns.values()):
            self._close_conn(conn)

    def run(self) -> None:
        while not self._stop.is_set():
            if self.paused.is_set():
                self._drop_all()
                time.sleep(0.01)
                continue
            socks = list(self._conns)
            writers = [c.sock for c in self._conns.values() if c.out]
            try:
                readable, writable, _ = select.select(
                    [self.listener] + socks, writers, [], 0.02
                )
            except (OSError, ValueError):
                continue
            for sock in readable:
                if sock is self.listener:
                    try:
                        client, _ = self.listener.accept()
                    except OSError:
                        continue
                    client.setblocking(False)
                    self._conns[client] = _Conn(client)
                    continue
                conn = self._conns.get(sock)
                if conn is None:
                    continue
                try:
                    data = sock.recv(1 << 16)
                except (BlockingIOError, InterruptedError):
                    continue
                except OSError:
                    self._close_conn(conn)
                    continue
                if data == b"":
                    self._close_conn(conn)
                    continue
                try:
                    for payload in conn.assembler.feed(data):
                        msg = wire.decode_message(payload)
                        if msg["type"] == wire.HELLO:
                            conn.cid = msg["container_id"]
                            with self._lock:
                                self._by_cid[conn.cid] = conn
                        self.incoming.put_nowait(msg)
                except ProtocolError as exc:
                    log.warning("resetting connection (cid=%s): %s", conn.cid, exc)
                    self._close_conn(conn)
            for sock in writable:
                conn = self._conns.get(sock)
                if conn is None or not conn.out:
                    continue
                buf = conn.out[0]
                try:
                    sent = sock.send(buf[conn.out_offset :])
                except (BlockingIOError, InterruptedError):
                    continue
                except OSError:
                    self._close_conn(conn)
                    continue
                conn.out_offset += sent
                if conn.out_offset >= len(buf):
                    conn.out.popleft()
                    conn.out_offset = 0
        self._drop_all()
        try:
            self.listener.close()
        except OSError:
            pass


# -- actor process ---------------------------------------------------------------


def actor_process_main(
    cfg: ContainerConfig,
    actor_id: int,
    out_q,
    snap_q,
    stop_evt,
    step_val,
    final_q,
    snapshot: PolicySnapshot,
    start_time: float,
    collect_samples: bool = False,
) -> None:
    if cfg.actor_nice:
        # collection yields CPU to the learners on small machines; actors
        # still never block, they just get scheduled after learner work
        try:
            os.nice(cfg.actor_nice)
        except OSError:
            pass
    worker = ActorWorker(cfg, actor_id, cfg.make_env(), MpChannel(out_q), snapshot)
    try:
        while not stop_evt.is_set():
            latest = None
            while True:
                try:
                    latest = snap_q.get_nowait()
                except _queue.Empty:
                    break
            if latest is not None:
                worker.install_snapshot(latest)
            worker.tick()
            step_val.value = worker.env_steps
            if (
                cfg.time_budget_s is not None
                and time.monotonic() - start_time >= cfg.time_budget_s
            ):
                break
    finally:
        step_val.value = worker.env_steps
        payload = {"actor_id": actor_id, **worker.counters()}
        if collect_samples:
            payload["latency_samples"] = list(worker.latency.samples)
        try:
            final_q.put(payload, timeout=2.0)
        except Exception:
            pass


# -- container process --------------------------------------------------------------


@dataclass
class ContainerHandles:
    """Channels and processes of one running container (parent side)."""

    cfg: ContainerConfig
    runtime: ContainerRuntime
    stop_evt: object
    actor_procs: list
    final_q: object
    mp_queues: list = field(default_factory=list)
    threads_stop: threading.Event = field(default_factory=threading.Event)
    threads: list[threading.Thread] = field(default_factory=list)


def _loop(tick, stop: threading.Event, idle_sleep: float) -> None:
    while not stop.is_set():
        try:
            if not tick():
                time.sleep(idle_sleep)
        except Exception:
            log.exception("worker loop error")
            time.sleep(idle_sleep)


def start_container(
    cfg: ContainerConfig,
    address: tuple[str, int],
    collect_samples: bool = False,
    start_time: float | None = None,
) -> ContainerHandles:
    ctx = mp.get_context("fork")
    stop_evt = ctx.Event()
    out_qs = [ctx.Queue(maxsize=cfg.actor_queue_capacity) for _ in range(cfg.k_actors)]
    snap_qs = [ctx.Queue(maxsize=4) for _ in range(cfg.k_actors)]
    step_vals = [ctx.Value("q", 0) for _ in range(cfg.k_actors)]
    final_q = ctx.Queue()
    start_time = time.monotonic() if start_time is None else start_time

    def publish(snap: PolicySnapshot) -> None:
        for q in snap_qs:
            try:
                q.put_nowait(snap)
            except _queue.Full:
                pass

    link = TcpLink(address, cfg.container_id)
    runtime = ContainerRuntime(
        cfg,
        link,
        [MpChannel(q) for q in out_qs],
        step_counters=[(lambda v=v: v.value) for v in step_vals],
        publish=publish,
        channel_factory=ThreadChannel,
    )
    snap0 = runtime.make_snapshot()
    procs = []
    for aid in range(cfg.k_actors):
        p = ctx.Process(
            target=actor_process_main,
            args=(
                cfg,
                aid,
                out_qs[aid],
                snap_qs[aid],
                stop_evt,
                step_vals[aid],
                final_q,
                snap0,
                start_time,
                collect_samples,
            ),
            daemon=True,
        )
        p.start()
        procs.append(p)
    link.start()

    handles = ContainerHandles(
        cfg=cfg,
        runtime=runtime,
        stop_evt=stop_evt,
        actor_procs=procs,
        final_q=final_q,
        mp_queues=[*out_qs, *snap_qs, final_q],
    )
    qm = runtime.queue_manager
    bm = runtime.buffer_manager

    def learner_tick():
        moved = runtime.comms_tick()
        return runtime.learner_tick() or moved

    for name, tick, idle in (
        ("qm", qm.poll_once, 0.002),
        ("bm", bm.tick, 0.002),
        ("learner", learner_tick, 0.005),
    ):
        t = threading.Thread(
            target=_loop,
            args=(tick, handles.threads_stop, idle),
            name=f"c{cfg.container_id}-{name}",
            daemon=True,
        )
        t.start()
        handles.threads.append(t)
    return handles


def finish_container(handles: ContainerHandles, out_dir: str | Path | None) -> dict:
    """Stop actors, drain remaining experience, flush the link, and write
    the container's result file."""
    cfg = handles.cfg
    runtime = handles.runtime
    handles.stop_evt.set()
    deadline = time.monotonic() + 30.0
    for p in handles.actor_procs:
        while p.is_alive() and time.monotonic() < deadline:
            p.join(timeout=0.1)
    actors = {}
    for _ in handles.actor_procs:
        try:
            payload = handles.final_q.get(timeout=2.0)
            actors[str(payload["actor_id"])] = payload
        except _queue.Empty:
            break
    runtime.actor_counters = {int(k): v for k, v in actors.items()}
    # give the queue-manager thread a moment to drain what the actors left
    settle_until = time.monotonic() + 2.0
    while time.monotonic() < settle_until:
        backlog = 0
        for ch in runtime.queue_manager.queues:
            try:
                backlog += ch.raw.qsize()
            except (AttributeError, NotImplementedError, OSError):
                backlog = 0
                break
        if backlog == 0:
            break
        time.sleep(0.02)
    handles.threads_stop.set()
    for t in handles.threads:
        t.join(timeout=2.0)
    # final forced flush on this thread (threads are stopped now)
    runtime.signal.set()
    runtime.queue_manager.poll_once()
    runtime.buffer_manager.tick()
    stats = runtime.stats_payload()
    stats["actors"] = actors
    runtime.link.send_stats(stats)
    runtime.link.stop(drain_timeout=10.0)
    stats["acked_seqs"] = sorted(runtime.link.counters.acked_seqs)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"container_{cfg.container_id}.json").write_text(json.dumps(stats, indent=2))
    # undelivered snapshot/episode payloads must not pin the process at exit
    for q in handles.mp_queues:
        try:
            q.cancel_join_thread()
            q.close()
        except (AttributeError, OSError):
            pass
    return stats


def container_process_main(
    cfg: ContainerConfig,
    address: tuple[str, int],
    out_dir: str | None,
    collect_samples: bool = False,
    external_stop=None,
) -> None:
    handles = start_container(cfg, address, collect_samples=collect_samples)
    try:
        while True:
            steps = handles.runtime.container_steps()
            if cfg.step_budget and steps >= cfg.step_budget:
                break
            if external_stop is not None and external_stop.is_set():
                break
            if not any(p.is_alive() for p in handles.actor_procs):
                break
            time.sleep(0.05)
    finally:
        finish_container(handles, out_dir)


# -- centralizer host (runs in the supervising process) -----------------------------


class CentralHost:
    """Centralizer roles on threads plus the socket transport; lives in the
    runner process while containers run as children."""

    def __init__(self, cfg: CentralConfig, host: str = "127.0.0.1", port: int = 0):
        self.server = CentralServer(host, port)
        self.central = Centralizer(cfg, self.server.incoming, send=self.server.send_to)
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def port(self) -> int:
        return self.server.port

    def start(self) -> None:
        self.server.start()

        def coordinator():
            while not self._stop.is_set():
                moved = self.central.receiver_tick()
                moved |= self.central.buffer_tick()
                moved |= self.central.broadcaster_tick()
                moved |= self.central.evaluator_tick()
                if not moved:
                    time.sleep(0.002)

        def learner():
            while not self._stop.is_set():
                if not self.central.learner_tick():
                    time.sleep(0.005)

        self._threads = [
            threading.Thread(target=coordinator, name="central-coordinator", daemon=True),
            threading.Thread(target=learner, name="central-learner", daemon=True),
        ]
        for t in self._threads:
            t.start()

    def pause_link(self) -> None:
        """Fault injection: drop all container connections and refuse new
        ones until resume_link()."""
        self.server.paused.set()

    def resume_link(self) -> None:
        self.server.paused.clear()

    def stop(self, out_dir: str | Path | None) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2.0)
        # drain whatever arrived during shutdown, then final metrics row
        self.central.receiver_tick()
        self.central.buffer_tick()
        self.central.evaluator_tick(force=True)
        if out_dir is not None:
            self.central.write_result(out_dir)
        self.central.close()
        self.server.stop()
