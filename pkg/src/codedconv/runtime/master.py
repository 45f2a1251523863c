"""Master: drives workers over TCP and assembles layer outputs.

Each worker connection is a session with a reader and a writer task.
Sessions never touch shared state: readers push ``(worker, message)``
pairs into the coordinator's inbox and the coordinator pushes outgoing
messages into each session's outbox.
"""

from __future__ import annotations

import asyncio
import csv
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..coded import CodedJob
from ..latency import LayerGeometry, PhaseProfile, sizes_for_widths
from ..optimizer import SystemParams, minimize_L
from ..simulator import expected_subtask_time
from ..tensor import ConvSpec, check_tensor4, pad
from .config import ModelConfig, apply_local, layer_input_dims
from .protocol import (Cancel, Error, Hello, LoadLayer, ResultReturn, TaskAssign, parse_address,
                       read_message, write_message)

log = logging.getLogger(__name__)

TIMEOUT_FACTOR = 5.0
MIN_TIMEOUT_S = 0.5

# A loopback profile for desk runs: ~1 GFLOP/s numpy convolution, fast local sockets.
DESK_PROFILE = PhaseProfile(mu_m=2e9, theta_m=5e-10, mu_cmp=2e9, theta_cmp=5e-10,
                            mu_rec=1e9, theta_rec=1e-9, mu_sen=1e9, theta_sen=1e-9)


class HandshakeError(ConnectionError):
    def __init__(self, unreachable: Sequence[str]):
        super().__init__(f"unreachable workers: {', '.join(unreachable)}")
        self.unreachable = list(unreachable)


class LayerFailureError(RuntimeError):
    def __init__(self, layer_id: int, missing: Sequence[int], got: int, need: int):
        super().__init__(f"layer {layer_id}: {got} of {need} results after retry; "
                         f"missing subtasks {sorted(missing)}")
        self.layer_id = layer_id
        self.missing = sorted(missing)


_GONE = object()


class _Session:
    def __init__(self, idx: int, address: str, reader, writer, worker_id: str, inbox: asyncio.Queue):
        self.idx, self.address, self.worker_id = idx, address, worker_id
        self.reader, self.writer = reader, writer
        self.inbox = inbox
        self.outbox: asyncio.Queue = asyncio.Queue()
        self.alive = True
        self.tasks = [asyncio.create_task(self._read()), asyncio.create_task(self._write())]

    async def _read(self):
        try:
            while True:
                msg = await read_message(self.reader)
                await self.inbox.put((self.idx, msg))
        except Exception as exc:  # EOF, reset or a malformed frame all end the session
            log.info("worker %s (%s) gone: %s", self.idx, self.address, type(exc).__name__)
        finally:
            self.alive = False
            await self.inbox.put((self.idx, _GONE))

    async def _write(self):
        try:
            while True:
                msg = await self.outbox.get()
                await write_message(self.writer, msg)
        except (ConnectionError, asyncio.CancelledError):
            pass

    def send(self, msg) -> None:
        if self.alive:
            self.outbox.put_nowait(msg)

    async def close(self):
        for t in self.tasks:
            t.cancel()
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


@dataclass
class LayerTiming:
    layer_id: int
    mode: str
    k: int
    enc_s: float = 0.0
    exec_s: float = 0.0
    dec_s: float = 0.0
    local_s: float = 0.0
    cancels: int = 0
    retries: int = 0
    used: list = field(default_factory=list)

    @property
    def total_s(self) -> float:
        return self.enc_s + self.exec_s + self.dec_s + self.local_s

    def rows(self) -> list[tuple]:
        if self.mode == "local":
            return [(self.layer_id, "local", self.local_s)]
        return [(self.layer_id, "enc", self.enc_s), (self.layer_id, "exec", self.exec_s),
                (self.layer_id, "dec", self.dec_s)]


class Master:
    def __init__(self, profile: PhaseProfile = DESK_PROFILE, timeout_s: Optional[float] = None,
                 min_timeout_s: float = MIN_TIMEOUT_S, nodes="integer"):
        self.profile = profile
        self.timeout_s = timeout_s
        self.min_timeout_s = min_timeout_s
        self.nodes = nodes
        self.sessions: list[_Session] = []
        self.inbox: asyncio.Queue = asyncio.Queue()
        self.specs: dict[int, ConvSpec] = {}
        self._task_ids = itertools.count(1)
        self.sent: list = []  # (worker, message type name) log for diagnostics

    @property
    def n(self) -> int:
        return len(self.sessions)

    async def connect(self, addresses: Sequence[str], timeout: float = 5.0) -> None:
        async def one(addr):
            host, port = parse_address(addr)
            reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), timeout)
            hello = await asyncio.wait_for(read_message(reader), timeout)
            if not isinstance(hello, Hello):
                writer.close()
                raise ConnectionError(f"{addr} did not greet")
            return reader, writer, hello.worker_id

        results = await asyncio.gather(*(one(a) for a in addresses), return_exceptions=True)
        bad = [a for a, r in zip(addresses, results) if isinstance(r, BaseException)]
        if bad:
            for r in results:
                if not isinstance(r, BaseException):
                    r[1].close()
            raise HandshakeError(bad)
        for i, (addr, (reader, writer, wid)) in enumerate(zip(addresses, results)):
            self.sessions.append(_Session(i, addr, reader, writer, wid, self.inbox))
        log.info("connected to %d workers", self.n)

    async def close(self) -> None:
        for s in self.sessions:
            await s.close()
        self.sessions = []

    def _send(self, idx: int, msg) -> None:
        self.sent.append((idx, type(msg).__name__))
        self.sessions[idx].send(msg)

    async def load_layer(self, layer_id: int, spec: ConvSpec) -> None:
        self.specs[layer_id] = spec
        for s in self.sessions:
            self._send(s.idx, LoadLayer(layer_id, spec))

    def subtask_timeout(self, job: CodedJob) -> float:
        if self.timeout_s is not None:
            return self.timeout_s
        _, _, h, w = job.input_shape
        geo = LayerGeometry(job.spec, h, w)
        z = sizes_for_widths(geo, job.k, job.n, job.plan.piece_width_in, job.plan.piece_width_out)
        return max(self.min_timeout_s, TIMEOUT_FACTOR * expected_subtask_time(z, self.profile))

    async def execute_layer_distributed(self, layer_id: int, x: np.ndarray, k: int,
                                        coded: bool = True) -> tuple[np.ndarray, LayerTiming]:
        n = self.n
        spec = self.specs[layer_id]
        if coded and not 1 <= k <= n - 1:
            raise ValueError(f"coded execution needs 1 <= k <= n-1 (k={k}, n={n}); "
                             "use uncoded mode for k = n")
        if not coded:
            k = n
        loop = asyncio.get_running_loop()
        timing = LayerTiming(layer_id, "coded" if coded else "uncoded", k)

        t0 = time.perf_counter()
        x = check_tensor4(x)
        xp = pad(x, spec.padding)
        job = CodedJob.build(spec, xp.shape, n, k, coded, self.nodes)
        inputs = job.encode(xp)
        t1 = time.perf_counter()
        timing.enc_s = t1 - t0

        task_id = next(self._task_ids)
        remainder = None
        if job.plan.remainder is not None:
            remainder = loop.run_in_executor(None, job.remainder_output, xp)
        outstanding = {}  # worker -> number of subtasks in flight
        for i in range(n):
            if self.sessions[i].alive:
                self._send(i, TaskAssign(task_id, layer_id, i, inputs[i]))
                outstanding[i] = 1
        results: dict[int, np.ndarray] = {}
        responders: list[int] = []
        timeout = self.subtask_timeout(job)
        deadline = time.perf_counter() + timeout
        retried = False
        while len(results) < k:
            waiting = any(c > 0 and self.sessions[w].alive for w, c in outstanding.items())
            remaining = deadline - time.perf_counter()
            if remaining <= 0 or not waiting:
                missing = [i for i in range(n if coded else k) if i not in results]
                if retried or not responders:
                    raise LayerFailureError(layer_id, missing, len(results), k)
                retried = True
                short = k - len(results)
                fast = [w for w in dict.fromkeys(responders) if self.sessions[w].alive]
                if not fast:
                    raise LayerFailureError(layer_id, missing, len(results), k)
                for j, sub in enumerate(missing[:short]):
                    w = fast[j % len(fast)]
                    log.info("layer %d: re-dispatching subtask %d to worker %d", layer_id, sub, w)
                    self._send(w, TaskAssign(task_id, layer_id, sub, inputs[sub]))
                    outstanding[w] = outstanding.get(w, 0) + 1
                timing.retries += min(short, len(missing))
                deadline = time.perf_counter() + timeout
                continue
            try:
                idx, msg = await asyncio.wait_for(self.inbox.get(), remaining)
            except asyncio.TimeoutError:
                continue
            if msg is _GONE:
                outstanding.pop(idx, None)
                continue
            if isinstance(msg, ResultReturn) and msg.task_id == task_id:
                if idx in outstanding:
                    outstanding[idx] -= 1
                if msg.subtask_index in results or msg.subtask_index >= n:
                    continue  # duplicates are ignored
                results[msg.subtask_index] = msg.tensor
                responders.append(idx)
            elif isinstance(msg, Error):
                log.warning("worker %d error %d: %s", idx, msg.code, msg.text)
                outstanding.pop(idx, None)
        for w, c in outstanding.items():
            if c > 0 and self.sessions[w].alive:
                self._send(w, Cancel(task_id))
                timing.cancels += 1
        rem_out = await remainder if remainder is not None else None
        t2 = time.perf_counter()
        timing.exec_s = t2 - t1
        if coded:
            chosen = dict(itertools.islice(results.items(), k))
        else:
            chosen = results
        timing.used = list(chosen)
        out = job.decode(chosen, rem_out, dtype=x.dtype)
        timing.dec_s = time.perf_counter() - t2
        return out, timing


def choose_k(spec: ConvSpec, dims: tuple, n: int, profile: PhaseProfile) -> int:
    """k from the approximate objective, clipped to what the layer allows."""
    c, h, w = dims
    geo = LayerGeometry.from_unpadded(spec, h, w)
    if n < 2:
        return 1
    k = minimize_L(SystemParams(n, geo, profile)).k_circ
    return max(1, min(k, n - 1, geo.out_width))


@dataclass
class RunReport:
    output: np.ndarray
    layers: list
    total_s: float

    def rows(self) -> list[tuple]:
        out = []
        for t in self.layers:
            out.extend(t.rows())
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["layer_id", "phase", "seconds"])
            for lid, phase, sec in self.rows():
                wr.writerow([lid, phase, f"{sec:.6f}"])
            wr.writerow(["all", "total", f"{self.total_s:.6f}"])


async def run_model(master: Master, model: ModelConfig, x: np.ndarray, k: Optional[int] = None,
                    coded: bool = True) -> RunReport:
    """Execute a model layer by layer; type-1 layers go to the workers."""
    dims = layer_input_dims(model)
    loaded = set()
    for lc in model.layers:
        if lc.task_type == 1 and lc.layer_id not in loaded:
            await master.load_layer(lc.layer_id, lc.spec)
            loaded.add(lc.layer_id)
    ks = {}
    for lc in model.layers:
        if lc.task_type == 1:
            kk = k if k is not None else choose_k(lc.spec, dims[lc.layer_id], master.n, master.profile)
            ks[lc.layer_id] = max(1, min(kk, master.n - 1)) if coded else master.n
    timings = []
    start = time.perf_counter()
    for lc in model.layers:
        if lc.task_type == 1:
            x, t = await master.execute_layer_distributed(lc.layer_id, x, ks[lc.layer_id], coded)
        else:
            t0 = time.perf_counter()
            x = apply_local(lc, x)
            t = LayerTiming(lc.layer_id, "local", 0, local_s=time.perf_counter() - t0)
        timings.append(t)
    return RunReport(x, timings, time.perf_counter() - start)


def run_master(model: ModelConfig, addresses: Sequence[str], x: np.ndarray, k: Optional[int] = None,
               coded: bool = True, profile: PhaseProfile = DESK_PROFILE,
               timeout_s: Optional[float] = None) -> RunReport:
    async def main():
        master = Master(profile, timeout_s)
        await master.connect(addresses)
        try:
            return await run_model(master, model, x, k, coded)
        finally:
            await master.close()

    return asyncio.run(main())
