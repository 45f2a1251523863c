"""Worker process: serves one master at a time, one in-flight subtask."""

from __future__ import annotations

import asyncio
import logging
import os
import threading
import time
from typing import Optional

from ..tensor import ConvSpec, conv2d
from .protocol import (Cancel, Error, ErrorCode, Heartbeat, Hello, LoadLayer, ProtocolError,
                       ResultReturn, TaskAssign, parse_address, read_message, write_message)

log = logging.getLogger(__name__)


class _Job:
    def __init__(self, task_id: int):
        self.task_id = task_id
        self.cancel = threading.Event()


class WorkerServer:
    """Caches layers sent by the master and runs conv2d (bias off) on request.

    ``delay_ms`` adds a fixed sleep before each subtask, for fault
    injection; the sleep honours cancellation like the computation does.
    """

    def __init__(self, worker_id: Optional[str] = None, delay_ms: float = 0.0):
        self.worker_id = worker_id or f"worker-{os.getpid()}"
        self.delay_ms = delay_ms
        self.layers: dict[int, ConvSpec] = {}
        self.completed = 0
        self.cancelled = 0
        self._busy = asyncio.Lock()

    def _compute(self, spec: ConvSpec, x, job: _Job):
        deadline = time.monotonic() + self.delay_ms / 1000.0
        while time.monotonic() < deadline:
            if job.cancel.wait(min(0.01, max(0.0, deadline - time.monotonic()))):
                return None
        return conv2d(x, spec, apply_bias=False, cancelled=job.cancel.is_set, column_block=4)

    async def _run(self, msg: TaskAssign, writer, jobs: dict) -> None:
        job = jobs[msg.task_id]
        loop = asyncio.get_running_loop()
        try:
            async with self._busy:
                if job.cancel.is_set():
                    out = None
                else:
                    out = await loop.run_in_executor(None, self._compute, self.layers[msg.layer_id],
                                                     msg.tensor, job)
            if out is None or job.cancel.is_set():
                self.cancelled += 1
                log.debug("task %d subtask %d cancelled", msg.task_id, msg.subtask_index)
                return
            self.completed += 1
            await write_message(writer, ResultReturn(msg.task_id, msg.subtask_index, out))
        except (ConnectionError, RuntimeError):
            pass
        except Exception as exc:  # report, keep serving
            log.exception("subtask failed")
            try:
                await write_message(writer, Error(ErrorCode.INTERNAL, str(exc)))
            except ConnectionError:
                pass
        finally:
            if jobs.get(msg.task_id) is job:
                del jobs[msg.task_id]

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        jobs: dict[int, _Job] = {}
        tasks: set[asyncio.Task] = set()
        try:
            await write_message(writer, Hello(self.worker_id))
            while True:
                try:
                    msg = await read_message(reader)
                except ProtocolError as exc:
                    log.warning("closing connection: %s", exc)
                    await write_message(writer, Error(exc.code, str(exc)))
                    break
                if isinstance(msg, LoadLayer):
                    self.layers[msg.layer_id] = msg.spec
                elif isinstance(msg, TaskAssign):
                    if msg.layer_id not in self.layers:
                        await write_message(writer, Error(ErrorCode.LAYER_NOT_LOADED,
                                                          f"layer {msg.layer_id} not loaded"))
                        continue
                    jobs[msg.task_id] = _Job(msg.task_id)
                    t = asyncio.create_task(self._run(msg, writer, jobs))
                    tasks.add(t)
                    t.add_done_callback(tasks.discard)
                elif isinstance(msg, Cancel):
                    job = jobs.get(msg.task_id)
                    if job is not None:
                        job.cancel.set()
                elif isinstance(msg, Heartbeat):
                    await write_message(writer, Heartbeat())
                # Hello, Error and stray results from the master are ignored
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            for job in jobs.values():
                job.cancel.set()
            for t in list(tasks):
                t.cancel()
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass


async def serve(listen: str, delay_ms: float = 0.0, worker_id: Optional[str] = None,
                ready=None) -> None:
    host, port = parse_address(listen)
    worker = WorkerServer(worker_id, delay_ms)
    server = await asyncio.start_server(worker.handle, host, port)
    bound = server.sockets[0].getsockname()
    log.info("worker %s listening on %s:%d", worker.worker_id, bound[0], bound[1])
    if ready is not None:
        ready(bound[0], bound[1])
    async with server:
        await server.serve_forever()


def run_worker(listen: str, delay_ms: float = 0.0, worker_id: Optional[str] = None,
               announce: bool = True) -> None:
    """Serve until terminated.  Prints ``LISTENING host port`` once bound."""

    def ready(host, port):
        if announce:
            print(f"LISTENING {host} {port}", flush=True)

    try:
        asyncio.run(serve(listen, delay_ms, worker_id, ready))
    except KeyboardInterrupt:
        pass
