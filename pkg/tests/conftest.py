import subprocess
import sys
import time

import pytest

from helpers import ACCEPTANCE_LINES


def spawn_worker(delay_ms: float = 0.0):
    """Start a worker process on a free loopback port; returns (proc, "host:port")."""
    cmd = [sys.executable, "-m", "codedconv", "worker", "--listen", "127.0.0.1:0"]
    if delay_ms:
        cmd += ["--delay-ms", str(delay_ms)]
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    line = proc.stdout.readline().split()
    if len(line) != 3 or line[0] != "LISTENING":
        proc.kill()
        raise RuntimeError(f"worker did not start: {line}")
    return proc, f"{line[1]}:{line[2]}"


class Cluster:
    def __init__(self, delays):
        self.procs, self.addresses = [], []
        for d in delays:
            p, a = spawn_worker(d)
            self.procs.append(p)
            self.addresses.append(a)

    def kill(self, i: int) -> None:
        self.procs[i].kill()
        self.procs[i].wait()

    def close(self) -> None:
        for p in self.procs:
            if p.poll() is None:
                p.kill()
            p.wait()
            p.stdout.close()


@pytest.fixture
def cluster_factory():
    made = []

    def make(delays):
        c = Cluster(delays)
        made.append(c)
        return c

    yield make
    for c in made:
        c.close()
    time.sleep(0.05)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
