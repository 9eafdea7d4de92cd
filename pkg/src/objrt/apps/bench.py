"""Remote call cost benchmark.

Calls are timed per batch with a monotonic clock and reported as per-call
microseconds: mean and standard deviation over batches.

Modes:

* ``noarg``: a void method with no arguments (no marshalling at all).
* ``tenargs``: a void method taking ten ``ComplexArg`` values by value.
* ``policy``: one argument and one return value, both by reference, run
  with policy evaluation bypassed (everything hard-wired by reference) and
  with equivalent explicit method and return rules.  Batches of the two
  variants are interleaved so drift affects both alike.
"""

from __future__ import annotations

import enum
import statistics
import time
from dataclasses import dataclass, field

from ..node import Node, NodeConfig
from ..policy import BY_REFERENCE, BY_VALUE
from ..registry import remote_class

SERVICE = "Bench"
TEN_ARGS_SIG = "tenArgs(" + ",".join(["ComplexArg"] * 10) + ")->void"


class BenchMode(enum.Enum):
    NOARG = "noarg"
    TEN_ARGS = "tenargs"
    POLICY_OVERHEAD = "policy"


@remote_class("ComplexArg", fields=("s10", "s25", "n"))
@dataclass
class ComplexArg:
    s10: str
    s25: str
    n: int

    def __post_init__(self):
        if len(self.s10) != 10 or len(self.s25) != 25:
            raise ValueError("ComplexArg holds a 10- and a 25-character string")


@remote_class("Payload", fields=("data",))
@dataclass
class Payload:
    data: str = ""


@remote_class(
    "BenchServer",
    methods=["noop()->void", TEN_ARGS_SIG, "exchange(Payload)->Payload", "setPolicyBypass(bool)->void"],
)
class BenchServer:
    """Server object; installs its own return rule for ``exchange``."""

    def __init__(self, runtime: Node):
        self._runtime = runtime
        self._payload = Payload("server")
        runtime.policy.set_return_policy(BenchServer, "exchange(Payload)", BY_REFERENCE)

    def noop(self):
        pass

    def tenArgs(self, *args):
        pass

    def exchange(self, payload):
        return self._payload

    def setPolicyBypass(self, on: bool):
        self._runtime.policy_bypass = on


def serve_bench(runtime: Node, name: str = SERVICE):
    return runtime.expose(BenchServer(runtime), None, name)


@dataclass
class BenchSpec:
    mode: BenchMode
    batches: int = 100
    calls_per_batch: int = 4000
    target: tuple[str, int] | None = None

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = BenchMode(self.mode)
        if self.batches < 1 or self.calls_per_batch < 1:
            raise ValueError("batch and call counts must be positive")


@dataclass
class BenchRow:
    mode: str
    batches: int
    calls: int
    batch_us: list[float] = field(repr=False)  # per-call time of each batch
    total_calls: int = 0

    @property
    def mean_us(self) -> float:
        return statistics.fmean(self.batch_us)

    @property
    def stddev_us(self) -> float:
        return statistics.stdev(self.batch_us) if len(self.batch_us) > 1 else 0.0

    def line(self) -> str:
        return f"{self.mode}\t{self.batches}\t{self.calls}\t{self.mean_us:.3f}\t{self.stddev_us:.3f}"


@dataclass
class BenchReport:
    rows: list[BenchRow]
    ratio: float | None = None

    def lines(self) -> list[str]:
        out = ["# mode\tbatches\tcalls\tmean_us\tstddev_us"]
        out += [r.line() for r in self.rows]
        if self.ratio is not None:
            out.append(f"# policy evaluation overhead: ratio {self.ratio:.4f} ({(self.ratio - 1) * 100:+.2f}%)")
        for r in self.rows:
            out.append(f"# {r.mode}: {r.mean_us:.1f} us/call over {r.total_calls} calls")
        return out


def _ten_args() -> list[ComplexArg]:
    return [ComplexArg("abcdefghij", "abcdefghijklmnopqrstuvwxy", 42) for _ in range(10)]


def _timed_batch(fn, calls: int) -> float:
    t0 = time.perf_counter()
    for _ in range(calls):
        fn()
    return (time.perf_counter() - t0) / calls * 1e6


def run_bench(spec: BenchSpec, client: Node | None = None) -> BenchReport:
    """Run one mode.  Without ``spec.target`` a server node is started in-process."""
    own_client = client is None
    server = None
    target = spec.target
    if target is None:
        server = Node(NodeConfig()).start()
        serve_bench(server)
        target = server.address
    if client is None:
        client = Node(NodeConfig()).start()
    try:
        proxy = client.get_remote_reference(target, SERVICE)
        if spec.mode is BenchMode.POLICY_OVERHEAD:
            return _policy_overhead(spec, client, proxy)
        if spec.mode is BenchMode.NOARG:
            fn = proxy.noop
        else:
            client.policy.set_method_policy("BenchServer", TEN_ARGS_SIG, BY_VALUE)
            args = _ten_args()
            tenargs = proxy.tenArgs

            def fn():
                tenargs(*args)

        fn()
        row = BenchRow(spec.mode.value, spec.batches, spec.calls_per_batch, [])
        for _ in range(spec.batches):
            row.batch_us.append(_timed_batch(fn, spec.calls_per_batch))
            row.total_calls += spec.calls_per_batch
        return BenchReport([row])
    finally:
        if own_client:
            client.stop()
        if server is not None:
            server.stop()


def _policy_overhead(spec: BenchSpec, client: Node, proxy) -> BenchReport:
    client.policy.set_method_policy("BenchServer", "exchange(Payload)", BY_REFERENCE)
    payload = Payload("client")
    exchange = proxy.exchange

    def fn():
        exchange(payload)

    off = BenchRow("policy-off", spec.batches, spec.calls_per_batch, [])
    on = BenchRow("policy-on", spec.batches, spec.calls_per_batch, [])
    for b in range(spec.batches):
        # alternate which variant goes first to cancel ordering effects
        order = (off, on) if b % 2 == 0 else (on, off)
        for row in order:
            bypass = row is off
            client.policy_bypass = bypass
            proxy.setPolicyBypass(bypass)
            fn()
            row.batch_us.append(_timed_batch(fn, spec.calls_per_batch))
            row.total_calls += spec.calls_per_batch
    client.policy_bypass = False
    proxy.setPolicyBypass(False)
    return BenchReport([off, on], on.mean_us / off.mean_us)
