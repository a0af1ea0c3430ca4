"""Discrete-event model of the serverless inference tier.

Steady-state latency grows with the number of concurrent requests; requests
that find no warm container pay a cold-start penalty once per new container.
Nothing here touches the network; it only models it.
"""

from __future__ import annotations

import heapq
import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

TABLE2_POINTS: tuple[tuple[int, float], ...] = ((1, 450.0), (10, 460.0), (100, 475.0), (1000, 495.0), (10000, 497.0))


@dataclass(frozen=True)
class LatencyModel:
    """``mode="fitted"`` interpolates the published scaling table; ``"formula"``
    uses ``base + overhead + k * log_b(n)``."""

    base_inference_ms: float = 400.0
    network_overhead_ms: float = 50.0
    scaling_factor: float = 10.0
    log_base: float = 10.0
    cold_start_ms: float = 900.0
    provisioned_concurrency: int = 0
    mode: str = "fitted"
    profile: tuple[tuple[int, float], ...] = TABLE2_POINTS

    def __post_init__(self):
        if self.mode not in ("fitted", "formula"):
            raise ValueError(f"unknown latency mode {self.mode!r}")
        if self.scaling_factor < 0 or self.cold_start_ms < 0 or self.provisioned_concurrency < 0:
            raise ValueError("scaling factor, cold start and provisioned concurrency must be nonnegative")
        if self.log_base <= 1:
            raise ValueError("log base must exceed 1")
        ns = [n for n, _ in self.profile]
        ms = [v for _, v in self.profile]
        if len(ns) < 2 or ns[0] != 1 or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("profile must start at n=1 with strictly increasing n")
        if any(b < a for a, b in zip(ms, ms[1:])):
            raise ValueError("profile latencies must be nondecreasing")
        slopes = [(ms[i + 1] - ms[i]) / (ns[i + 1] - ns[i]) for i in range(len(ns) - 1)]
        if any(b > a + 1e-12 for a, b in zip(slopes, slopes[1:])):
            raise ValueError("profile must be concave (nonincreasing slopes)")

    @classmethod
    def from_dict(cls, obj) -> LatencyModel:
        obj = dict(obj)
        if "profile" in obj:
            obj["profile"] = tuple((int(n), float(v)) for n, v in obj["profile"])
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["profile"] = [list(p) for p in self.profile]
        return d


def steady_latency(n_concurrent: int, model: LatencyModel = LatencyModel()) -> float:
    """Warm-path latency in ms with ``n_concurrent`` requests in flight."""
    if n_concurrent < 1:
        raise ValueError("n_concurrent must be >= 1")
    if model.mode == "formula":
        if n_concurrent == 1:
            return model.base_inference_ms + model.network_overhead_ms
        return (
            model.base_inference_ms
            + model.network_overhead_ms
            + model.scaling_factor * math.log(n_concurrent) / math.log(model.log_base)
        )
    ns = np.array([n for n, _ in model.profile], dtype=float)
    ms = np.array([v for _, v in model.profile], dtype=float)
    n = float(n_concurrent)
    if n <= ns[-1]:
        return float(np.interp(n, ns, ms))
    slope = (ms[-1] - ms[-2]) / (ns[-1] - ns[-2])
    return float(ms[-1] + slope * (n - ns[-1]))


def table2(model: LatencyModel = LatencyModel(), levels: Sequence[int] = (1, 10, 100, 1000, 10000)) -> list[dict]:
    base = steady_latency(1, model)
    return [
        {
            "concurrent_requests": n,
            "response_time_ms": steady_latency(n, model),
            "latency_increase_pct": 100.0 * (steady_latency(n, model) - base) / base,
        }
        for n in levels
    ]


def render_table2(rows: Sequence[dict]) -> str:
    lines = [f"{'Concurrent Requests':>19}  {'Response Time (ms)':>18}  {'Latency Increase':>16}"]
    for r in rows:
        inc = "-" if r["concurrent_requests"] == 1 else f"{r['latency_increase_pct']:.1f}%"
        lines.append(f"{r['concurrent_requests']:>19,}  {r['response_time_ms']:>18.0f}  {inc:>16}")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# load simulation


@dataclass(frozen=True)
class LoadScenario:
    """Arrivals as ``(time_ms, request_count)`` pairs with nondecreasing times."""

    arrivals: tuple[tuple[float, int], ...]
    duration_ms: float | None = None
    rng_seed: int = 0
    jitter_ms: float = 0.0

    def __post_init__(self):
        times = [t for t, _ in self.arrivals]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("arrival timestamps must be nondecreasing")
        if any(c < 0 for _, c in self.arrivals) or any(t < 0 for t in times):
            raise ValueError("arrival times and counts must be nonnegative")
        if self.jitter_ms < 0:
            raise ValueError("jitter must be nonnegative")

    @classmethod
    def from_dict(cls, obj) -> LoadScenario:
        obj = dict(obj)
        obj["arrivals"] = tuple((float(t), int(c)) for t, c in obj["arrivals"])
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arrivals"] = [list(a) for a in self.arrivals]
        return d


def poisson_scenario(rate_per_s: float, duration_s: float, seed: int = 0, burst: int = 1) -> LoadScenario:
    """Poisson arrivals of ``burst`` requests each (a batch of stores)."""
    rng = np.random.default_rng(seed)
    t, arrivals = 0.0, []
    while True:
        t += rng.exponential(1000.0 / rate_per_s)
        if t > duration_s * 1000.0:
            break
        arrivals.append((t, burst))
    return LoadScenario(tuple(arrivals), duration_s * 1000.0, seed)


@dataclass(frozen=True)
class LoadStats:
    requests: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    mean_ms: float
    cold_starts: int
    max_in_flight: int
    containers: int
    latencies: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self, with_latencies: bool = False) -> dict:
        d = asdict(self)
        if not with_latencies:
            d.pop("latencies")
        return d


def run_load(scenario: LoadScenario, model: LatencyModel = LatencyModel()) -> LoadStats:
    """Simulate the scenario; each container serves one request at a time.

    A request's service time is ``steady_latency(in_flight)`` at its arrival,
    plus ``cold_start_ms`` when no idle container exists and a new one must be
    started.  Started containers stay warm for the rest of the run.
    """
    rng = np.random.default_rng(scenario.rng_seed)
    idle = model.provisioned_concurrency
    containers = idle
    finishing: list[float] = []
    latencies: list[float] = []
    cold = max_in_flight = 0
    for t, count in scenario.arrivals:
        for _ in range(count):
            while finishing and finishing[0] <= t:
                heapq.heappop(finishing)
                idle += 1
            in_flight = len(finishing) + 1
            lat = steady_latency(in_flight, model)
            if idle > 0:
                idle -= 1
            else:
                containers += 1
                cold += 1
                lat += model.cold_start_ms
            if scenario.jitter_ms:
                lat += float(rng.uniform(0.0, scenario.jitter_ms))
            heapq.heappush(finishing, t + lat)
            latencies.append(lat)
            max_in_flight = max(max_in_flight, in_flight)
    if not latencies:
        return LoadStats(0, 0.0, 0.0, 0.0, 0.0, 0, 0, containers)
    arr = np.array(latencies)
    return LoadStats(
        requests=len(latencies),
        p50_ms=float(np.percentile(arr, 50)),
        p95_ms=float(np.percentile(arr, 95)),
        p99_ms=float(np.percentile(arr, 99)),
        mean_ms=float(arr.mean()),
        cold_starts=cold,
        max_in_flight=max_in_flight,
        containers=containers,
        latencies=tuple(latencies),
    )


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
