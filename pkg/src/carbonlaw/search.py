"""Minimum-GPU, minimum-duration search over (TP, DP, PP, EP) layouts.

GPU counts are visited upward from the ideal count in steps of the expert
count (expert parallelism is pinned to ``E``).  For every count, all ordered
``(tp, dp, pp)`` factorizations of ``n_gpu / E`` are tried; the first count
whose fastest layout meets the deadline wins.

Two equivalent engines are provided:

``scan``
    The literal loop: factorize every candidate count.  Emits a diagnostics
    row for every triple, including the ones rejected by divisibility.
``indexed``
    Enumerates only triples that already satisfy divisibility (divisors of
    ``4 d_model^2``, the batch and the layer count) and merges them in
    increasing product order with a heap.  Counts with no valid triple are
    skipped in O(1), which makes billion-GPU searches tractable.
"""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional

from .hardware import GpuSpec
from .perf_model import (
    DEFAULT_PERF,
    Layout,
    MemoryFootprint,
    PerfParams,
    StepTimeBreakdown,
    memory_footprint,
    step_time,
    utilization,
)
from .scaling_laws import ModelPoint

SECONDS_PER_DAY = 86400.0
THREE_MONTHS_S = 90 * SECONDS_PER_DAY
MAX_TRIPLES_PER_COUNT = 10**6

DIAGNOSTIC_COLUMNS = (
    "n_gpu", "n_tp", "n_dp", "n_pp", "n_ep", "microbatch_tokens",
    "duration_s", "feasible", "reject_reason",
)


class SearchError(RuntimeError):
    pass


class NoFeasiblePlan(SearchError):
    """No layout meets the deadline and memory limits below the GPU cap."""


@dataclass(frozen=True)
class SearchConfig:
    deadline_s: float = THREE_MONTHS_S
    n_gpu_cap: Optional[int] = None  # None means 2**50 * E
    step_policy: str = "multiples_of_ep"
    max_triples: int = MAX_TRIPLES_PER_COUNT

    def __post_init__(self):
        if not self.deadline_s > 0:
            raise ValueError("deadline_s must be positive")
        if self.step_policy != "multiples_of_ep":
            raise ValueError(f"unknown step_policy {self.step_policy!r}")
        if self.n_gpu_cap is not None and self.n_gpu_cap < 1:
            raise ValueError("n_gpu_cap must be positive")

    def cap_for(self, n_experts: int) -> int:
        return self.n_gpu_cap if self.n_gpu_cap is not None else 2**50 * n_experts


@dataclass(frozen=True)
class ParallelismPlan:
    n_gpu: int
    n_tp: int
    n_dp: int
    n_pp: int
    n_ep: int
    microbatch_tokens: int
    n_microbatches: int
    duration_s: float
    utilization: float
    memory: MemoryFootprint
    breakdown: StepTimeBreakdown = field(repr=False, compare=False)

    @property
    def layout(self) -> Layout:
        return Layout(self.n_tp, self.n_dp, self.n_pp, self.n_ep,
                      self.microbatch_tokens, self.n_microbatches)

    @property
    def key(self) -> tuple:
        """Deterministic tie-break order."""
        return (self.duration_s, self.n_gpu, self.n_tp, self.n_pp, self.n_dp)


@dataclass(frozen=True)
class Candidate:
    n_gpu: int
    n_tp: int
    n_dp: int
    n_pp: int
    n_ep: int
    microbatch_tokens: int = 0
    duration_s: float = math.nan
    feasible: bool = False
    reject_reason: str = ""
    plan: Optional[ParallelismPlan] = None

    def row(self) -> tuple:
        return (self.n_gpu, self.n_tp, self.n_dp, self.n_pp, self.n_ep,
                self.microbatch_tokens, self.duration_s, self.feasible, self.reject_reason)


@lru_cache(maxsize=4096)
def _factorize(n: int) -> tuple[tuple[int, int], ...]:
    out = []
    p = 2
    while p * p <= n:
        if n % p == 0:
            e = 0
            while n % p == 0:
                n //= p
                e += 1
            out.append((p, e))
        p += 1 if p == 2 else 2
    if n > 1:
        out.append((n, 1))
    return tuple(out)


@lru_cache(maxsize=4096)
def divisors(n: int) -> tuple[int, ...]:
    """Sorted positive divisors of ``n``."""
    if n < 1:
        raise ValueError("n must be positive")
    divs = [1]
    for p, e in _factorize(n):
        divs = [d * p**k for d in divs for k in range(e + 1)]
    return tuple(sorted(divs))


def factorize_triples(q: int) -> list[tuple[int, int, int]]:
    """All ordered ``(n_tp, n_dp, n_pp)`` with product ``q``, sorted by (tp, pp, dp)."""
    if q < 1:
        raise ValueError("q must be positive")
    out = []
    for tp in divisors(q):
        rest = q // tp
        for pp in divisors(rest):
            out.append((tp, rest // pp, pp))
    return out


def ideal_gpu_count(point: ModelPoint, gpu: GpuSpec, deadline_s: float, round_to_experts: bool = True) -> int:
    if not deadline_s > 0:
        raise ValueError("deadline must be positive")
    n = max(1, math.ceil(point.compute / (deadline_s * gpu.peak_flops)))
    if round_to_experts:
        e = point.n_experts
        n = -(-n // e) * e
    return n


def _reject(n_gpu, tp, dp, pp, ep, reason, mb=0) -> Candidate:
    return Candidate(n_gpu, tp, dp, pp, ep, microbatch_tokens=mb, reject_reason=reason)


def divisibility_reason(point: ModelPoint, tp: int, dp: int, pp: int) -> str:
    if point.attention_params_per_layer % tp:
        return "tp_divisibility"
    if point.critical_batch_tokens % dp:
        return "dp_divisibility"
    if point.n_layers % pp:
        return "pp_divisibility"
    return ""


def choose_microbatch(point: ModelPoint, gpu: GpuSpec, tp: int, dp: int, pp: int, ep: int,
                      perf: PerfParams = DEFAULT_PERF) -> tuple[int, str]:
    """Largest divisor of the per-rank batch with ``m >= pp`` that fits memory.

    Returns ``(microbatch_tokens, reject_reason)``; the token count is 0 when
    nothing fits.
    """
    per_rank = point.critical_batch_tokens // dp
    if per_rank < pp:
        return 0, "too_few_microbatches"
    probe = Layout(tp, dp, pp, ep, 1, per_rank)
    mem = memory_footprint(point, probe, gpu, perf)
    static = mem.total_bytes - mem.activation_bytes
    if static > gpu.hbm_capacity:
        return 0, "memory"
    per_token = mem.activation_bytes  # activation bytes scale linearly with tokens
    limit = per_rank // pp
    if per_token > 0:
        limit = min(limit, int((gpu.hbm_capacity - static) // per_token))
    if limit < 1:
        return 0, "memory"
    divs = divisors(per_rank)
    i = bisect.bisect_right(divs, limit) - 1
    mb = divs[i]
    # guard against rounding in the closed-form bound
    while i >= 0:
        mb = divs[i]
        trial = Layout(tp, dp, pp, ep, mb, per_rank // mb)
        if memory_footprint(point, trial, gpu, perf).total_bytes <= gpu.hbm_capacity:
            return mb, ""
        i -= 1
    return 0, "memory"


def evaluate(point: ModelPoint, gpu: GpuSpec, tp: int, dp: int, pp: int, ep: int,
             deadline_s: float, perf: PerfParams = DEFAULT_PERF) -> Candidate:
    """Check constraints for one layout and time it when it is valid."""
    n_gpu = tp * dp * pp * ep
    reason = divisibility_reason(point, tp, dp, pp)
    if reason:
        return _reject(n_gpu, tp, dp, pp, ep, reason)
    mb, reason = choose_microbatch(point, gpu, tp, dp, pp, ep, perf)
    if reason:
        return _reject(n_gpu, tp, dp, pp, ep, reason)
    layout = Layout(tp, dp, pp, ep, mb, point.critical_batch_tokens // (dp * mb))
    breakdown = step_time(point, layout, gpu, perf)
    duration = point.total_steps * breakdown.total_s
    plan = ParallelismPlan(
        n_gpu=n_gpu, n_tp=tp, n_dp=dp, n_pp=pp, n_ep=ep,
        microbatch_tokens=mb, n_microbatches=layout.n_microbatches,
        duration_s=duration,
        utilization=utilization(point, layout, breakdown, gpu),
        memory=memory_footprint(point, layout, gpu, perf),
        breakdown=breakdown,
    )
    ok = duration <= deadline_s
    return Candidate(n_gpu, tp, dp, pp, ep, mb, duration, ok, "" if ok else "deadline", plan)


def check_plan(point: ModelPoint, gpu: GpuSpec, plan: ParallelismPlan) -> None:
    """Re-assert every structural invariant of a returned plan."""
    assert plan.n_gpu == plan.n_tp * plan.n_dp * plan.n_pp * plan.n_ep
    assert point.attention_params_per_layer % plan.n_tp == 0
    assert point.critical_batch_tokens % plan.n_dp == 0
    assert point.n_layers % plan.n_pp == 0
    assert plan.n_microbatches * plan.microbatch_tokens * plan.n_dp == point.critical_batch_tokens
    assert plan.n_microbatches >= plan.n_pp
    assert plan.memory.total_bytes <= gpu.hbm_capacity


def _best(cands: Iterable[Candidate]) -> Optional[ParallelismPlan]:
    plans = [c.plan for c in cands if c.feasible]
    return min(plans, key=lambda p: p.key) if plans else None


def _scan_groups(point, gpu, cfg, perf):
    e = point.n_experts
    cap = cfg.cap_for(e)
    n_gpu = ideal_gpu_count(point, gpu, cfg.deadline_s)
    while n_gpu <= cap:
        triples = factorize_triples(n_gpu // e)
        if len(triples) > cfg.max_triples:
            raise SearchError(f"{len(triples)} triples at n_gpu={n_gpu} exceed the enumeration cap")
        yield n_gpu, [evaluate(point, gpu, tp, dp, pp, e, cfg.deadline_s, perf)
                      for tp, dp, pp in triples]
        n_gpu += e


def _indexed_groups(point, gpu, cfg, perf):
    e = point.n_experts
    q_max = cfg.cap_for(e) // e
    q0 = ideal_gpu_count(point, gpu, cfg.deadline_s) // e
    tps = divisors(point.attention_params_per_layer)
    pps = divisors(point.n_layers)
    dps = divisors(point.critical_batch_tokens)
    heap = []
    for tp in tps:
        for pp in pps:
            base = tp * pp
            i = bisect.bisect_left(dps, -(-q0 // base))
            if i < len(dps) and base * dps[i] <= q_max:
                heap.append((base * dps[i], tp, pp, i))
    heapq.heapify(heap)
    while heap:
        q = heap[0][0]
        group = []
        while heap and heap[0][0] == q:
            _, tp, pp, i = heapq.heappop(heap)
            group.append((tp, dps[i], pp))
            if i + 1 < len(dps) and tp * pp * dps[i + 1] <= q_max:
                heapq.heappush(heap, (tp * pp * dps[i + 1], tp, pp, i + 1))
        if len(group) > cfg.max_triples:
            raise SearchError(f"{len(group)} triples at n_gpu={q * e} exceed the enumeration cap")
        group.sort(key=lambda t: (t[0], t[2], t[1]))
        yield q * e, [evaluate(point, gpu, tp, dp, pp, e, cfg.deadline_s, perf)
                      for tp, dp, pp in group]


_ENGINES = {"indexed": _indexed_groups, "scan": _scan_groups}

DiagnosticsSink = Callable[[Candidate], None]


def search(point: ModelPoint, gpu: GpuSpec, cfg: SearchConfig = SearchConfig(),
           perf: PerfParams = DEFAULT_PERF, diagnostics: Optional[DiagnosticsSink] = None,
           method: str = "indexed") -> ParallelismPlan:
    """Smallest GPU count (multiple of E) with a layout finishing within the deadline."""
    try:
        groups = _ENGINES[method](point, gpu, cfg, perf)
    except KeyError:
        raise ValueError(f"unknown search method {method!r}") from None
    memory_rejects = 0
    for n_gpu, cands in groups:
        if diagnostics is not None:
            for c in cands:
                diagnostics(c)
        memory_rejects += sum(c.reject_reason == "memory" for c in cands)
        best = _best(cands)
        if best is not None:
            check_plan(point, gpu, best)
            return best
    raise NoFeasiblePlan(
        f"d_model={point.d_model} on {gpu.name}: no layout within "
        f"{cfg.deadline_s:.6g} s up to {cfg.cap_for(point.n_experts)} GPUs "
        f"({memory_rejects} candidates rejected for memory)"
    )


def feasible_plans_at(point: ModelPoint, gpu: GpuSpec, n_gpu: int, cfg: SearchConfig = SearchConfig(),
                      perf: PerfParams = DEFAULT_PERF) -> list[ParallelismPlan]:
    """Every memory-feasible layout at a fixed GPU count, regardless of deadline."""
    e = point.n_experts
    if n_gpu % e:
        raise ValueError(f"n_gpu={n_gpu} is not a multiple of E={e}")
    plans = []
    for tp, dp, pp in factorize_triples(n_gpu // e):
        c = evaluate(point, gpu, tp, dp, pp, e, cfg.deadline_s, perf)
        if c.plan is not None:
            plans.append(c.plan)
    return sorted(plans, key=lambda p: p.key)


def median_latency_plan(point: ModelPoint, gpu: GpuSpec, cfg: SearchConfig = SearchConfig(),
                        perf: PerfParams = DEFAULT_PERF) -> ParallelismPlan:
    """Lower-median-duration layout at the optimal GPU count."""
    best = search(point, gpu, cfg, perf)
    plans = feasible_plans_at(point, gpu, best.n_gpu, cfg, perf)
    return plans[(len(plans) - 1) // 2]
