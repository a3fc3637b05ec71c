"""Analytical step-time, memory and utilization model for 4D-parallel training.

Per microbatch and pipeline stage the model takes the roofline maximum of
GEMM compute and HBM traffic, then adds tensor-parallel all-reduces and
expert-parallel all-to-alls without overlap.  The data-parallel gradient
all-reduce runs once per step and may hide behind backward compute up to a
configurable fraction.  Pipeline fill/drain follows the classic
``(m + p - 1) / m`` bubble.

Each microbatch is split evenly across the expert-parallel ranks, so GEMM
efficiency, tensor-parallel all-reduce volume and activation memory use
``microbatch_tokens / n_ep`` tokens per rank.  The dispatch and combine
all-to-alls move ``k_act`` copies of those activations, sliced across the
tensor-parallel shards.  The data-parallel all-reduce hides only behind the
backward share (2/3) of the roofline stage time.

Collectives use flat per-GPU bandwidths:

    allreduce_time(V, BW, n) = 2 V (n - 1) / (n BW)
    alltoall_time(V, BW, n)  =   V (n - 1) / (n BW)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .hardware import GpuSpec
from .scaling_laws import ModelPoint

BYTES_PER_VALUE = 2  # fp16/bf16 weights and activations
GRAD_BYTES_PER_PARAM = 2
OPTIMIZER_BYTES_PER_PARAM = 12  # fp32 master copy + Adam moments


@dataclass(frozen=True)
class PerfParams:
    """Calibration and overlap knobs of the performance model."""

    gemm_k: float = float(2**22)
    dp_overlap: float = 0.5
    tp_allreduces_per_layer: int = 4
    ep_alltoalls_per_layer: int = 2
    weight_passes: float = 2.0
    activation_passes: float = 4.0
    comm_factor: float = 1.0  # < 1 models flexible sharding
    activation_factor: float = 1.0  # < 1 models dynamic eviction

    def __post_init__(self):
        if self.gemm_k <= 0:
            raise ValueError("gemm_k must be positive")
        if not 0 <= self.dp_overlap <= 1:
            raise ValueError("dp_overlap must lie in [0, 1]")
        for name in ("comm_factor", "activation_factor"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")


DEFAULT_PERF = PerfParams()


class Layout(NamedTuple):
    """Parallel decomposition plus microbatching of one global batch."""

    n_tp: int
    n_dp: int
    n_pp: int
    n_ep: int
    microbatch_tokens: int
    n_microbatches: int

    @property
    def n_gpu(self) -> int:
        return self.n_tp * self.n_dp * self.n_pp * self.n_ep


@dataclass(frozen=True)
class StepTimeBreakdown:
    """Seconds per global batch step."""

    compute_s: float
    hbm_s: float
    tp_comm_s: float
    dp_comm_s: float
    ep_comm_s: float
    pipeline_bubble_s: float
    total_s: float


@dataclass(frozen=True)
class MemoryFootprint:
    """Bytes resident on one GPU."""

    weights_bytes: float
    gradient_bytes: float
    optimizer_bytes: float
    activation_bytes: float

    @property
    def total_bytes(self) -> float:
        return self.weights_bytes + self.gradient_bytes + self.optimizer_bytes + self.activation_bytes


def allreduce_time(volume: float, bandwidth: float, n: int) -> float:
    if n <= 1:
        return 0.0
    return 2.0 * volume * (n - 1) / (n * bandwidth)


def alltoall_time(volume: float, bandwidth: float, n: int) -> float:
    if n <= 1:
        return 0.0
    return volume * (n - 1) / (n * bandwidth)


def gemm_efficiency(tokens: float, d_model: float, sram_scale: float = 1.0, k: float = DEFAULT_PERF.gemm_k) -> float:
    """Saturating GEMM efficiency; 0.5 when ``tokens * d_model == k / sram_scale``."""
    work = float(tokens) * float(d_model)
    return min(1.0, work / (work + k / sram_scale))


def params_per_rank(point: ModelPoint, plan) -> float:
    """Parameters stored on one GPU: attention shards over TP, experts over TP x EP."""
    layers = point.n_layers / plan.n_pp
    attn = point.attention_params_per_layer / plan.n_tp
    experts = point.n_experts * point.expert_params_per_layer / (plan.n_tp * plan.n_ep)
    return layers * (attn + experts)


def active_params_per_rank(point: ModelPoint, plan) -> float:
    return point.n_params_active / (plan.n_tp * plan.n_pp * plan.n_ep)


def activation_bytes_per_microbatch(point: ModelPoint, plan, perf: PerfParams = DEFAULT_PERF) -> float:
    layers = point.n_layers / plan.n_pp
    rank_tokens = plan.microbatch_tokens / plan.n_ep
    # full recomputation: layer inputs plus one working set per layer
    return BYTES_PER_VALUE * rank_tokens * point.d_model * layers * 2 * perf.activation_factor


def memory_footprint(point: ModelPoint, plan, gpu: GpuSpec = None, perf: PerfParams = DEFAULT_PERF) -> MemoryFootprint:
    n = params_per_rank(point, plan)
    return MemoryFootprint(
        weights_bytes=BYTES_PER_VALUE * n,
        gradient_bytes=GRAD_BYTES_PER_PARAM * n,
        optimizer_bytes=OPTIMIZER_BYTES_PER_PARAM * n,
        activation_bytes=activation_bytes_per_microbatch(point, plan, perf) * plan.n_pp,
    )


def step_time(point: ModelPoint, plan, gpu: GpuSpec, perf: PerfParams = DEFAULT_PERF) -> StepTimeBreakdown:
    mb = plan.microbatch_tokens
    m = plan.n_microbatches
    layers = point.n_layers / plan.n_pp
    # tokens of one microbatch handled by each expert-parallel rank
    rank_tokens = mb / plan.n_ep
    k_act = min(2, point.n_experts)
    act_volume = BYTES_PER_VALUE * rank_tokens * point.d_model * perf.comm_factor

    flops = 6.0 * active_params_per_rank(point, plan) * mb
    eff = gemm_efficiency(rank_tokens, point.d_model, gpu.sram_capacity_scale, perf.gemm_k)
    compute = flops / (gpu.peak_flops * eff)

    weight_bytes = BYTES_PER_VALUE * params_per_rank(point, plan)
    traffic = (
        perf.weight_passes * weight_bytes
        + perf.activation_passes * activation_bytes_per_microbatch(point, plan, perf)
    )
    hbm = traffic / gpu.hbm_bandwidth

    tp = perf.tp_allreduces_per_layer * layers * allreduce_time(
        2 * act_volume, gpu.nvlink_bandwidth, plan.n_tp
    )
    ep = perf.ep_alltoalls_per_layer * layers * alltoall_time(
        k_act * act_volume / plan.n_tp, gpu.internode_bandwidth, plan.n_ep
    )
    stage = max(compute, hbm) + tp + ep
    pipeline = (m + plan.n_pp - 1) * stage

    dp = allreduce_time(weight_bytes * perf.comm_factor, gpu.internode_bandwidth, plan.n_dp)
    # the gradient all-reduce can only hide behind the backward share of the roofline time
    backward = m * max(compute, hbm) * 2.0 / 3.0
    dp_residual = dp - min(perf.dp_overlap * dp, backward)

    return StepTimeBreakdown(
        compute_s=m * compute,
        hbm_s=m * hbm,
        tp_comm_s=m * tp,
        dp_comm_s=dp,
        ep_comm_s=m * ep,
        pipeline_bubble_s=(plan.n_pp - 1) * stage,
        total_s=pipeline + dp_residual,
    )


def flops_per_step(point: ModelPoint) -> float:
    return 6.0 * point.n_params_active * point.critical_batch_tokens


def utilization(point: ModelPoint, plan, breakdown: StepTimeBreakdown, gpu: GpuSpec) -> float:
    """Achieved fraction of aggregate peak FLOP/s over one step, clamped to (0, 1]."""
    n_gpu = plan.n_tp * plan.n_dp * plan.n_pp * plan.n_ep
    u = flops_per_step(point) / (n_gpu * gpu.peak_flops * breakdown.total_s)
    return min(1.0, u)
