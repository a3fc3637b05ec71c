"""Operational and embodied training carbon.

Operational GPU carbon follows a static + utilization-scaled dynamic power
model; host systems (CPU, DRAM, SSD, NIC, fans) draw a flat power per node.
Embodied carbon amortizes manufacturing emissions of every component by the
fraction of its lifetime spent on the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .hardware import GpuSpec, MEMORY_CPA
from .scaling_laws import ModelPoint

SECONDS_PER_YEAR = 365 * 86400.0
J_PER_KWH = 3.6e6
G_PER_T = 1e6
KG_PER_T = 1e3


@dataclass(frozen=True)
class CarbonParams:
    pue: float = 1.1
    carbon_intensity: float = 127.0  # gCO2e/kWh
    lifetime_s: float = 5 * SECONDS_PER_YEAR
    gpus_per_node: int = 8
    node_ssd_gb: float = 32768.0
    node_dram_gb: float = 256.0
    p_sys: float = 600.0  # W per node
    dram_cpa: float = 1.8  # kgCO2/GB
    cpu_area_cm2: float = 6.0
    ssd_cpa: float = MEMORY_CPA["SSD"]
    alpha: float = 1.0
    embodied_enabled: bool = True

    def __post_init__(self):
        if self.pue < 1:
            raise ValueError("pue must be >= 1")
        for name in ("carbon_intensity", "lifetime_s", "gpus_per_node", "node_ssd_gb",
                     "node_dram_gb", "p_sys", "dram_cpa", "cpu_area_cm2", "ssd_cpa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")


DEFAULT_CARBON = CarbonParams()


@dataclass(frozen=True)
class CarbonReport:
    """Training emissions in tCO2e."""

    op_gpu_t: float
    op_other_t: float
    emb_gpu_logic_t: float
    emb_hbm_t: float
    emb_cpu_t: float
    emb_dram_t: float
    emb_ssd_t: float
    duration_s: float
    n_gpu: int
    utilization: float

    @property
    def operational_t(self) -> float:
        return self.op_gpu_t + self.op_other_t

    @property
    def embodied_t(self) -> float:
        return self.emb_gpu_logic_t + self.emb_hbm_t + self.emb_cpu_t + self.emb_dram_t + self.emb_ssd_t

    @property
    def total_t(self) -> float:
        return self.operational_t + self.embodied_t

    @property
    def per_gpu_t(self) -> float:
        """GPU-attributable carbon (GPU power, die, HBM) per device."""
        return (self.op_gpu_t + self.emb_gpu_logic_t + self.emb_hbm_t) / self.n_gpu

    @property
    def per_gpu_embodied_share(self) -> float:
        own = self.op_gpu_t + self.emb_gpu_logic_t + self.emb_hbm_t
        return (self.emb_gpu_logic_t + self.emb_hbm_t) / own if own > 0 else 0.0

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(emb_total_t=self.embodied_t, total_t=self.total_t)
        return d


def n_nodes(n_gpu: int, params: CarbonParams = DEFAULT_CARBON) -> int:
    return math.ceil(n_gpu / params.gpus_per_node)


def _grams(watts: float, seconds: float, params: CarbonParams) -> float:
    return watts * seconds / J_PER_KWH * params.pue * params.carbon_intensity


def gpu_power(gpu: GpuSpec, utilization: float, params: CarbonParams = DEFAULT_CARBON) -> float:
    return gpu.static_power + params.alpha * gpu.dynamic_power * utilization


def operational_carbon(plan, gpu: GpuSpec, params: CarbonParams = DEFAULT_CARBON) -> tuple[float, float]:
    """``(op_gpu_t, op_other_t)`` for a plan with ``n_gpu``, ``duration_s``, ``utilization``."""
    op_gpu = plan.n_gpu * _grams(gpu_power(gpu, plan.utilization, params), plan.duration_s, params)
    op_other = n_nodes(plan.n_gpu, params) * _grams(params.p_sys, plan.duration_s, params)
    return op_gpu / G_PER_T, op_other / G_PER_T


def embodied_carbon(plan, gpu: GpuSpec, params: CarbonParams = DEFAULT_CARBON) -> dict[str, float]:
    share = plan.duration_s / params.lifetime_s
    nodes = n_nodes(plan.n_gpu, params)
    kg = {
        "emb_gpu_logic_t": plan.n_gpu * gpu.die_area * gpu.logic_cpa,
        "emb_hbm_t": plan.n_gpu * gpu.hbm_capacity_gb * gpu.hbm_cpa,
        "emb_cpu_t": nodes * params.cpu_area_cm2 * gpu.logic_cpa,
        "emb_dram_t": nodes * params.node_dram_gb * params.dram_cpa,
        "emb_ssd_t": nodes * params.node_ssd_gb * params.ssd_cpa,
    }
    if not params.embodied_enabled:
        return {k: 0.0 for k in kg}
    return {k: v * share / KG_PER_T for k, v in kg.items()}


def total_carbon(plan, gpu: GpuSpec, params: CarbonParams = DEFAULT_CARBON) -> CarbonReport:
    op_gpu, op_other = operational_carbon(plan, gpu, params)
    return CarbonReport(
        op_gpu_t=op_gpu,
        op_other_t=op_other,
        duration_s=plan.duration_s,
        n_gpu=plan.n_gpu,
        utilization=plan.utilization,
        **embodied_carbon(plan, gpu, params),
    )


def ideal_carbon(point: ModelPoint, gpu: GpuSpec, params: CarbonParams = DEFAULT_CARBON,
                 deadline_s: float = 90 * 86400.0) -> float:
    """Minimal GPUs at peak throughput and full TDP; no host power, no embodied."""
    n = max(1, math.ceil(point.compute / (deadline_s * gpu.peak_flops)))
    duration = point.compute / (n * gpu.peak_flops)
    return n * _grams(gpu.tdp, duration, params) / G_PER_T


def ideal_report(point: ModelPoint, gpu: GpuSpec, params: CarbonParams = DEFAULT_CARBON,
                 deadline_s: float = 90 * 86400.0) -> CarbonReport:
    n = max(1, math.ceil(point.compute / (deadline_s * gpu.peak_flops)))
    return CarbonReport(
        op_gpu_t=ideal_carbon(point, gpu, params, deadline_s), op_other_t=0.0,
        emb_gpu_logic_t=0.0, emb_hbm_t=0.0, emb_cpu_t=0.0, emb_dram_t=0.0, emb_ssd_t=0.0,
        duration_s=point.compute / (n * gpu.peak_flops), n_gpu=n, utilization=1.0,
    )


def swap_static(gpu: GpuSpec) -> GpuSpec:
    """Exchange the static and dynamic shares of TDP."""
    return replace(gpu, static_fraction=1.0 - gpu.static_fraction)
