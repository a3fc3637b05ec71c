"""End-to-end experiment curves and the loss-versus-carbon power-law fit."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .carbon import DEFAULT_CARBON, CarbonParams, CarbonReport, ideal_report, swap_static, total_carbon
from .hardware import DEFAULT_RATES, GpuSpec, ScalingRates, builtin_gpu, project
from .perf_model import DEFAULT_PERF, PerfParams
from .scaling_laws import DEFAULT_CONSTANTS, ModelPoint, ScalingConstants, with_batch_exponent
from .search import NoFeasiblePlan, ParallelismPlan, SearchConfig, median_latency_plan, search

DEFAULT_BATCH_EXPONENT = 1.0 / 6.0
AGGRESSIVE_BATCH_EXPONENT = 0.33
# factors used when flexible sharding / dynamic eviction are switched on
SHARDING_COMM_FACTOR = 0.8
EVICTION_MEM_FACTOR = 0.8

CSV_COLUMNS = (
    "d_model", "N", "D", "C", "loss", "n_gpu", "n_tp", "n_dp", "n_pp", "n_ep",
    "duration_s", "utilization", "op_gpu_t", "op_other_t", "emb_total_t", "total_t",
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Toggles and coefficients defining one experiment curve."""

    name: str = "default"
    gpu: str = "B100"
    years: float = 0.0
    embodied_enabled: bool = True
    static_swap: bool = False
    ideal_mode: bool = False
    median_parallelism: bool = False
    batch_exponent: float = DEFAULT_BATCH_EXPONENT
    sharding_comm_factor: float = 1.0
    eviction_mem_factor: float = 1.0

    def __post_init__(self):
        if self.years < 0:
            raise ValueError("years must be non-negative")
        if not 0 < self.batch_exponent < 1:
            raise ValueError("batch_exponent must lie in (0, 1)")
        for name in ("sharding_comm_factor", "eviction_mem_factor"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass(frozen=True)
class Context:
    """Shared, immutable inputs of a scenario run."""

    carbon: CarbonParams = DEFAULT_CARBON
    search: SearchConfig = SearchConfig()
    perf: PerfParams = DEFAULT_PERF
    rates: ScalingRates = DEFAULT_RATES
    consts: ScalingConstants = DEFAULT_CONSTANTS
    custom_gpus: Mapping[str, GpuSpec] = field(default_factory=dict)

    def base_gpu(self, name: str) -> GpuSpec:
        if name in self.custom_gpus:
            return self.custom_gpus[name]
        return builtin_gpu(name)


@dataclass(frozen=True)
class ScenarioRow:
    point: ModelPoint
    plan: Optional[ParallelismPlan]
    report: Optional[CarbonReport]
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.report is not None

    def csv_row(self) -> dict:
        p, plan, r = self.point, self.plan, self.report
        row = {
            "d_model": p.d_model, "N": p.n_params_active, "D": p.dataset_tokens,
            "C": p.compute, "loss": p.predicted_loss,
        }
        if plan is not None:
            row.update(n_gpu=plan.n_gpu, n_tp=plan.n_tp, n_dp=plan.n_dp,
                       n_pp=plan.n_pp, n_ep=plan.n_ep)
        elif r is not None:
            row.update(n_gpu=r.n_gpu)
        if r is not None:
            row.update(duration_s=r.duration_s, utilization=r.utilization,
                       op_gpu_t=r.op_gpu_t, op_other_t=r.op_other_t,
                       emb_total_t=r.embodied_t, total_t=r.total_t)
        return row


@dataclass(frozen=True)
class PowerLawFit:
    k: float
    alpha_exp: float
    r_squared: float
    n_points: int
    degenerate: bool = False


def scenario_gpu(scenario: ScenarioConfig, ctx: Context) -> GpuSpec:
    gpu = project(ctx.base_gpu(scenario.gpu), scenario.years, ctx.rates)
    return swap_static(gpu) if scenario.static_swap else gpu


def evaluate_point(point: ModelPoint, scenario: ScenarioConfig, ctx: Context) -> ScenarioRow:
    point = with_batch_exponent(point, scenario.batch_exponent, ctx.consts)
    gpu = scenario_gpu(scenario, ctx)
    params = replace(ctx.carbon, embodied_enabled=scenario.embodied_enabled)
    if scenario.ideal_mode:
        return ScenarioRow(point, None, ideal_report(point, gpu, params, ctx.search.deadline_s))
    perf = replace(ctx.perf,
                   comm_factor=ctx.perf.comm_factor * scenario.sharding_comm_factor,
                   activation_factor=ctx.perf.activation_factor * scenario.eviction_mem_factor)
    finder = median_latency_plan if scenario.median_parallelism else search
    try:
        plan = finder(point, gpu, ctx.search, perf)
    except NoFeasiblePlan as exc:
        return ScenarioRow(point, None, None, str(exc))
    return ScenarioRow(point, plan, total_carbon(plan, gpu, params))


def _evaluate_star(args):
    return evaluate_point(*args)


def run_scenario(points: Sequence[ModelPoint], scenario: ScenarioConfig,
                 ctx: Context = Context(), workers: int = 1) -> list[ScenarioRow]:
    """Evaluate every sweep point; output order follows the sweep."""
    if not points:
        raise ValueError("sweep is empty")
    jobs = [(p, scenario, ctx) for p in points]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_evaluate_star, jobs))
    return [evaluate_point(*job) for job in jobs]


def fit_power_law(points: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least squares of ``ln loss = ln k - alpha ln CO``."""
    if len(points) < 3:
        raise ValueError(f"need at least 3 points, got {len(points)}")
    co = np.array([c for c, _ in points], dtype=float)
    loss = np.array([l for _, l in points], dtype=float)
    if np.any(co <= 0) or np.any(loss <= 0):
        raise ValueError("carbon and loss must be strictly positive")
    x, y = np.log(co), np.log(loss)
    slope, intercept = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0 or float(np.ptp(x)) == 0.0:
        return PowerLawFit(k=float(np.exp(y.mean())), alpha_exp=0.0, r_squared=0.0,
                           n_points=len(points), degenerate=True)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    return PowerLawFit(k=float(math.exp(intercept)), alpha_exp=float(-slope),
                       r_squared=min(1.0, max(0.0, r2)), n_points=len(points))


def fit_rows(rows: Sequence[ScenarioRow]) -> PowerLawFit:
    """Fit over the points whose search succeeded."""
    return fit_power_law([(r.report.total_t, r.point.predicted_loss) for r in rows if r.ok])


def compare_generations(points: Sequence[ModelPoint], gpu_names: Sequence[str],
                        ctx: Context = Context(), workers: int = 1) -> dict[str, list[ScenarioRow]]:
    return {name: run_scenario(points, ScenarioConfig(name=name, gpu=name), ctx, workers)
            for name in gpu_names}


def generation_breakdown(rows_by_gpu: Mapping[str, Sequence[ScenarioRow]], index: int) -> list[dict]:
    """Per-GPU and total carbon at one sweep index, one dict per generation."""
    out = []
    for name, rows in rows_by_gpu.items():
        row = rows[index]
        r = row.report
        entry = {"gpu": name, "d_model": row.point.d_model, "N": row.point.n_params_active}
        if r is not None:
            entry.update(
                n_gpu=r.n_gpu, utilization=r.utilization, total_t=r.total_t,
                operational_t=r.operational_t, embodied_t=r.embodied_t,
                per_gpu_t=r.per_gpu_t,
                per_gpu_op_t=r.op_gpu_t / r.n_gpu,
                per_gpu_emb_t=(r.emb_gpu_logic_t + r.emb_hbm_t) / r.n_gpu,
                per_gpu_embodied_share=r.per_gpu_embodied_share,
            )
        out.append(entry)
    return out


def compare_futures(points: Sequence[ModelPoint], base_gpu: str, years_list: Sequence[float],
                    ctx: Context = Context(), workers: int = 1) -> dict[float, list[ScenarioRow]]:
    return {y: run_scenario(points, ScenarioConfig(name=f"{base_gpu}+{y:g}Y", gpu=base_gpu, years=y),
                            ctx, workers)
            for y in years_list}


def standard_scenarios(gpu: str = "B100") -> list[ScenarioConfig]:
    """The experiment families: ideal, default, ablations, algorithm advances, futures."""
    return [
        ScenarioConfig(name="ideal", gpu=gpu, ideal_mode=True),
        ScenarioConfig(name=gpu, gpu=gpu),
        ScenarioConfig(name="no_emb", gpu=gpu, embodied_enabled=False),
        ScenarioConfig(name="low_static", gpu=gpu, static_swap=True),
        ScenarioConfig(name="median", gpu=gpu, median_parallelism=True),
        ScenarioConfig(name="batch_0.33", gpu=gpu, batch_exponent=AGGRESSIVE_BATCH_EXPONENT),
        ScenarioConfig(name="sharding", gpu=gpu, sharding_comm_factor=SHARDING_COMM_FACTOR),
        ScenarioConfig(name="eviction", gpu=gpu, eviction_mem_factor=EVICTION_MEM_FACTOR),
        ScenarioConfig(name=f"{gpu}+4Y", gpu=gpu, years=4),
        ScenarioConfig(name=f"{gpu}+8Y", gpu=gpu, years=8),
        ScenarioConfig(name=f"{gpu}+8Y_batch_0.33", gpu=gpu, years=8,
                       batch_exponent=AGGRESSIVE_BATCH_EXPONENT),
    ]
