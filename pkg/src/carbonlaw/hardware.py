"""GPU catalog, carbon-per-area tables and technology projection."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

GB = 1e9
TFLOPS = 1e12

# kgCO2 per cm^2 of logic die, by process node
LOGIC_CPA = {"12nm": 1.2, "7nm": 1.6, "5nm": 1.9, "4nm": 2.1, "4NP": 2.1}
# kgCO2 per GB of memory
MEMORY_CPA = {"HBM2": 1.8, "HBM2e": 1.85, "HBM3": 1.9, "HBM3e": 1.95, "SSD": 0.018}

DEFAULT_INTERNODE_BW = 50e9  # one 400 Gb/s NIC per GPU
DEFAULT_STATIC_FRACTION = 0.842
DEFAULT_CORE_POWER_SHARE = 0.7


class HardwareError(ValueError):
    pass


@dataclass(frozen=True)
class GpuSpec:
    """One GPU generation in SI units (FLOP/s, bytes, bytes/s, W, cm^2)."""

    name: str
    peak_flops: float
    hbm_capacity: float
    hbm_bandwidth: float
    nvlink_bandwidth: float
    internode_bandwidth: float
    tdp: float
    static_fraction: float
    die_area: float
    logic_cpa: float
    hbm_cpa: float
    sram_capacity_scale: float = 1.0
    process_node: str = ""
    memory_type: str = ""
    core_power_share: float = DEFAULT_CORE_POWER_SHARE

    def __post_init__(self):
        positive = (
            "peak_flops", "hbm_capacity", "hbm_bandwidth", "nvlink_bandwidth",
            "internode_bandwidth", "tdp", "die_area", "logic_cpa", "hbm_cpa",
            "sram_capacity_scale",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise HardwareError(f"{self.name}: {name} must be positive")
        if not 0 < self.static_fraction < 1:
            raise HardwareError(f"{self.name}: static_fraction must lie in (0, 1)")
        if not 0 < self.core_power_share <= 1:
            raise HardwareError(f"{self.name}: core_power_share must lie in (0, 1]")

    @property
    def hbm_capacity_gb(self) -> float:
        return self.hbm_capacity / GB

    @property
    def static_power(self) -> float:
        return self.static_fraction * self.tdp

    @property
    def dynamic_power(self) -> float:
        return (1.0 - self.static_fraction) * self.tdp

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ScalingRates:
    """Annual multiplicative technology scaling rates."""

    core_throughput: float = 1.3
    sram: float = 1.4
    core_power: float = 1.03
    core_area: float = 1.05
    hbm_bandwidth: float = 1.25
    hbm_power: float = 1.03
    hbm_capacity: float = 1.24
    nvlink_bandwidth: float = 1.11

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise HardwareError(f"scaling rate {f.name} must be positive")


DEFAULT_RATES = ScalingRates()


def _row(name, tflops, cap_gb, bw_gbs, nvlink_gbs, tdp, area_mm2, node, mem):
    return GpuSpec(
        name=name,
        peak_flops=tflops * TFLOPS,
        hbm_capacity=cap_gb * GB,
        hbm_bandwidth=bw_gbs * GB,
        nvlink_bandwidth=nvlink_gbs * GB,
        internode_bandwidth=DEFAULT_INTERNODE_BW,
        tdp=tdp,
        static_fraction=DEFAULT_STATIC_FRACTION,
        die_area=area_mm2 / 100.0,
        logic_cpa=LOGIC_CPA[node],
        hbm_cpa=MEMORY_CPA[mem],
        process_node=node,
        memory_type=mem,
    )


_CATALOG = {
    g.name: g
    for g in (
        _row("V100", 119.2, 32, 900, 300, 250, 815, "12nm", "HBM2"),
        _row("A100", 312, 40, 1555, 600, 400, 826, "7nm", "HBM2e"),
        _row("H100", 989.4, 80, 3352, 900, 700, 814, "5nm", "HBM3"),
        _row("B100", 1980, 192, 8200, 1800, 700, 1600, "4NP", "HBM3e"),
    )
}

GENERATIONS = tuple(_CATALOG)


def builtin_gpu(name: str) -> GpuSpec:
    try:
        return _CATALOG[name]
    except KeyError:
        raise HardwareError(
            f"unknown GPU {name!r}; builtin GPUs are {', '.join(GENERATIONS)}"
        ) from None


def project(base: GpuSpec, years: float, rates: ScalingRates = DEFAULT_RATES) -> GpuSpec:
    """Extrapolate ``base`` forward by ``years`` of technology scaling.

    TDP is split into a core share and an HBM share, each scaled by its own
    power rate.  Carbon-per-area values are held at the base node.
    """
    if years < 0:
        raise HardwareError(f"years must be non-negative, got {years}")
    if years == 0:
        return base
    core_tdp = base.tdp * base.core_power_share * rates.core_power**years
    hbm_tdp = base.tdp * (1.0 - base.core_power_share) * rates.hbm_power**years
    tdp = core_tdp + hbm_tdp
    return replace(
        base,
        name=f"{base.name}+{years:g}Y",
        peak_flops=base.peak_flops * rates.core_throughput**years,
        tdp=tdp,
        core_power_share=core_tdp / tdp,
        die_area=base.die_area * rates.core_area**years,
        hbm_capacity=base.hbm_capacity * rates.hbm_capacity**years,
        hbm_bandwidth=base.hbm_bandwidth * rates.hbm_bandwidth**years,
        nvlink_bandwidth=base.nvlink_bandwidth * rates.nvlink_bandwidth**years,
        sram_capacity_scale=base.sram_capacity_scale * rates.sram**years,
    )
