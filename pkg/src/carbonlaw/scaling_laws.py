"""Chinchilla-style scaling pipeline.

Starting from the hidden dimension alone, derive the rest of the transformer
architecture (FFN width, depth, expert count), count its parameters, and size
the compute-optimal training run: dataset tokens, FLOPs, predicted loss and
critical batch size.

Parameter counting convention: attention contributes ``4 * d_model**2`` per
layer and each expert FFN ``2 * d_model * d_ff``; embeddings and norms are
ignored.  Compute and loss use the *active* parameter count (top-k routing),
memory uses the total count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

D_MODEL_ALIGN = 64


class ScalingError(ValueError):
    """Invalid architecture request or a non-representable result."""


@dataclass(frozen=True)
class ScalingConstants:
    """Every coefficient of the scaling pipeline; all overridable."""

    loss_coeff_a: float = 406.4
    loss_coeff_b: float = 410.7
    loss_floor: float = 1.69
    params_exponent: float = 0.34
    data_exponent: float = 0.28
    tokens_per_param: int = 20
    flops_per_param_token: int = 6
    batch_exponent: float = 1.0 / 6.0
    batch_ref_tokens: float = 1.5e6
    compute_ref: float = 5.88e23
    active_experts: int = 2
    experts_ref: int = 8
    d_model_ref: int = 12288
    layer_coeff: float = 0.402
    layer_exponent: float = 0.75
    ffn_ratio: int = 4


DEFAULT_CONSTANTS = ScalingConstants()


@dataclass(frozen=True)
class ModelPoint:
    """One point on the scaling curve.

    Training fields stay ``None`` until :func:`derive_training_requirements`
    fills them in.
    """

    d_model: int
    d_ff: int
    n_layers: int
    n_experts: int
    seq_len: int
    n_params: Optional[int] = None
    n_params_active: Optional[int] = None
    dataset_tokens: Optional[int] = None
    compute: Optional[float] = None
    predicted_loss: Optional[float] = None
    critical_batch_tokens: Optional[int] = None

    @property
    def attention_params_per_layer(self) -> int:
        return 4 * self.d_model * self.d_model

    @property
    def expert_params_per_layer(self) -> int:
        """Parameters of a single expert FFN in one layer."""
        return 2 * self.d_model * self.d_ff

    @property
    def total_steps(self) -> float:
        return self.dataset_tokens / self.critical_batch_tokens


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def round_to_multiple(value: float, multiple: int) -> int:
    """Nearest positive multiple of ``multiple`` (never below one multiple)."""
    return max(1, _round_half_up(value / multiple)) * multiple


def n_layers_for(d_model: int, consts: ScalingConstants = DEFAULT_CONSTANTS) -> int:
    return max(1, _round_half_up(consts.layer_coeff * d_model ** consts.layer_exponent))


def n_experts_for(d_model: int, consts: ScalingConstants = DEFAULT_CONSTANTS) -> int:
    # exact rational half-up rounding of experts_ref * d_model / d_model_ref
    num = consts.experts_ref * d_model
    den = consts.d_model_ref
    return max(1, (2 * num + den) // (2 * den))


def derive_architecture(
    d_model: int, seq_len: int, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> ModelPoint:
    if not isinstance(d_model, int) or isinstance(d_model, bool):
        raise ScalingError(f"d_model must be an integer, got {d_model!r}")
    if d_model < D_MODEL_ALIGN or d_model % D_MODEL_ALIGN:
        raise ScalingError(
            f"d_model={d_model} must be >= {D_MODEL_ALIGN} and a multiple of {D_MODEL_ALIGN}"
        )
    if not isinstance(seq_len, int) or seq_len < 1:
        raise ScalingError(f"seq_len must be a positive integer, got {seq_len!r}")
    return ModelPoint(
        d_model=d_model,
        d_ff=consts.ffn_ratio * d_model,
        n_layers=n_layers_for(d_model, consts),
        n_experts=n_experts_for(d_model, consts),
        seq_len=seq_len,
    )


def count_parameters(
    arch: ModelPoint, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> tuple[int, int]:
    """Return ``(n_params, n_params_active)`` using exact integer arithmetic."""
    k_act = min(consts.active_experts, arch.n_experts)
    attn = arch.attention_params_per_layer
    expert = arch.expert_params_per_layer
    n_params = arch.n_layers * (attn + arch.n_experts * expert)
    n_active = arch.n_layers * (attn + k_act * expert)
    try:
        float(n_params)
    except OverflowError as exc:
        raise ScalingError(
            f"parameter count for d_model={arch.d_model} overflows a float"
        ) from exc
    return n_params, n_active


def critical_batch_tokens(
    compute: float, seq_len: int, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> int:
    raw = consts.batch_ref_tokens * (compute / consts.compute_ref) ** consts.batch_exponent
    return round_to_multiple(raw, seq_len)


def predicted_loss(
    n_params: float, dataset_tokens: float, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> float:
    return (
        consts.loss_coeff_a * float(n_params) ** -consts.params_exponent
        + consts.loss_coeff_b * float(dataset_tokens) ** -consts.data_exponent
        + consts.loss_floor
    )


def derive_training_requirements(
    point: ModelPoint, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> ModelPoint:
    if point.n_params is None or point.n_params_active is None:
        n_params, n_active = count_parameters(point, consts)
        point = replace(point, n_params=n_params, n_params_active=n_active)
    n_active = point.n_params_active
    tokens = consts.tokens_per_param * n_active
    try:
        compute = float(consts.flops_per_param_token) * float(n_active) * float(tokens)
    except OverflowError as exc:
        raise ScalingError(f"compute for d_model={point.d_model} overflows a float") from exc
    if not math.isfinite(compute):
        raise ScalingError(f"compute for d_model={point.d_model} overflows a float")
    return replace(
        point,
        dataset_tokens=tokens,
        compute=compute,
        predicted_loss=predicted_loss(n_active, tokens, consts),
        critical_batch_tokens=critical_batch_tokens(compute, point.seq_len, consts),
    )


def model_point(
    d_model: int, seq_len: int = 2048, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> ModelPoint:
    """Fully populated point for a single ``d_model``."""
    arch = derive_architecture(d_model, seq_len, consts)
    n_params, n_active = count_parameters(arch, consts)
    arch = replace(arch, n_params=n_params, n_params_active=n_active)
    return derive_training_requirements(arch, consts)


def sweep(
    d_models: Sequence[int], seq_len: int = 2048, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> list[ModelPoint]:
    d_models = list(d_models)
    if not d_models:
        raise ScalingError("d_model sweep is empty")
    for lo, hi in zip(d_models, d_models[1:]):
        if hi <= lo:
            raise ScalingError(f"d_model sweep must be strictly increasing ({lo} -> {hi})")
    points = []
    for d in d_models:
        try:
            points.append(model_point(d, seq_len, consts))
        except ScalingError as exc:
            raise ScalingError(f"d_model={d}: {exc}") from exc
    return points


def with_batch_exponent(
    point: ModelPoint, exponent: float, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> ModelPoint:
    """Recompute the critical batch of a populated point under another exponent."""
    consts = replace(consts, batch_exponent=exponent)
    return replace(
        point, critical_batch_tokens=critical_batch_tokens(point.compute, point.seq_len, consts)
    )


def geometric_d_models(start: int, stop: int, count: int) -> list[int]:
    """``count`` geometrically spaced hidden sizes, aligned to 64."""
    if count < 1:
        raise ScalingError("count must be >= 1")
    if count == 1:
        return [round_to_multiple(start, D_MODEL_ALIGN)]
    ratio = (stop / start) ** (1.0 / (count - 1))
    out = [round_to_multiple(start * ratio**i, D_MODEL_ALIGN) for i in range(count)]
    if len(set(out)) != len(out):
        raise ScalingError(f"range {start}..{stop} too narrow for {count} aligned points")
    return out


def d_model_for_active_params(
    target: float, seq_len: int = 2048, consts: ScalingConstants = DEFAULT_CONSTANTS
) -> int:
    """Smallest aligned ``d_model`` whose active parameter count reaches ``target``."""
    lo, hi = 1, 1
    while count_parameters(derive_architecture(hi * D_MODEL_ALIGN, seq_len, consts), consts)[1] < target:
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        n_active = count_parameters(derive_architecture(mid * D_MODEL_ALIGN, seq_len, consts), consts)[1]
        if n_active < target:
            lo = mid + 1
        else:
            hi = mid
    return lo * D_MODEL_ALIGN


def points_summary(points: Iterable[ModelPoint]) -> list[dict]:
    return [
        {
            "d_model": p.d_model,
            "n_layers": p.n_layers,
            "n_experts": p.n_experts,
            "n_params": p.n_params,
            "n_params_active": p.n_params_active,
            "dataset_tokens": p.dataset_tokens,
            "compute": p.compute,
            "predicted_loss": p.predicted_loss,
            "critical_batch_tokens": p.critical_batch_tokens,
        }
        for p in points
    ]
