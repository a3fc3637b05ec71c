import math
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from carbonlaw import search as search_mod
from carbonlaw.hardware import builtin_gpu
from carbonlaw.scaling_laws import model_point
from carbonlaw.search import (
    DIAGNOSTIC_COLUMNS, NoFeasiblePlan, SearchConfig, SearchError, check_plan, divisors, factorize_triples,
    feasible_plans_at, ideal_gpu_count, median_latency_plan, search,
)

from oracles import all_plans, brute_search, brute_triples, oracle_instances, synthetic_point, toy_gpu


def test_triples_of_one():
    assert factorize_triples(1) == [(1, 1, 1)]


def test_triples_of_four():
    # brute force gives 6 ordered triples: 2^2 spread over three slots is C(4, 2)
    brute = {(a, b, c) for a in range(1, 5) for b in range(1, 5) for c in range(1, 5) if a * b * c == 4}
    got = factorize_triples(4)
    assert set(got) == brute
    assert len(got) == len(brute) == 6


@pytest.mark.parametrize("p", [2, 3, 13, 61])
def test_triples_of_prime(p):
    assert len(factorize_triples(p)) == 3


@given(st.integers(1, 60))
def test_triples_match_brute_force(q):
    got = factorize_triples(q)
    assert got == brute_triples(q)
    assert len(set(got)) == len(got)


@given(st.integers(1, 10**6))
def test_divisors(n):
    ds = divisors(n)
    assert all(n % d == 0 for d in ds) and list(ds) == sorted(set(ds))
    assert len(ds) == sum(1 for k in range(1, math.isqrt(n) + 1) if n % k == 0 for _ in {k, n // k})


def _fake(compute, experts):
    return synthetic_point(64, 1, experts, 1, 1).__class__(**{
        **vars(synthetic_point(64, 1, experts, 1, 1)), "compute": compute})


def test_ideal_count_exact_fit():
    gpu = toy_gpu()
    assert ideal_gpu_count(_fake(86400 * gpu.peak_flops, 1), gpu, 86400) == 1


def test_ideal_count_rounds_to_experts():
    gpu = toy_gpu()
    assert ideal_gpu_count(_fake(10 * 86400 * gpu.peak_flops, 4), gpu, 86400) == 12


def test_ideal_count_ceiling():
    gpu = toy_gpu()
    c = 3 * 86400 * gpu.peak_flops * (1 + 1e-9)
    assert ideal_gpu_count(_fake(c, 1), gpu, 86400, round_to_experts=False) == 4


def test_tiny_model_single_gpu():
    plan = search(model_point(64), builtin_gpu("B100"))
    assert (plan.n_tp, plan.n_dp, plan.n_pp, plan.n_ep) == (1, 1, 1, 1)
    assert plan.n_gpu == 1


def test_memory_infeasible_at_cap():
    gpu = replace(builtin_gpu("A100"), hbm_capacity=1e6)
    with pytest.raises(NoFeasiblePlan, match="memory"):
        search(model_point(4736), gpu, SearchConfig(n_gpu_cap=64))


def test_triple_cap_is_an_error():
    with pytest.raises(SearchError):
        search(model_point(4736), builtin_gpu("B100"), SearchConfig(max_triples=1), method="scan")


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(deadline_s=0)
    with pytest.raises(ValueError):
        SearchConfig(step_policy="unit")


def test_matches_exhaustive_oracle():
    instances, perf = oracle_instances()
    assert len(instances) >= 50
    seen = set()
    for point, gpu, deadline in instances:
        expected = brute_search(point, gpu, deadline, perf)
        cfg = SearchConfig(deadline_s=deadline, n_gpu_cap=64)
        for method in ("indexed", "scan"):
            if expected is None:
                with pytest.raises(NoFeasiblePlan):
                    search(point, gpu, cfg, perf, method=method)
                continue
            got = search(point, gpu, cfg, perf, method=method)
            assert (got.n_gpu, got.n_tp, got.n_dp, got.n_pp, got.n_ep, got.microbatch_tokens) == (
                expected.n_gpu, expected.tp, expected.dp, expected.pp, expected.ep, expected.mb)
            assert got.duration_s == expected.duration_s
            assert got.duration_s <= deadline
        seen.add(None if expected is None else expected.n_gpu)
    assert None in seen and len(seen) > 8


@pytest.mark.parametrize("d,gpu", [(4736, "A100"), (7168, "A100"), (4736, "B100"), (7168, "B100"),
                                   (16576, "B100"), (4736, "V100")])
def test_scan_and_indexed_agree(d, gpu):
    p, g = model_point(d), builtin_gpu(gpu)
    a = search(p, g, method="indexed")
    b = search(p, g, method="scan")
    assert a == b
    check_plan(p, g, a)


def test_plan_invariants_and_determinism():
    p, g = model_point(10944), builtin_gpu("H100")
    plan = search(p, g)
    assert plan == search(p, g)
    assert plan.n_gpu == plan.n_tp * plan.n_dp * plan.n_pp * plan.n_ep
    assert (4 * p.d_model**2) % plan.n_tp == 0
    assert p.critical_batch_tokens % plan.n_dp == 0
    assert p.n_layers % plan.n_pp == 0
    assert plan.n_microbatches * plan.microbatch_tokens * plan.n_dp == p.critical_batch_tokens
    assert plan.memory.total_bytes <= g.hbm_capacity
    assert plan.duration_s <= SearchConfig().deadline_s
    assert 0 < plan.utilization <= 1


def test_diagnostics_row_count_matches_enumeration():
    instances, perf = oracle_instances()
    point, gpu, deadline = next(i for i in instances if brute_search(i[0], i[1], i[2], perf) is not None
                                and brute_search(i[0], i[1], i[2], perf).n_gpu > 8)
    cfg = SearchConfig(deadline_s=deadline, n_gpu_cap=64)
    rows = []
    plan = search(point, gpu, cfg, perf, diagnostics=lambda c: rows.append(c.row()), method="scan")
    e = point.n_experts
    start = -(-max(1, math.ceil(point.compute / (deadline * gpu.peak_flops))) // e) * e
    expected = sum(len(brute_triples(n // e)) for n in range(start, plan.n_gpu + 1, e))
    assert len(rows) == expected
    assert all(len(r) == len(DIAGNOSTIC_COLUMNS) for r in rows)
    reasons = {r[-1] for r in rows}
    assert reasons <= {"", "deadline", "memory", "too_few_microbatches",
                       "tp_divisibility", "dp_divisibility", "pp_divisibility"}


def test_median_of_single_plan_is_optimal():
    p, g = model_point(64), builtin_gpu("B100")
    assert len(feasible_plans_at(p, g, 1)) == 1
    assert median_latency_plan(p, g) == search(p, g)


def test_median_picks_middle_duration(monkeypatch):
    plans = [replace(search(model_point(64), builtin_gpu("B100")), duration_s=d) for d in (1.0, 2.0, 9.0)]
    monkeypatch.setattr(search_mod, "search", lambda *a, **k: plans[0])
    monkeypatch.setattr(search_mod, "feasible_plans_at", lambda *a, **k: plans)
    assert median_latency_plan(None, None).duration_s == 2.0


def test_median_matches_oracle():
    instances, perf = oracle_instances()
    checked = 0
    for point, gpu, deadline in instances:
        best = brute_search(point, gpu, deadline, perf)
        if best is None:
            continue
        durations = sorted(p.duration_s for p in all_plans(point, gpu, best.n_gpu, perf))
        got = median_latency_plan(point, gpu, SearchConfig(deadline_s=deadline, n_gpu_cap=64), perf)
        assert got.duration_s == durations[(len(durations) - 1) // 2]
        assert got.duration_s >= best.duration_s
        checked += 1
    assert checked >= 40
