import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tooldse.bdmetrics import BDResult
from tooldse.dse import (
    DSEError,
    DSETrace,
    Evaluated,
    SensitivityCategory,
    TraceRecord,
    categorize,
    full_search,
    greedy_dse,
    pareto_front,
    select_ebe,
    select_ee,
    sensitivity,
    usage_effect,
)
from tooldse.evaluator import (
    CachedEvaluator,
    EvaluationError,
    Interaction,
    SyntheticLandscape,
    ToolEffect,
    random_landscape,
)
from tooldse.profiles import ctc_profile, profile_from_bits, toggle

from conftest import SUBSET8


def flat_landscape(catalog, config="RA"):
    land = random_landscape(catalog, config, [], seed=0)
    return land


def test_zero_delta_converges_at_iteration_one(catalog):
    res = greedy_dse(flat_landscape(catalog), tools=SUBSET8)
    assert res.iterations == 1 and res.stop_reason == "converged"
    assert res.best.profile == ctc_profile(catalog, "RA")
    assert res.best.value == 0.0


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("sequential", [False, True])
def test_greedy_finds_separable_optimum(catalog, seed, sequential):
    land = random_landscape(catalog, "RA", SUBSET8, seed=seed)
    res = greedy_dse(land, tools=SUBSET8, sequential_accept=sequential)
    oracle = full_search(land, subset=SUBSET8)
    assert res.final_reference == oracle[0].profile
    assert res.best.profile == oracle[0].profile
    assert res.iterations <= 4


@pytest.mark.parametrize("seed", range(6))
def test_call_counts(catalog, seed):
    n = len(SUBSET8)
    land = random_landscape(catalog, "RA", SUBSET8, seed=seed)
    batch = CachedEvaluator(land)
    res = greedy_dse(batch, tools=SUBSET8)
    assert res.unique_evaluations == batch.profile_evaluations
    assert res.unique_evaluations <= res.iterations * (n + 1)
    seq = greedy_dse(land, tools=SUBSET8, sequential_accept=True)
    assert seq.unique_evaluations <= 1 + seq.iterations * n


def test_trace_invariants(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=3)
    res = greedy_dse(land, tools=SUBSET8)
    recs = res.trace.records
    calls = [r.evaluator_calls for r in recs]
    assert calls == sorted(calls)
    assert calls[-1] == res.unique_evaluations
    for i in range(1, res.iterations + 1):
        it = res.trace.by_iteration(i)
        assert it[0].tool == "reference"
        assert [r.tool for r in it[1:]] == [t for t in catalog.applicable("RA") if t in SUBSET8]
    again = DSETrace.from_jsonl(res.trace.to_jsonl())
    assert again.to_jsonl() == res.trace.to_jsonl()


def test_trace_is_deterministic(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=11, noise_stddev=0.002)
    a = greedy_dse(land, tools=SUBSET8).trace.to_jsonl()
    b = greedy_dse(land, tools=SUBSET8, jobs=4).trace.to_jsonl()
    assert a == b


def test_accepted_flags_follow_reference(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=5)
    res = greedy_dse(land, tools=SUBSET8)
    first = res.trace.by_iteration(1)
    ref = first[0].objective
    for r in first[1:]:
        assert r.accepted == (r.objective < ref)


def test_batch_without_revalidation(catalog):
    # each flip helps alone, together they hurt: batch takes both anyway
    tools = {"ALF": ToolEffect(d_log_energy=-0.05), "SAO": ToolEffect(d_log_energy=-0.05)}
    inter = Interaction(("ALF", "SAO"), ToolEffect(d_log_energy=0.07))
    base = random_landscape(catalog, "RA", [], seed=1)
    land = SyntheticLandscape(catalog, "RA", {s: list(p.values()) for s, p in base.base.items()},
                              tools, [inter])
    res = greedy_dse(land, tools=["ALF", "SAO"])
    ctc = ctc_profile(catalog, "RA")
    assert res.trace.reference(2).bits == toggle(toggle(ctc, "ALF"), "SAO").bits(catalog)
    # the joint profile is worse than either single flip, so it is not returned
    assert res.best.profile in (toggle(ctc, "ALF"), toggle(ctc, "SAO"))
    assert res.stop_reason in ("break", "cycle", "converged")


@pytest.mark.parametrize("seed", range(10))
def test_never_worse_than_ctc(catalog, seed):
    land = random_landscape(catalog, "RA", SUBSET8, seed=seed, n_interactions=12,
                            interaction_scale=0.2)
    res = greedy_dse(land, tools=SUBSET8)
    assert res.best.value <= 0.0


def test_full_search_counts(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=2)
    assert len(full_search(land, subset=SUBSET8)) == 256
    assert len(full_search(land, subset=["ALF"])) == 2
    ai = random_landscape(catalog, "AI", ["ISP", "CCLM", "DQ", "MTS", "ALF", "SAO"], seed=2)
    ev = CachedEvaluator(ai)
    assert len(full_search(ev, subset=SUBSET8)) == 64
    assert ev.profile_evaluations == 64


def test_full_search_sorted_and_limited(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=4)
    res = full_search(land, subset=SUBSET8)
    keys = [e.sort_key() for e in res]
    assert keys == sorted(keys)
    with pytest.raises(DSEError, match="limit"):
        full_search(land, subset=catalog.applicable("RA")[:21])


def test_evaluation_error_propagates(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=1)
    with pytest.raises(EvaluationError):
        greedy_dse(land, tools=SUBSET8, qps=(22, 27, 32, 41))


def test_unknown_objective(catalog):
    with pytest.raises(DSEError):
        greedy_dse(flat_landscape(catalog), objective="bdr")


def test_vmaf_objective(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=7)
    res = greedy_dse(land, objective="bdde-vmaf", tools=SUBSET8)
    assert res.objective == "bdde_vmaf"
    assert res.best.value == res.best.bd.bdde_vmaf


# --- Pareto front ------------------------------------------------------------


def brute_front(points):
    out = []
    for p in points:
        dominated = any(q[0] <= p[0] and q[1] <= p[1] and q != p for q in points)
        if not dominated:
            out.append(p)
    return sorted(out)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), max_size=40))
def test_pareto_matches_brute_force(points):
    pts = [(float(a), float(b)) for a, b in points]
    assert sorted(pareto_front(pts)) == brute_front(pts)


def test_pareto_keeps_duplicates():
    pts = [(0.0, 1.0), (0.0, 1.0), (1.0, 0.0), (2.0, 2.0)]
    assert pareto_front(pts) == [(0.0, 1.0), (0.0, 1.0), (1.0, 0.0)]
    assert pareto_front([]) == []


# --- sensitivity -------------------------------------------------------------


def test_categorize_signs():
    assert categorize(4.27) is SensitivityCategory.MAJOR_INCREASE
    assert categorize(-17.29) is SensitivityCategory.MAJOR_DECREASE
    assert categorize(0.5) is SensitivityCategory.MINOR_INCREASE
    assert categorize(-1.0) is SensitivityCategory.MINOR_DECREASE
    assert categorize(0.0) is SensitivityCategory.MINOR_INCREASE
    with pytest.raises(DSEError):
        categorize(math.nan)
    assert usage_effect(3.0, True) == 3.0 and usage_effect(3.0, False) == -3.0


def _fixture_trace(catalog, config, readings):
    ctc = ctc_profile(catalog, config)
    recs = [TraceRecord(1, "reference", ctc.bits(catalog), ctc.canonical_hash(),
                        BDResult(bdr_psnr=0.0, bdde_psnr=0.0), 0.0, None, 1)]
    for k, (tool, bdde, bdr) in enumerate(readings, start=2):
        p = toggle(ctc, tool)
        recs.append(TraceRecord(1, tool, p.bits(catalog), p.canonical_hash(),
                                BDResult(bdr_psnr=bdr, bdde_psnr=bdde), bdde, bdde < 0, k))
    return DSETrace(ctc.config, recs)


def test_sensitivity_fixtures(catalog):
    lb = _fixture_trace(catalog, "LB", [("GPM", 4.27, 2.24), ("ALF", -0.4, 1.0)])
    cats = sensitivity(lb, catalog)
    assert cats["GPM"] is SensitivityCategory.MAJOR_INCREASE
    assert cats["ALF"] is SensitivityCategory.MINOR_DECREASE
    ai = _fixture_trace(catalog, "AI", [("DBF", -17.29, -0.40)])
    assert sensitivity(ai, catalog)["DBF"] is SensitivityCategory.MAJOR_DECREASE
    # a CTC-disabled tool switched on: the reading is negated
    ibc = _fixture_trace(catalog, "AI", [("IBC", 2.0, -1.0)])
    assert sensitivity(ibc, catalog)["IBC"] is SensitivityCategory.MAJOR_DECREASE


# --- EE / EBE ----------------------------------------------------------------


def _ev(catalog, bits, bdde, bdr):
    return Evaluated(profile_from_bits(catalog, "AI", bits), BDResult(bdr_psnr=bdr, bdde_psnr=bdde))


def _profiles(catalog, n):
    ctc = ctc_profile(catalog, "AI")
    names = catalog.applicable("AI")
    out = [ctc]
    for a, b in itertools.combinations(names, 2):
        out.append(toggle(toggle(ctc, a), b))
        if len(out) == n:
            break
    return [p.bits(catalog) for p in out]


def test_select_ee_and_ties(catalog):
    bits = _profiles(catalog, 4)
    evs = [_ev(catalog, bits[0], 0, 0), _ev(catalog, bits[1], -20, 15),
           _ev(catalog, bits[2], -20, 5), _ev(catalog, bits[3], -5, 1)]
    assert select_ee(evs) is evs[2]
    failed = Evaluated(evs[0].profile, None, error="boom")
    assert select_ee([failed, evs[3]]) is evs[3]
    with pytest.raises(DSEError):
        select_ee([failed])


def test_select_ebe_cap_and_shortlist(catalog):
    bits = _profiles(catalog, 6)
    evs = [
        _ev(catalog, bits[0], -40, 12),   # excluded by the cap
        _ev(catalog, bits[1], -20, 9.99),  # sum -10.01
        _ev(catalog, bits[2], -15, 2),     # sum -13
        _ev(catalog, bits[3], -12, 0),     # sum -12
        _ev(catalog, bits[4], -8, 1),      # sum -7, outside the top 3
        _ev(catalog, bits[5], -30, 10.0),  # BDR must be strictly below the cap
    ]
    sel = select_ebe(evs)
    assert [e.profile for e in sel.shortlist] == [evs[2].profile, evs[3].profile, evs[1].profile]
    assert sel.chosen is evs[2]
    with pytest.raises(DSEError, match="BDR below"):
        select_ebe(evs[:1])
    sel2 = select_ebe(evs, k=1)
    assert len(sel2.shortlist) == 1


def test_select_ebe_refines(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=21, sequences=("a", "b"))
    res = greedy_dse(land, tools=SUBSET8, sequences=["a"])
    sel = select_ebe(res.evaluated, land, sequences=["b"])
    assert len(sel.refined) == min(3, len(sel.shortlist))
    best = min(sel.refined, key=lambda e: e.value + e.bdr)
    assert sel.chosen.profile == best.profile
    doc = sel.to_json(catalog)
    assert len(doc["shortlist"]) == len(sel.shortlist)
