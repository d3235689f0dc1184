"""Design space exploration over tool profiles.

The greedy search starts from the CTC profile, flips each tool once per
iteration, and keeps every flip that lowers the energy BD against the CTC
curves. Batch acceptance folds all individually improving flips into the
next reference without re-validating the combination; the loop ends when
the reference stops changing, or when no candidate beats the previous
iteration's reference.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .bdmetrics import BD_FIELDS, DEFAULT_METHOD, BDError, BDResult, bd_result, mean_result
from .evaluator import DEFAULT_QPS, CachedEvaluator, Evaluator
from .profiles import (
    CodingConfig,
    ProfileError,
    ToolCatalog,
    ToolProfile,
    ctc_profile,
    profile_from_bits,
    subset_profiles,
    toggle,
)

OBJECTIVES = {"bdde_psnr": "bdr_psnr", "bdde_vmaf": "bdr_vmaf"}
MAX_FULL_SEARCH_TOOLS = 20


class DSEError(RuntimeError):
    pass


def normalize_objective(name: str) -> str:
    key = name.lower().replace("-", "_")
    if key not in OBJECTIVES:
        raise DSEError(f"unknown objective {name!r}; use bdde-psnr or bdde-vmaf")
    return key


@dataclass(frozen=True)
class Evaluated:
    """One profile with its BD values against the CTC baseline."""

    profile: ToolProfile
    bd: BDResult | None
    objective: str = "bdde_psnr"
    error: str | None = None

    @property
    def value(self) -> float:
        v = None if self.bd is None else self.bd.get(self.objective)
        return math.inf if v is None else v

    @property
    def bdr(self) -> float:
        v = None if self.bd is None else self.bd.get(OBJECTIVES[self.objective])
        return math.inf if v is None else v

    def sort_key(self, baseline: ToolProfile | None = None) -> tuple:
        """Objective, then BDR, then fewest changes from ``baseline``, then hash."""
        flips = 0
        if baseline is not None:
            flips = sum(a[1] != b[1] for a, b in zip(self.profile.usage, baseline.usage))
        return (self.value, self.bdr, flips, self.profile.canonical_hash())


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    tool: str
    bits: str
    profile_hash: str
    bd: BDResult | None
    objective: float | None
    accepted: bool | None
    evaluator_calls: int
    error: str | None = None

    def to_json(self, config: CodingConfig) -> dict:
        values = {k: (None if self.bd is None else self.bd.get(k)) for k in BD_FIELDS}
        return {
            "iteration": self.iteration,
            "tool": self.tool,
            "config": config.value,
            "bits": self.bits,
            "profile_hash": self.profile_hash,
            **values,
            "objective": self.objective,
            "accepted": self.accepted,
            "error": self.error,
            "evaluator_calls": self.evaluator_calls,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "TraceRecord":
        values = {k: doc.get(k) for k in BD_FIELDS if doc.get(k) is not None}
        has_bd = bool(values) or doc.get("error") is None
        return cls(
            iteration=int(doc["iteration"]),
            tool=str(doc["tool"]),
            bits=str(doc["bits"]),
            profile_hash=str(doc.get("profile_hash", "")),
            bd=BDResult(**values) if has_bd else None,
            objective=doc.get("objective"),
            accepted=doc.get("accepted"),
            evaluator_calls=int(doc.get("evaluator_calls", 0)),
            error=doc.get("error"),
        )


@dataclass
class DSETrace:
    config: CodingConfig
    records: list[TraceRecord] = field(default_factory=list)

    def iterations(self) -> int:
        return max((r.iteration for r in self.records), default=0)

    def by_iteration(self, i: int) -> list[TraceRecord]:
        return [r for r in self.records if r.iteration == i]

    def reference(self, i: int) -> TraceRecord:
        for r in self.records:
            if r.iteration == i and r.tool == "reference":
                return r
        raise DSEError(f"trace has no reference record for iteration {i}")

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_json(self.config), sort_keys=True) + "\n" for r in self.records
        )

    @classmethod
    def from_jsonl(cls, text: str) -> "DSETrace":
        records, config = [], None
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                records.append(TraceRecord.from_json(doc))
            except (ValueError, KeyError) as exc:
                raise DSEError(f"trace line {lineno}: {exc}") from None
            config = config or CodingConfig.parse(doc["config"])
        if config is None:
            raise DSEError("empty trace")
        return cls(config, records)


@dataclass
class DSEResult:
    best: Evaluated
    final_reference: ToolProfile
    baseline: ToolProfile
    trace: DSETrace
    evaluated: list[Evaluated]
    iterations: int
    stop_reason: str
    objective: str
    unique_evaluations: int

    @property
    def profile(self) -> ToolProfile:
        return self.best.profile


class _Scorer:
    """Evaluates profiles and scores them against the baseline curves."""

    def __init__(self, evaluator: Evaluator, baseline: ToolProfile, objective: str,
                 method: str, qps: Sequence[int], sequences: Sequence[str] | None):
        self.evaluator = evaluator
        self.objective = objective
        self.method = method
        self.qps = tuple(qps)
        self.sequences = None if sequences is None else list(sequences)
        self.baseline_curves = evaluator.analyze(baseline, self.sequences, self.qps)

    def __call__(self, profile: ToolProfile) -> Evaluated:
        curves = self.evaluator.analyze(profile, self.sequences, self.qps)
        try:
            per_seq = [
                bd_result(ref, test, method=self.method)
                for ref, test in zip(self.baseline_curves, curves)
            ]
            bd = mean_result(per_seq)
        except BDError as exc:
            return Evaluated(profile, None, self.objective, error=str(exc))
        if bd.get(self.objective) is None:
            return Evaluated(profile, bd, self.objective,
                             error=f"curves lack data for {self.objective}")
        return Evaluated(profile, bd, self.objective)


def _cached(evaluator: Evaluator) -> CachedEvaluator:
    return evaluator if isinstance(evaluator, CachedEvaluator) else CachedEvaluator(evaluator)


def _search_tools(catalog: ToolCatalog, config: CodingConfig, tools: Iterable[str] | None,
                  drop_inapplicable: bool = False) -> list[str]:
    applicable = catalog.applicable(config)
    if tools is None:
        return applicable
    tools = list(tools)
    for t in tools:
        if t not in catalog:
            raise ProfileError(f"unknown tool {t!r}")
        if t not in applicable and not drop_inapplicable:
            raise ProfileError(f"tool {t!r} is not applicable to {config.value}")
    if len(set(tools)) != len(tools):
        raise ProfileError("duplicate tool names in subset")
    chosen = set(tools)
    # catalog order, whatever order the caller listed them in
    return [t for t in applicable if t in chosen]


def greedy_dse(
    evaluator: Evaluator,
    catalog: ToolCatalog | None = None,
    config: CodingConfig | str | None = None,
    objective: str = "bdde_psnr",
    *,
    tools: Iterable[str] | None = None,
    sequential_accept: bool = False,
    method: str = DEFAULT_METHOD,
    qps: Sequence[int] = DEFAULT_QPS,
    sequences: Sequence[str] | None = None,
    jobs: int = 1,
    max_iterations: int = 64,
    on_record: Callable[[TraceRecord], None] | None = None,
) -> DSEResult:
    """Greedy single-flip search minimising the energy BD against CTC.

    ``tools`` restricts the flipped tools (others stay at their CTC value).
    With ``sequential_accept`` an improving flip is applied immediately and
    later flips of the same iteration build on it.
    """
    catalog = catalog or evaluator.catalog
    config = CodingConfig.parse(config or evaluator.config)
    objective = normalize_objective(objective)
    names = _search_tools(catalog, config, tools)
    ev = _cached(evaluator)
    baseline = ctc_profile(catalog, config)
    score = _Scorer(ev, baseline, objective, method, qps, sequences)
    parallel = jobs > 1 and ev.parallel_safe and not sequential_accept

    trace = DSETrace(config)
    seen: dict[str, Evaluated] = {}

    def record(i, tool, ev_: Evaluated, accepted):
        h = ev_.profile.canonical_hash()
        seen.setdefault(h, ev_)
        rec = TraceRecord(
            iteration=i, tool=tool, bits=ev_.profile.bits(catalog), profile_hash=h,
            bd=ev_.bd, objective=None if ev_.error else ev_.value,
            accepted=accepted, evaluator_calls=len(seen), error=ev_.error,
        )
        trace.records.append(rec)
        if on_record is not None:
            on_record(rec)

    def evaluate(profile: ToolProfile) -> Evaluated:
        h = profile.canonical_hash()
        return seen[h] if h in seen else score(profile)

    i = 1
    reference = baseline
    ref_eval = evaluate(baseline)
    if ref_eval.error:
        raise DSEError(f"baseline profile cannot be scored: {ref_eval.error}")
    prev_ref_value: float | None = None
    visited = {reference}
    stop_reason = "max_iterations"

    while i <= max_iterations:
        ref_eval = evaluate(reference)
        record(i, "reference", ref_eval, None)
        ref_value = ref_eval.value
        candidate_values = []

        if sequential_accept:
            current, current_value = reference, ref_value
            for name in names:
                cand = evaluate(toggle(current, name))
                ok = cand.error is None and cand.value < current_value
                record(i, name, cand, ok)
                candidate_values.append(cand.value)
                if ok:
                    current, current_value = cand.profile, cand.value
            next_ref = current
        else:
            profiles = [toggle(reference, name) for name in names]
            if parallel:
                fresh = [p for p in profiles if p.canonical_hash() not in seen]
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    done = dict(zip((p.canonical_hash() for p in fresh), pool.map(score, fresh)))
                results = [seen.get(p.canonical_hash()) or done[p.canonical_hash()]
                           for p in profiles]
            else:
                results = [evaluate(p) for p in profiles]
            changes = {}
            for name, cand in zip(names, results):
                ok = cand.error is None and cand.value < ref_value
                record(i, name, cand, ok)
                candidate_values.append(cand.value)
                if ok:
                    changes[name] = cand.profile[name]
            next_ref = reference
            for name in changes:
                next_ref = toggle(next_ref, name)

        if prev_ref_value is not None and all(v >= prev_ref_value for v in candidate_values):
            stop_reason = "break"
            break
        if next_ref == reference:
            stop_reason = "converged"
            break
        if next_ref in visited:
            stop_reason = "cycle"
            break
        visited.add(next_ref)
        prev_ref_value = ref_value
        reference = next_ref
        i += 1
    else:
        i = max_iterations

    evaluated = sorted(seen.values(), key=lambda e: e.sort_key(baseline))
    return DSEResult(
        best=evaluated[0],
        final_reference=reference,
        baseline=baseline,
        trace=trace,
        evaluated=evaluated,
        iterations=i,
        stop_reason=stop_reason,
        objective=objective,
        unique_evaluations=len(seen),
    )


def full_search(
    evaluator: Evaluator,
    catalog: ToolCatalog | None = None,
    config: CodingConfig | str | None = None,
    subset: Iterable[str] = (),
    objective: str = "bdde_psnr",
    *,
    method: str = DEFAULT_METHOD,
    qps: Sequence[int] = DEFAULT_QPS,
    sequences: Sequence[str] | None = None,
    jobs: int = 1,
) -> list[Evaluated]:
    """Score every combination of ``subset`` with the other tools at CTC.

    Tools in ``subset`` that do not apply to ``config`` are dropped, so the
    same subset can be reused across configurations.
    """
    catalog = catalog or evaluator.catalog
    config = CodingConfig.parse(config or evaluator.config)
    objective = normalize_objective(objective)
    subset = list(subset)
    if len(subset) > MAX_FULL_SEARCH_TOOLS:
        raise DSEError(
            f"full search over {len(subset)} tools needs 2**{len(subset)} evaluations; "
            f"the limit is {MAX_FULL_SEARCH_TOOLS} tools"
        )
    names = _search_tools(catalog, config, subset, drop_inapplicable=True)
    ev = _cached(evaluator)
    baseline = ctc_profile(catalog, config)
    score = _Scorer(ev, baseline, objective, method, qps, sequences)
    profiles = subset_profiles(baseline, names)
    if jobs > 1 and ev.parallel_safe:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score, profiles))
    else:
        results = [score(p) for p in profiles]
    return sorted(results, key=lambda e: e.sort_key(baseline))


# --- Pareto front ------------------------------------------------------------


def _default_key(item) -> tuple[float, float]:
    if isinstance(item, Evaluated):
        return item.bdr, item.value
    return float(item[-2]), float(item[-1])


def pareto_front(items: Iterable, key: Callable | None = None) -> list:
    """Items not dominated under (minimise BDR, minimise BDDE).

    ``key`` maps an item to its ``(bdr, bdde)`` pair; by default tuples use
    their last two entries. Exact duplicates of a front point are all kept.
    The result is sorted by BDR.
    """
    key = key or _default_key
    decorated = sorted(((key(it), n, it) for n, it in enumerate(items)), key=lambda d: (d[0], d[1]))
    front = []
    best_y = math.inf
    idx = 0
    while idx < len(decorated):
        (x, y0), _, _ = decorated[idx]
        group_end = idx
        while group_end < len(decorated) and decorated[group_end][0][0] == x:
            group_end += 1
        if y0 < best_y:
            front.extend(it for (gx, gy), _, it in decorated[idx:group_end] if gy == y0)
            best_y = y0
        idx = group_end
    return front


# --- sensitivity -------------------------------------------------------------


class SensitivityCategory(str, enum.Enum):
    MAJOR_INCREASE = "MajorIncrease"
    MINOR_INCREASE = "MinorIncrease"
    MINOR_DECREASE = "MinorDecrease"
    MAJOR_DECREASE = "MajorDecrease"


def usage_effect(toggle_bdde: float, initially_enabled: bool) -> float:
    """Efficiency effect of *using* a tool from its single-flip BDDE reading.

    Disabling an enabled tool: a positive BDDE means the tool saved energy.
    Enabling a disabled tool: the reading is negated for the same meaning.
    """
    return toggle_bdde if initially_enabled else -toggle_bdde


def categorize(effect: float, threshold: float = 1.0) -> SensitivityCategory:
    if not math.isfinite(effect):
        raise DSEError(f"cannot categorize non-finite effect {effect}")
    minor = abs(effect) <= threshold
    if effect >= 0:
        return SensitivityCategory.MINOR_INCREASE if minor else SensitivityCategory.MAJOR_INCREASE
    return SensitivityCategory.MINOR_DECREASE if minor else SensitivityCategory.MAJOR_DECREASE


def sensitivity(
    trace: DSETrace,
    catalog: ToolCatalog,
    config: CodingConfig | str | None = None,
    objective: str = "bdde_psnr",
    threshold: float = 1.0,
) -> dict[str, SensitivityCategory]:
    config = CodingConfig.parse(config or trace.config)
    objective = normalize_objective(objective)
    ref = trace.reference(1)
    baseline = profile_from_bits(catalog, config, ref.bits)
    out = {}
    for rec in trace.by_iteration(1):
        if rec.tool == "reference":
            continue
        reading = None if rec.bd is None else rec.bd.get(objective)
        if reading is None:
            raise DSEError(f"iteration-1 record for {rec.tool} has no {objective} value")
        out[rec.tool] = categorize(usage_effect(reading, baseline[rec.tool]), threshold)
    if not out:
        raise DSEError("trace has no iteration-1 candidate records")
    return out


# --- EE / EBE selection ------------------------------------------------------


def select_ee(evaluated: Sequence[Evaluated], baseline: ToolProfile | None = None) -> Evaluated:
    """Lowest energy BD; ties go to lower BDR, then to the profile closest to
    ``baseline``, then to the lower profile hash."""
    usable = [e for e in evaluated if e.error is None]
    if not usable:
        raise DSEError("no successfully evaluated profiles to select from")
    return min(usable, key=lambda e: e.sort_key(baseline))


@dataclass(frozen=True)
class EBESelection:
    chosen: Evaluated
    shortlist: tuple[Evaluated, ...]
    refined: tuple[Evaluated, ...]

    def to_json(self, catalog: ToolCatalog) -> dict:
        def row(pre: Evaluated, post: Evaluated) -> dict:
            return {
                "profile_id": pre.profile.profile_id(catalog),
                "bdr": pre.bdr, "bdde": pre.value,
                "refined_bdr": post.bdr, "refined_bdde": post.value,
            }

        return {"shortlist": [row(a, b) for a, b in zip(self.shortlist, self.refined)]}


def _ebe_key(e: Evaluated) -> tuple:
    return (e.value + e.bdr, e.value, e.profile.canonical_hash())


def select_ebe(
    evaluated: Sequence[Evaluated],
    refine: Evaluator | None = None,
    *,
    bdr_cap: float = 10.0,
    k: int = 3,
    method: str = DEFAULT_METHOD,
    qps: Sequence[int] = DEFAULT_QPS,
    sequences: Sequence[str] | None = None,
) -> EBESelection:
    """Joint energy/bit-rate pick with an optional refinement pass.

    Keep profiles whose BDR is strictly below ``bdr_cap``, shortlist the
    ``k`` with the lowest BDDE + BDR, re-score the shortlist with ``refine``
    (a different sequence set, say) and return the refined minimum.
    """
    usable = [e for e in evaluated if e.error is None and e.bdr < bdr_cap]
    if not usable:
        raise DSEError(
            f"no evaluated profile has BDR below {bdr_cap}; raise the cap (--bdr-cap)"
        )
    shortlist = tuple(sorted(usable, key=_ebe_key)[:k])
    if refine is None:
        refined = shortlist
    else:
        objective = shortlist[0].objective
        catalog = refine.catalog
        baseline = ctc_profile(catalog, shortlist[0].profile.config)
        score = _Scorer(_cached(refine), baseline, objective, method, qps, sequences)
        refined = tuple(score(e.profile) for e in shortlist)
    ok = [r for r in refined if r.error is None]
    if not ok:
        raise DSEError("every shortlisted profile failed during refinement")
    chosen = min(ok, key=_ebe_key)
    return EBESelection(chosen, shortlist, refined)
