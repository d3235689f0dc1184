import json
import sys
import threading
from pathlib import Path

import pytest

from tooldse.bdmetrics import RDPoint, bd_result
from tooldse.evaluator import (
    CachedEvaluator,
    ConfigError,
    EvalCache,
    EvaluationError,
    Interaction,
    PipelineConfig,
    PipelineEvaluator,
    SyntheticLandscape,
    ToolEffect,
    load_evaluator,
    random_landscape,
    render_switches,
)
from tooldse.profiles import ctc_profile, toggle

from conftest import DEMO_LANDSCAPE, FIXTURES, SUBSET8


def base_points(scale=1.0):
    return [
        RDPoint(qp, 1000 * scale * 2 ** ((32 - qp) / 6), 36 + (32 - qp) * 0.4,
                36 + (32 - qp) * 0.4, 36 + (32 - qp) * 0.4, vmaf=80 + (32 - qp),
                energy_j=50 * 1.1 ** ((32 - qp) / 5))
        for qp in (22, 27, 32, 37)
    ]


def landscape(catalog, **kw):
    tools = kw.pop("tools", {
        "ALF": ToolEffect(d_log_rate=-0.02, d_log_energy=0.03, d_quality=0.05),
        "GPM": ToolEffect(d_log_energy=-0.01),
        "IBC": ToolEffect(d_log_energy=0.02),
    })
    return SyntheticLandscape(catalog, "RA", {"s1": base_points(), "s2": base_points(2)},
                              tools, **kw)


def test_ctc_maps_to_base(catalog):
    land = landscape(catalog)
    curves = land.analyze(ctc_profile(catalog, "RA"))
    assert [c.sequence for c in curves] == ["s1", "s2"]
    assert curves[0].points == tuple(sorted(base_points(), key=lambda p: p.qp))


def test_effect_directions(catalog):
    land = landscape(catalog)
    ctc = ctc_profile(catalog, "RA")
    # ALF is on under CTC: switching it off removes its energy cost
    off = land.analyze(toggle(ctc, "ALF"))[0].points[0]
    on = land.analyze(ctc)[0].points[0]
    assert off.energy_j == pytest.approx(on.energy_j * 10 ** -0.03)
    assert off.psnr_y == pytest.approx(on.psnr_y - 0.05)
    # IBC is off under CTC: switching it on adds its effect
    ibc = land.analyze(toggle(ctc, "IBC"))[0].points[0]
    assert ibc.energy_j == pytest.approx(on.energy_j * 10 ** 0.02)


def test_interaction_weight(catalog):
    inter = Interaction(("ALF", "IBC"), ToolEffect(d_log_energy=0.05))
    land = landscape(catalog, interactions=[inter])
    ctc = ctc_profile(catalog, "RA")
    assert land.shifts(ctc).d_log_energy == 0.0
    both = toggle(ctc, "IBC")
    assert land.shifts(both).d_log_energy == pytest.approx(0.02 + 0.05)


def test_landscape_json_roundtrip(catalog):
    land = landscape(catalog, interactions=[Interaction(("ALF", "GPM"), ToolEffect(d_quality=0.1))],
                     noise_stddev=0.01, seed=5)
    again = SyntheticLandscape.from_json(json.loads(json.dumps(land.to_json())), catalog)
    assert again.fingerprint() == land.fingerprint()
    p = toggle(ctc_profile(catalog, "RA"), "GPM")
    assert again.analyze(p) == land.analyze(p)


def test_noise_is_deterministic(catalog):
    a = landscape(catalog, noise_stddev=0.01, seed=3)
    b = landscape(catalog, noise_stddev=0.01, seed=3)
    c = landscape(catalog, noise_stddev=0.01, seed=4)
    p = toggle(ctc_profile(catalog, "RA"), "GPM")
    assert a.analyze(p) == b.analyze(p)
    assert a.analyze(p) != c.analyze(p)


def test_landscape_validation(catalog):
    with pytest.raises(ConfigError, match="not applicable"):
        SyntheticLandscape(catalog, "AI", {"s": base_points()}, {"GPM": ToolEffect()})
    bad = base_points()
    bad[0] = RDPoint(22, 1.0, bad[0].psnr_y, bad[0].psnr_u, bad[0].psnr_v, energy_j=50)
    with pytest.raises(ConfigError, match="non-monotone"):
        SyntheticLandscape(catalog, "RA", {"s": bad}, {})
    with pytest.raises(ConfigError, match="unknown effect keys"):
        SyntheticLandscape.from_json({"config": "RA", "base": [
            {"qp": p.qp, "rate_kbps": p.rate_kbps, "psnr_y": p.psnr_y, "energy_j": p.energy_j}
            for p in base_points()], "tools": {"ALF": {"d_energy": 1}}}, catalog)
    with pytest.raises(ConfigError, match="malformed"):
        SyntheticLandscape.from_json({"config": "RA"}, catalog)


def test_profile_config_mismatch(catalog):
    with pytest.raises(ValueError):
        landscape(catalog).analyze(ctc_profile(catalog, "LB"))


def test_missing_anchor_error_context(catalog):
    land = landscape(catalog)
    with pytest.raises(EvaluationError) as info:
        land.analyze(ctc_profile(catalog, "RA"), qps=(22, 27, 32, 42))
    assert info.value.qp == 42 and info.value.sequence == "s1"


def test_demo_landscape_loads(catalog):
    land = load_evaluator(f"synthetic:{DEMO_LANDSCAPE}", catalog, "RA")
    assert len(land.sequences) >= 2
    assert set(land.tools) == set(catalog.applicable("RA"))
    with pytest.raises(ConfigError, match="is for RA"):
        load_evaluator(f"synthetic:{DEMO_LANDSCAPE}", catalog, "LB")
    with pytest.raises(ConfigError):
        load_evaluator("magic:x", catalog, "RA")
    with pytest.raises(ConfigError):
        load_evaluator("synthetic:/nonexistent.json", catalog, "RA")


def test_random_landscape_separable(catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=1)
    ctc = ctc_profile(catalog, "RA")
    base = land.analyze(ctc)[0]
    # BDDE of a double flip equals the product of the single-flip ratios
    a, b = "ALF", "GPM"
    ra = bd_result(base, land.analyze(toggle(ctc, a))[0]).bdde_psnr
    rb = bd_result(base, land.analyze(toggle(ctc, b))[0]).bdde_psnr
    rab = bd_result(base, land.analyze(toggle(toggle(ctc, a), b))[0]).bdde_psnr
    assert 1 + rab / 100 == pytest.approx((1 + ra / 100) * (1 + rb / 100), rel=1e-9)


def test_cache_counts_and_hits(catalog):
    ev = CachedEvaluator(landscape(catalog))
    p = toggle(ctc_profile(catalog, "RA"), "GPM")
    first = ev.analyze(p)
    second = ev.analyze(p)
    assert first == second
    assert ev.profile_evaluations == 1 and ev.unique_profiles == 1
    assert ev.misses == 8 and ev.hits == 8


def test_sqlite_cache_persists(catalog, tmp_path):
    db = tmp_path / "cache.sqlite"
    p = toggle(ctc_profile(catalog, "RA"), "GPM")
    ev = CachedEvaluator(landscape(catalog), EvalCache(db))
    expected = ev.analyze(p)
    ev.cache.close()
    ev2 = CachedEvaluator(landscape(catalog), EvalCache(db))
    assert ev2.analyze(p) == expected
    assert ev2.profile_evaluations == 0 and ev2.misses == 0
    # a different landscape does not see those entries
    other = CachedEvaluator(landscape(catalog, seed=9, noise_stddev=0.01), EvalCache(db))
    other.analyze(p)
    assert other.profile_evaluations == 1


def test_cache_thread_safety(catalog):
    ev = CachedEvaluator(landscape(catalog))
    ctc = ctc_profile(catalog, "RA")
    profiles = [toggle(ctc, t) for t in ("ALF", "GPM", "IBC", "SAO")]
    errors = []

    def work():
        try:
            for p in profiles * 3:
                ev.analyze(p)
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert ev.unique_profiles == 4


# --- pipeline ----------------------------------------------------------------


def pipeline_doc(tmp_path, extra_encode="", energy=None):
    enc = f"{sys.executable} {FIXTURES / 'fake_encoder.py'} -i {{input}} -b {{output}} -q {{qp}} {{switches}}"
    doc = {
        "encode": enc + extra_encode,
        "decode": f"{sys.executable} {FIXTURES / 'fake_decoder.py'} {{input}}",
        "sequences": {"seqA": str(FIXTURES / "seq_a.yuv")},
        "workdir": str(tmp_path / "work"),
        "rename": {"DBF": "!DeblockingFilterDisable", "DQ": "DepQuant"},
        "parse": {
            "rate_kbps": r"SUMMARY\s+([\d.]+) kbps",
            "psnr_y": r"Y-PSNR ([\d.]+)",
            "psnr_u": r"U-PSNR ([\d.]+)",
            "psnr_v": r"V-PSNR ([\d.]+)",
            "vmaf": {"stage": "decode", "regex": r"VMAF score: ([\d.]+)"},
        },
        "measure": {"m_min": 2, "m_max": 5},
    }
    if energy:
        doc["energy_source"] = energy
    return doc


def test_render_switches(catalog, tmp_path):
    cfg = PipelineConfig.from_dict(pipeline_doc(tmp_path))
    args = render_switches(toggle(ctc_profile(catalog, "RA"), "DQ"), cfg)
    assert "--DeblockingFilterDisable=0" in args
    assert "--DepQuant=0" in args
    assert "--SignDataHiding=1" in args
    assert len(args) == 29


def test_pipeline_config_validation(tmp_path):
    doc = pipeline_doc(tmp_path)
    doc["encode"] = "enc {input} {output}"
    with pytest.raises(ConfigError, match="placeholder"):
        PipelineConfig.from_dict(doc)
    doc = pipeline_doc(tmp_path)
    del doc["parse"]["psnr_v"]
    with pytest.raises(ConfigError, match="psnr_v"):
        PipelineConfig.from_dict(doc)
    doc = pipeline_doc(tmp_path, energy="bogus:1")
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(doc)


def test_pipeline_toml_load(tmp_path):
    text = '''
encode = "enc -i {input} -o {output} -q {qp} {switches}"
decode = "dec {input}"
[sequences]
a = "clips/a.yuv"
[parse]
rate_kbps = 'r ([\\d.]+)'
psnr_y = 'y ([\\d.]+)'
psnr_u = 'u ([\\d.]+)'
psnr_v = 'v ([\\d.]+)'
'''
    path = tmp_path / "pipe.toml"
    path.write_text(text)
    cfg = PipelineConfig.load(path)
    assert Path(cfg.sequences["a"]) == tmp_path / "clips" / "a.yuv"


def test_pipeline_evaluates(catalog, tmp_path):
    ev = PipelineEvaluator(catalog, "RA", PipelineConfig.from_dict(
        pipeline_doc(tmp_path, energy="stub:constant,energy=40")))
    assert not ev.parallel_safe
    curves = ev.analyze(ctc_profile(catalog, "RA"))
    pts = curves[0].points
    assert [p.qp for p in pts] == [22, 27, 32, 37]
    assert all(p.energy_j == pytest.approx(40.0) for p in pts)
    assert pts[0].rate_kbps > pts[-1].rate_kbps
    assert pts[0].vmaf is not None


def test_pipeline_failure_carries_context(catalog, tmp_path):
    ev = PipelineEvaluator(catalog, "RA", PipelineConfig.from_dict(
        pipeline_doc(tmp_path, extra_encode=" --fail")))
    with pytest.raises(EvaluationError) as info:
        ev.analyze(ctc_profile(catalog, "RA"))
    err = info.value
    assert err.stage == "encode" and err.sequence == "seqA" and err.qp == 22
    assert err.profile_id.startswith("RA-")
    assert "encoder crashed" in str(err)


def test_pipeline_parse_failure(catalog, tmp_path):
    doc = pipeline_doc(tmp_path)
    doc["parse"]["rate_kbps"] = r"NOTPRESENT ([\d.]+)"
    ev = PipelineEvaluator(catalog, "RA", PipelineConfig.from_dict(doc))
    with pytest.raises(EvaluationError, match="rate_kbps"):
        ev.analyze(ctc_profile(catalog, "RA"))
