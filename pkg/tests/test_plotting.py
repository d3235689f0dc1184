from tooldse.dse import full_search, greedy_dse, select_ee
from tooldse.evaluator import random_landscape
from tooldse.plotting import plot_pareto, plot_search

from conftest import SUBSET8


def test_figures_are_written_and_stable(tmp_path, catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=2)
    res = greedy_dse(land, tools=SUBSET8)
    background = full_search(land, subset=SUBSET8)
    ee = select_ee(res.evaluated)
    a = plot_search(res.trace, tmp_path / "a.svg", background=background, ee=ee, ebe=ee,
                    title="search")
    b = plot_search(res.trace, tmp_path / "b.svg", background=background, ee=ee, ebe=ee,
                    title="search")
    assert a.read_bytes() == b.read_bytes()
    assert b"<svg" in a.read_bytes()
    png = plot_pareto(background, tmp_path / "front.png", title="front")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_vmaf_labels(tmp_path, catalog):
    land = random_landscape(catalog, "RA", SUBSET8, seed=2)
    res = greedy_dse(land, objective="bdde_vmaf", tools=SUBSET8)
    path = plot_search(res.trace, tmp_path / "v.svg", objective="bdde_vmaf")
    assert b"VMAF" in path.read_bytes()
