"""Bjøntegaard-Delta metrics over operating curves.

The generic ``bd_delta`` works on any positive cost axis, so the same code
yields bit-rate deltas (BDR) and decoding-energy deltas (BDDE), against
either PSNR_YUV or VMAF as the quality axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

CSV_HEADER = (
    "profile_id",
    "config",
    "sequence",
    "qp",
    "rate_kbps",
    "psnr_y",
    "psnr_u",
    "psnr_v",
    "vmaf",
    "energy_j",
    "time_s",
)

METHODS = ("pchip", "poly")
DEFAULT_METHOD = "pchip"


class BDError(ValueError):
    """Invalid curve data or an undefined BD integral."""


def psnr_yuv(y: float, u: float, v: float) -> float:
    """Luma-weighted PSNR, 6:1:1 over Y, U, V."""
    if not all(math.isfinite(c) for c in (y, u, v)):
        raise BDError(f"PSNR components must be finite, got ({y}, {u}, {v})")
    return (6.0 * y + u + v) / 8.0


@dataclass(frozen=True)
class RDPoint:
    qp: int
    rate_kbps: float
    psnr_y: float
    psnr_u: float
    psnr_v: float
    vmaf: float | None = None
    energy_j: float | None = None
    time_s: float | None = None

    def __post_init__(self):
        if not self.rate_kbps > 0:
            raise BDError(f"QP {self.qp}: rate must be positive, got {self.rate_kbps}")
        if self.energy_j is not None and not self.energy_j > 0:
            raise BDError(f"QP {self.qp}: energy must be positive, got {self.energy_j}")
        if not all(math.isfinite(c) for c in (self.psnr_y, self.psnr_u, self.psnr_v)):
            raise BDError(f"QP {self.qp}: PSNR components must be finite")
        if self.vmaf is not None and not 0.0 <= self.vmaf <= 100.0:
            raise BDError(f"QP {self.qp}: VMAF {self.vmaf} outside [0, 100]")

    @property
    def psnr_yuv(self) -> float:
        return psnr_yuv(self.psnr_y, self.psnr_u, self.psnr_v)

    def cost(self, axis: str) -> float | None:
        if axis == "rate":
            return self.rate_kbps
        if axis == "energy":
            return self.energy_j
        if axis == "time":
            return self.time_s
        raise BDError(f"unknown cost axis {axis!r}")

    def quality(self, axis: str) -> float | None:
        if axis == "psnr":
            return self.psnr_yuv
        if axis == "vmaf":
            return self.vmaf
        raise BDError(f"unknown quality axis {axis!r}")


@dataclass(frozen=True)
class RDCurve:
    profile_id: str
    points: tuple[RDPoint, ...]
    sequence: str = ""

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.qp))
        qps = [p.qp for p in pts]
        if len(set(qps)) != len(qps):
            raise BDError(f"curve {self.label}: duplicate QPs {qps}")
        if len(pts) < 4:
            raise BDError(f"curve {self.label}: need at least 4 points, got {len(pts)}")
        object.__setattr__(self, "points", pts)

    @property
    def label(self) -> str:
        return f"{self.profile_id}/{self.sequence}" if self.sequence else self.profile_id

    def pairs(self, cost: str, quality: str) -> list[tuple[float, float]]:
        out = []
        for p in self.points:
            c, q = p.cost(cost), p.quality(quality)
            if c is None or q is None:
                raise BDError(f"curve {self.label}: QP {p.qp} has no {cost}/{quality} value")
            out.append((c, q))
        return out

    def has(self, cost: str, quality: str) -> bool:
        return all(p.cost(cost) is not None and p.quality(quality) is not None for p in self.points)

    def relabel(self, profile_id: str) -> "RDCurve":
        return replace(self, profile_id=profile_id)


# --- interpolation -----------------------------------------------------------


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def _pchip_slopes(x: Sequence[float], y: Sequence[float]) -> list[float]:
    """Shape-preserving Fritsch-Carlson derivatives with three-point ends."""
    n = len(x)
    h = [x[k + 1] - x[k] for k in range(n - 1)]
    delta = [(y[k + 1] - y[k]) / h[k] for k in range(n - 1)]
    d = [0.0] * n
    for k in range(1, n - 1):
        if delta[k - 1] * delta[k] > 0:
            w1 = 2 * h[k] + h[k - 1]
            w2 = h[k] + 2 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])
    for end, h0, h1, m0, m1 in ((0, h[0], h[1], delta[0], delta[1]),
                                (n - 1, h[-1], h[-2], delta[-1], delta[-2])):
        dk = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
        if _sign(dk) != _sign(m0):
            dk = 0.0
        elif _sign(m0) != _sign(m1) and abs(dk) > abs(3 * m0):
            dk = 3 * m0
        d[end] = dk
    return d


def _pchip_integral(x: Sequence[float], y: Sequence[float], lo: float, hi: float) -> float:
    d = _pchip_slopes(x, y)
    total = 0.0
    for k in range(len(x) - 1):
        a, b = max(lo, x[k]), min(hi, x[k + 1])
        if b <= a:
            continue
        h = x[k + 1] - x[k]
        delta = (y[k + 1] - y[k]) / h
        # local cubic y + c1 t + c2 t^2 + c3 t^3 with t = x - x[k]
        c0, c1 = y[k], d[k]
        c2 = (3 * delta - 2 * d[k] - d[k + 1]) / h
        c3 = (d[k] + d[k + 1] - 2 * delta) / (h * h)
        ta, tb = a - x[k], b - x[k]
        total += (tb * (c0 + tb * (c1 / 2 + tb * (c2 / 3 + tb * c3 / 4)))
                  - ta * (c0 + ta * (c1 / 2 + ta * (c2 / 3 + ta * c3 / 4))))
    return total


def _poly_integral(x: Sequence[float], y: Sequence[float], lo: float, hi: float) -> float:
    # Centring keeps the Vandermonde system well conditioned at PSNR ~ 40 dB.
    xa = np.asarray(x)
    centre = 0.5 * (x[0] + x[-1])
    coeffs = np.polyfit(xa - centre, np.asarray(y), 3)
    prim = np.polyint(coeffs)
    return float(np.polyval(prim, hi - centre) - np.polyval(prim, lo - centre))


def _prepare(points: Sequence[tuple[float, float]], label: str) -> tuple[list[float], list[float]]:
    if len(points) < 4:
        raise BDError(f"curve {label}: need at least 4 points, got {len(points)}")
    pts = sorted((float(q), float(c)) for c, q in points)
    qual = [q for q, _ in pts]
    cost = [c for _, c in pts]
    if not all(math.isfinite(v) for v in qual + cost):
        raise BDError(f"curve {label}: non-finite values")
    if min(cost) <= 0:
        raise BDError(f"curve {label}: costs must be positive")
    for k in range(len(pts) - 1):
        if qual[k + 1] <= qual[k] or cost[k + 1] <= cost[k]:
            raise BDError(
                f"curve {label}: non-monotone (cost must strictly increase with quality)"
            )
    return qual, [math.log10(c) for c in cost]


def bd_delta(
    ref: Sequence[tuple[float, float]],
    test: Sequence[tuple[float, float]],
    method: str = DEFAULT_METHOD,
    *,
    ref_label: str = "ref",
    test_label: str = "test",
) -> float:
    """Average cost difference of ``test`` vs ``ref`` at equal quality, in percent.

    Both inputs are ``(cost, quality)`` pairs. Negative means ``test`` is
    cheaper. Integration runs over the shared quality interval only.
    """
    detail = bd_delta_detail(ref, test, method, ref_label=ref_label, test_label=test_label)
    return detail[0]


def bd_delta_detail(
    ref: Sequence[tuple[float, float]],
    test: Sequence[tuple[float, float]],
    method: str = DEFAULT_METHOD,
    *,
    ref_label: str = "ref",
    test_label: str = "test",
) -> tuple[float, tuple[float, float]]:
    if method not in METHODS:
        raise BDError(f"unknown interpolation method {method!r}; use one of {METHODS}")
    q_ref, l_ref = _prepare(ref, ref_label)
    q_test, l_test = _prepare(test, test_label)
    lo = max(q_ref[0], q_test[0])
    hi = min(q_ref[-1], q_test[-1])
    if not hi > lo:
        raise BDError(
            f"empty overlap of quality ranges between {ref_label} "
            f"[{q_ref[0]:.4g}, {q_ref[-1]:.4g}] and {test_label} "
            f"[{q_test[0]:.4g}, {q_test[-1]:.4g}]"
        )
    integrate = _pchip_integral if method == "pchip" else _poly_integral
    mean_diff = (integrate(q_test, l_test, lo, hi) - integrate(q_ref, l_ref, lo, hi)) / (hi - lo)
    value = (10.0 ** mean_diff - 1.0) * 100.0
    if not math.isfinite(value):
        raise BDError(f"non-finite BD value between {ref_label} and {test_label}")
    return value, (float(lo), float(hi))


# --- four-way results --------------------------------------------------------

BD_FIELDS = ("bdr_psnr", "bdde_psnr", "bdr_vmaf", "bdde_vmaf")
_AXES = {
    "bdr_psnr": ("rate", "psnr"),
    "bdde_psnr": ("energy", "psnr"),
    "bdr_vmaf": ("rate", "vmaf"),
    "bdde_vmaf": ("energy", "vmaf"),
}


@dataclass(frozen=True)
class BDResult:
    """Signed percentages; a field is ``None`` when its axes were not available."""

    bdr_psnr: float | None = None
    bdde_psnr: float | None = None
    bdr_vmaf: float | None = None
    bdde_vmaf: float | None = None
    overlap: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def get(self, name: str) -> float | None:
        if name not in BD_FIELDS:
            raise KeyError(name)
        return getattr(self, name)

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in BD_FIELDS}
        out["overlap"] = {k: list(v) for k, v in self.overlap.items()}
        return out


def bd_result(
    ref: RDCurve,
    test: RDCurve,
    cost_axis: str | Iterable[str] = ("rate", "energy"),
    method: str = DEFAULT_METHOD,
    quality: str | Iterable[str] = ("psnr", "vmaf"),
    strict: bool = False,
) -> BDResult:
    """Compute every available (cost, quality) delta of ``test`` against ``ref``.

    Combinations lacking data on either curve are left as ``None`` unless
    ``strict`` is set, in which case they raise.
    """
    costs = {cost_axis} if isinstance(cost_axis, str) else set(cost_axis)
    quals = {quality} if isinstance(quality, str) else set(quality)
    values: dict = {}
    overlap: dict = {}
    for name, (c, q) in _AXES.items():
        if c not in costs or q not in quals:
            continue
        if not (ref.has(c, q) and test.has(c, q)):
            if strict:
                raise BDError(f"{name}: curves lack {c}/{q} data")
            continue
        values[name], overlap[name] = bd_delta_detail(
            ref.pairs(c, q), test.pairs(c, q), method,
            ref_label=ref.label, test_label=test.label,
        )
    return BDResult(**values, overlap=overlap)


def mean_result(results: Sequence[BDResult]) -> BDResult:
    """Unweighted mean of each delta over the results that report it."""
    if not results:
        raise BDError("cannot average an empty list of BD results")
    if len(results) == 1:
        return results[0]
    values = {}
    for name in BD_FIELDS:
        got = [r.get(name) for r in results]
        if all(v is not None for v in got):
            values[name] = math.fsum(got) / len(got)
    return BDResult(**values)


def aggregate_bd(
    per_sequence: Mapping[str, BDResult], grouping: Mapping[str, str]
) -> tuple[dict[str, BDResult], BDResult]:
    """Per-class means plus the set mean over all sequences.

    The set mean averages the per-sequence values, so classes with more
    sequences weigh more, which is how class tables are usually summarised.
    """
    if not per_sequence:
        raise BDError("no sequences to aggregate")
    classes: dict[str, list[BDResult]] = {}
    for seq, res in per_sequence.items():
        if seq not in grouping:
            raise BDError(f"sequence {seq!r} has no class assignment")
        classes.setdefault(grouping[seq], []).append(res)
    for cls, members in classes.items():
        if not members:
            raise BDError(f"class {cls!r} is empty")
    class_means = {cls: mean_result(members) for cls, members in sorted(classes.items())}
    return class_means, mean_result(list(per_sequence.values()))


# --- CSV I/O -----------------------------------------------------------------


def _opt_float(text: str) -> float | None:
    text = text.strip()
    return float(text) if text else None


def read_rd_csv(path) -> dict[tuple[str, str], RDCurve]:
    """Load curves keyed by ``(profile_id, sequence)``."""
    rows: dict[tuple[str, str], list[RDPoint]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [h for h in CSV_HEADER if h not in (reader.fieldnames or [])]
        if missing:
            raise BDError(f"{path}: missing CSV columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                point = RDPoint(
                    qp=int(row["qp"]),
                    rate_kbps=float(row["rate_kbps"]),
                    psnr_y=float(row["psnr_y"]),
                    psnr_u=float(row["psnr_u"]),
                    psnr_v=float(row["psnr_v"]),
                    vmaf=_opt_float(row["vmaf"]),
                    energy_j=_opt_float(row["energy_j"]),
                    time_s=_opt_float(row["time_s"]),
                )
            except ValueError as exc:
                raise BDError(f"{path}:{lineno}: {exc}") from None
            rows.setdefault((row["profile_id"], row["sequence"]), []).append(point)
    return {
        key: RDCurve(profile_id=key[0], points=tuple(pts), sequence=key[1])
        for key, pts in rows.items()
    }


def write_rd_csv(path, curves: Iterable[RDCurve], config: str = "") -> None:
    def fmt(v):
        return "" if v is None else repr(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for curve in curves:
            for p in curve.points:
                writer.writerow([
                    curve.profile_id, config, curve.sequence, p.qp, fmt(p.rate_kbps),
                    fmt(p.psnr_y), fmt(p.psnr_u), fmt(p.psnr_v),
                    fmt(p.vmaf), fmt(p.energy_j), fmt(p.time_s),
                ])
