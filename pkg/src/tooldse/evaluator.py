"""Profile evaluators: turn a tool profile into per-sequence operating curves.

Three flavours share one interface:

* :class:`SyntheticLandscape` - a closed-form stand-in for real encodes,
  used for tests, demos and optimality studies.
* :class:`PipelineEvaluator` - drives external encoder/decoder commands and
  parses their logs, optionally measuring decode energy.
* :class:`CachedEvaluator` - wraps either one with a persistent point cache.
"""

from __future__ import annotations

import hashlib
import json
import re
import shlex
import sqlite3
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bdmetrics import BDError, RDCurve, RDPoint
from .measurement import (
    ConfidenceParams,
    MeasurementError,
    measure_until_confident,
    parse_source,
)
from .profiles import (
    CodingConfig,
    ProfileError,
    ToolCatalog,
    ToolProfile,
    builtin_catalog,
    ctc_profile,
    derived_switches,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_QPS = (22, 27, 32, 37)


class EvaluationError(RuntimeError):
    """An evaluation failed; carries enough context to find the failing run."""

    def __init__(self, message, *, profile_id=None, stage=None, sequence=None, qp=None):
        where = ", ".join(
            f"{k}={v}" for k, v in
            (("profile", profile_id), ("stage", stage), ("sequence", sequence), ("qp", qp))
            if v is not None
        )
        super().__init__(f"{message} [{where}]" if where else message)
        self.profile_id = profile_id
        self.stage = stage
        self.sequence = sequence
        self.qp = qp


class ConfigError(ValueError):
    """Invalid evaluator configuration (landscape spec or pipeline config)."""


class Evaluator:
    """Base class. Subclasses implement :meth:`_analyze_point`."""

    #: Pure evaluators may be called from several threads at once.
    parallel_safe = True

    def __init__(self, catalog: ToolCatalog, config: CodingConfig, sequences: Sequence[str]):
        self.catalog = catalog
        self.config = CodingConfig.parse(config)
        self.sequences = tuple(sequences)
        self._lock = threading.Lock()

    def fingerprint(self) -> str:
        raise NotImplementedError

    def analyze(
        self,
        profile: ToolProfile,
        sequences: Sequence[str] | None = None,
        qps: Sequence[int] = DEFAULT_QPS,
    ) -> list[RDCurve]:
        sequences = list(self.sequences if sequences is None else sequences)
        if not sequences:
            raise ValueError("at least one sequence is required")
        if not qps:
            raise ValueError("at least one QP is required")
        if profile.config != self.config:
            raise ProfileError(
                f"profile is for {profile.config.value}, evaluator for {self.config.value}"
            )
        if self.parallel_safe:
            return [self._curve(profile, s, qps) for s in sequences]
        with self._lock:
            return [self._curve(profile, s, qps) for s in sequences]

    def _curve(self, profile, sequence, qps) -> RDCurve:
        pid = profile.profile_id(self.catalog)
        points = [self._analyze_point(profile, sequence, qp) for qp in qps]
        try:
            return RDCurve(pid, tuple(points), sequence)
        except BDError as exc:
            raise EvaluationError(str(exc), profile_id=pid, stage="curve", sequence=sequence)

    def _analyze_point(self, profile: ToolProfile, sequence: str, qp: int) -> RDPoint:
        raise NotImplementedError


# --- synthetic landscape -----------------------------------------------------


@dataclass(frozen=True)
class ToolEffect:
    d_log_rate: float = 0.0
    d_log_energy: float = 0.0
    d_quality: float = 0.0
    d_vmaf: float | None = None
    d_log_time: float | None = None

    @property
    def vmaf_shift(self) -> float:
        return self.d_quality if self.d_vmaf is None else self.d_vmaf

    @property
    def time_shift(self) -> float:
        return self.d_log_energy if self.d_log_time is None else self.d_log_time

    def to_json(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class Interaction:
    tools: tuple[str, str]
    effect: ToolEffect


def _check_base(name: str, points: Sequence[RDPoint]) -> None:
    try:
        RDCurve("base", tuple(points), name)
    except BDError as exc:
        raise ConfigError(f"base curve {name!r}: {exc}") from None
    pts = sorted(points, key=lambda p: p.psnr_yuv)
    for attr in ("rate_kbps", "energy_j"):
        vals = [getattr(p, attr) for p in pts]
        if any(v is None for v in vals):
            raise ConfigError(f"base curve {name!r}: every point needs {attr}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError(
                f"base curve {name!r}: non-monotone, {attr} must increase with PSNR_YUV"
            )
    q = [p.psnr_yuv for p in pts]
    if any(b <= a for a, b in zip(q, q[1:])):
        raise ConfigError(f"base curve {name!r}: PSNR_YUV values must be distinct")
    if all(p.vmaf is not None for p in pts):
        v = [p.vmaf for p in pts]
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ConfigError(f"base curve {name!r}: non-monotone VMAF")


class SyntheticLandscape(Evaluator):
    """Log-domain additive model around the CTC profile.

    Each tool carries effects that apply in proportion to how far its bit is
    from the CTC default: enabling a CTC-disabled tool adds the effect,
    disabling a CTC-enabled tool subtracts it. The CTC profile therefore maps
    exactly onto the base curves. Interaction terms add their effect scaled by
    ``u_a*u_b - ctc_a*ctc_b``.
    """

    def __init__(
        self,
        catalog: ToolCatalog,
        config: CodingConfig | str,
        base: Mapping[str, Sequence[RDPoint]],
        tools: Mapping[str, ToolEffect],
        interactions: Sequence[Interaction] = (),
        noise_stddev: float = 0.0,
        seed: int = 0,
    ):
        super().__init__(catalog, config, list(base))
        applicable = set(catalog.applicable(self.config))
        for name in tools:
            if name not in applicable:
                raise ConfigError(f"tool {name!r} is unknown or not applicable to {self.config.value}")
        for inter in interactions:
            for name in inter.tools:
                if name not in applicable:
                    raise ConfigError(f"interaction tool {name!r} not applicable to {self.config.value}")
        if noise_stddev < 0:
            raise ConfigError("noise_stddev must be non-negative")
        for name, pts in base.items():
            _check_base(name, pts)
        self.base = {name: {p.qp: p for p in pts} for name, pts in base.items()}
        self.tools = dict(tools)
        self.interactions = tuple(interactions)
        self.noise_stddev = float(noise_stddev)
        self.seed = int(seed)
        self.ctc = ctc_profile(catalog, self.config).tools

    def shifts(self, profile: ToolProfile) -> ToolEffect:
        """Total log-rate, log-energy, quality, VMAF and log-time shifts."""
        usage = profile.tools
        acc = [0.0] * 5
        terms = [(int(usage[n]) - int(self.ctc[n]), e) for n, e in self.tools.items()]
        for inter in self.interactions:
            a, b = inter.tools
            w = int(usage[a] and usage[b]) - int(self.ctc[a] and self.ctc[b])
            terms.append((w, inter.effect))
        for w, e in terms:
            if w:
                for k, v in enumerate((e.d_log_rate, e.d_log_energy, e.d_quality,
                                       e.vmaf_shift, e.time_shift)):
                    acc[k] += w * v
        return ToolEffect(*acc)

    def _noise(self, profile: ToolProfile, sequence: str, qp: int) -> float:
        if self.noise_stddev == 0.0:
            return 0.0
        key = f"{self.seed}|{profile.canonical_hash()}|{sequence}|{qp}".encode()
        rng = np.random.default_rng(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))
        return float(rng.normal(0.0, self.noise_stddev))

    def _analyze_point(self, profile, sequence, qp):
        pid = profile.profile_id(self.catalog)
        try:
            base = self.base[sequence][qp]
        except KeyError:
            raise EvaluationError(
                "no base anchor for this sequence/QP", profile_id=pid,
                stage="synthetic", sequence=sequence, qp=qp,
            ) from None
        s = self.shifts(profile)
        vmaf = None if base.vmaf is None else base.vmaf + s.vmaf_shift
        time_s = None if base.time_s is None else base.time_s * 10.0 ** s.time_shift
        try:
            return RDPoint(
                qp=qp,
                rate_kbps=base.rate_kbps * 10.0 ** s.d_log_rate,
                psnr_y=base.psnr_y + s.d_quality,
                psnr_u=base.psnr_u + s.d_quality,
                psnr_v=base.psnr_v + s.d_quality,
                vmaf=vmaf,
                energy_j=base.energy_j * 10.0 ** (s.d_log_energy + self._noise(profile, sequence, qp)),
                time_s=time_s,
            )
        except BDError as exc:
            raise EvaluationError(str(exc), profile_id=pid, stage="synthetic",
                                  sequence=sequence, qp=qp) from None

    def to_json(self) -> dict:
        def point(p: RDPoint) -> dict:
            # floats throughout so the fingerprint survives a JSON round trip
            d = {"qp": int(p.qp), "rate_kbps": float(p.rate_kbps), "psnr_y": float(p.psnr_y),
                 "psnr_u": float(p.psnr_u), "psnr_v": float(p.psnr_v)}
            for k in ("vmaf", "energy_j", "time_s"):
                if getattr(p, k) is not None:
                    d[k] = float(getattr(p, k))
            return d

        return {
            "config": self.config.value,
            "base": {s: [point(p) for _, p in sorted(pts.items())] for s, pts in self.base.items()},
            "tools": {n: e.to_json() for n, e in self.tools.items()},
            "interactions": [
                {"tools": list(i.tools), **i.effect.to_json()} for i in self.interactions
            ],
            "noise_stddev": self.noise_stddev,
            "seed": self.seed,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True)
        return "synthetic-" + hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, doc: Mapping, catalog: ToolCatalog | None = None) -> "SyntheticLandscape":
        catalog = catalog or builtin_catalog()
        try:
            config = CodingConfig.parse(doc["config"])
            raw_base = doc["base"]
            if isinstance(raw_base, list):
                raw_base = {"synthetic": raw_base}
            base = {}
            for seq, pts in raw_base.items():
                base[seq] = [
                    RDPoint(
                        qp=int(p["qp"]),
                        rate_kbps=float(p["rate_kbps"]),
                        psnr_y=float(p["psnr_y"]),
                        psnr_u=float(p.get("psnr_u", p["psnr_y"])),
                        psnr_v=float(p.get("psnr_v", p["psnr_y"])),
                        vmaf=None if p.get("vmaf") is None else float(p["vmaf"]),
                        energy_j=float(p["energy_j"]),
                        time_s=None if p.get("time_s") is None else float(p["time_s"]),
                    )
                    for p in pts
                ]
            tools = {name: _effect(eff, name) for name, eff in doc.get("tools", {}).items()}
            interactions = []
            for raw in doc.get("interactions", []):
                pair = tuple(raw["tools"])
                if len(pair) != 2:
                    raise ConfigError("an interaction names exactly two tools")
                rest = {k: v for k, v in raw.items() if k != "tools"}
                interactions.append(Interaction(pair, _effect(rest, "+".join(pair))))
            return cls(
                catalog, config, base, tools, interactions,
                noise_stddev=float(doc.get("noise_stddev", 0.0)),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed landscape spec: missing or bad field {exc}") from None
        except (BDError, ProfileError) as exc:
            raise ConfigError(f"invalid landscape spec: {exc}") from None

    @classmethod
    def load(cls, path, catalog: ToolCatalog | None = None) -> "SyntheticLandscape":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), catalog)


_EFFECT_KEYS = {"d_log_rate", "d_log_energy", "d_quality", "d_vmaf", "d_log_time"}


def _effect(raw: Mapping, where: str) -> ToolEffect:
    unknown = set(raw) - _EFFECT_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown effect keys {sorted(unknown)}")
    return ToolEffect(**{k: float(v) for k, v in raw.items()})


def random_landscape(
    catalog: ToolCatalog,
    config: CodingConfig | str,
    tools: Sequence[str],
    seed: int,
    *,
    n_interactions: int = 0,
    interaction_scale: float = 0.08,
    noise_stddev: float = 0.0,
    sequences: Sequence[str] = ("synthetic",),
) -> SyntheticLandscape:
    """Seeded landscape over ``tools``.

    Base curves have log-energy exactly linear in PSNR_YUV with one slope
    shared by all sequences. Under that shape, a quality shift acts like a
    constant log-energy shift, so the energy BD of any profile depends only
    on the summed effects and the landscape is separable in the objective
    unless interactions are added.
    """
    rng = np.random.default_rng(seed)
    config = CodingConfig.parse(config)
    slope = rng.uniform(0.03, 0.09)
    base = {}
    for seq in sequences:
        q0 = rng.uniform(33.0, 36.0)
        qs = q0 + np.cumsum(np.r_[0.0, rng.uniform(1.2, 2.4, 3)])
        log_e0 = rng.uniform(1.5, 3.0)
        log_r0 = rng.uniform(2.5, 3.5)
        rate_steps = np.cumsum(np.r_[0.0, rng.uniform(0.15, 0.35, 3)])
        pts = []
        for k, (qp, q) in enumerate(zip(reversed(DEFAULT_QPS), qs)):
            pts.append(RDPoint(
                qp=qp, rate_kbps=10 ** (log_r0 + rate_steps[k]),
                psnr_y=q, psnr_u=q, psnr_v=q,
                vmaf=min(99.0, 60.0 + 8.0 * k + rng.uniform(0, 2)),
                energy_j=10 ** (log_e0 + slope * (q - q0)),
                time_s=10 ** (log_e0 + slope * (q - q0) - 1.3),
            ))
        base[seq] = pts
    effects = {}
    for name in tools:
        mag = rng.uniform(0.005, 0.08)
        effects[name] = ToolEffect(
            d_log_rate=float(rng.uniform(-0.04, 0.04)),
            d_log_energy=float(mag if rng.random() < 0.5 else -mag),
            d_quality=float(rng.uniform(-0.2, 0.2)),
        )
    interactions = []
    names = list(tools)
    for _ in range(n_interactions):
        a, b = rng.choice(len(names), 2, replace=False)
        interactions.append(Interaction(
            (names[a], names[b]),
            ToolEffect(d_log_energy=float(rng.uniform(-1, 1) * interaction_scale)),
        ))
    return SyntheticLandscape(catalog, config, base, effects, interactions,
                              noise_stddev=noise_stddev, seed=seed)


# --- cache -------------------------------------------------------------------


def _point_to_json(p: RDPoint) -> str:
    return json.dumps(asdict(p), sort_keys=True)


def _point_from_json(text: str) -> RDPoint:
    return RDPoint(**json.loads(text))


class EvalCache:
    """Map of (namespace, profile hash, sequence, QP) to an RDPoint.

    In-memory by default; pass ``path`` for an SQLite file that survives
    restarts. Reads may happen concurrently, writes are serialized.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = None if path is None else str(path)
        self._mem: dict[tuple, RDPoint] = {}
        self._write_lock = threading.Lock()
        self._db = None
        if self.path is not None:
            self._db = sqlite3.connect(self.path, check_same_thread=False)
            with self._db:
                self._db.execute(
                    "CREATE TABLE IF NOT EXISTS points (ns TEXT, profile TEXT, sequence TEXT, "
                    "qp INTEGER, point TEXT, PRIMARY KEY (ns, profile, sequence, qp))"
                )

    def get(self, key: tuple) -> RDPoint | None:
        hit = self._mem.get(key)
        if hit is not None or self._db is None:
            return hit
        with self._write_lock:
            row = self._db.execute(
                "SELECT point FROM points WHERE ns=? AND profile=? AND sequence=? AND qp=?", key
            ).fetchone()
        if row is None:
            return None
        point = _point_from_json(row[0])
        self._mem[key] = point
        return point

    def put(self, key: tuple, point: RDPoint) -> None:
        with self._write_lock:
            if key in self._mem:
                return
            self._mem[key] = point
            if self._db is not None:
                with self._db:
                    self._db.execute(
                        "INSERT OR IGNORE INTO points VALUES (?, ?, ?, ?, ?)",
                        (*key, _point_to_json(point)),
                    )

    def close(self) -> None:
        if self._db is not None:
            self._db.close()
            self._db = None


class CachedEvaluator(Evaluator):
    """Transparent caching wrapper; counts underlying profile evaluations."""

    def __init__(self, inner: Evaluator, cache: EvalCache | None = None):
        super().__init__(inner.catalog, inner.config, inner.sequences)
        self.inner = inner
        self.cache = cache or EvalCache()
        self.parallel_safe = inner.parallel_safe
        self.namespace = f"{inner.catalog.fingerprint()}|{inner.fingerprint()}"
        self.hits = 0
        self.misses = 0
        self.profile_evaluations = 0
        self._count_lock = threading.Lock()
        self._seen: set[str] = set()

    def fingerprint(self) -> str:
        return self.inner.fingerprint()

    @property
    def unique_profiles(self) -> int:
        return len(self._seen)

    def analyze(self, profile, sequences=None, qps=DEFAULT_QPS):
        sequences = list(self.sequences if sequences is None else sequences)
        if profile.config != self.config:
            raise ProfileError(
                f"profile is for {profile.config.value}, evaluator for {self.config.value}"
            )
        h = profile.canonical_hash()
        curves = []
        evaluated = False
        for seq in sequences:
            found = {}
            missing = []
            for qp in qps:
                point = self.cache.get((self.namespace, h, seq, qp))
                if point is None:
                    missing.append(qp)
                else:
                    found[qp] = point
            if missing:
                evaluated = True
                for p in self._points(profile, seq, missing):
                    self.cache.put((self.namespace, h, seq, p.qp), p)
                    found[p.qp] = p
            with self._count_lock:
                self.hits += len(qps) - len(missing)
                self.misses += len(missing)
            curves.append(RDCurve(profile.profile_id(self.catalog),
                                  tuple(found[q] for q in qps), seq))
        with self._count_lock:
            if evaluated:
                self.profile_evaluations += 1
            self._seen.add(h)
        return curves

    def _points(self, profile, seq, qps):
        if self.inner.parallel_safe:
            return [self.inner._analyze_point(profile, seq, qp) for qp in qps]
        with self.inner._lock:
            return [self.inner._analyze_point(profile, seq, qp) for qp in qps]


# --- external pipeline -------------------------------------------------------

REQUIRED_METRICS = ("rate_kbps", "psnr_y", "psnr_u", "psnr_v")
OPTIONAL_METRICS = ("vmaf", "energy_j", "time_s")


@dataclass(frozen=True)
class ParseRule:
    stage: str
    regex: re.Pattern

    def extract(self, text: str) -> float | None:
        matches = self.regex.findall(text)
        if not matches:
            return None
        last = matches[-1]
        if isinstance(last, tuple):
            last = last[0]
        return float(last)


@dataclass
class PipelineConfig:
    encode: str
    decode: str
    sequences: dict[str, str]
    parse: dict[str, ParseRule]
    rename: dict[str, str] = field(default_factory=dict)
    switch_format: str = "--{name}={value}"
    workdir: str | None = None
    energy_source: str | None = None
    measure: ConfidenceParams = field(default_factory=ConfidenceParams)
    timeout: float | None = None

    def __post_init__(self):
        for placeholder in ("{input}", "{output}", "{qp}", "{switches}"):
            if placeholder not in self.encode:
                raise ConfigError(f"encode template lacks the {placeholder} placeholder")
        if "{input}" not in self.decode:
            raise ConfigError("decode template lacks the {input} placeholder")
        if not self.sequences:
            raise ConfigError("pipeline config lists no sequences")
        missing = [m for m in REQUIRED_METRICS if m not in self.parse]
        if missing:
            raise ConfigError(f"parse rules missing for {missing}")
        for name, rule in self.parse.items():
            if name not in REQUIRED_METRICS + OPTIONAL_METRICS:
                raise ConfigError(f"unknown metric {name!r} in parse rules")
            if rule.stage not in ("encode", "decode"):
                raise ConfigError(f"metric {name!r}: stage must be encode or decode")
        if self.energy_source is not None:
            try:
                parse_source(self.energy_source)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PipelineConfig":
        try:
            rules = {}
            for name, raw in doc["parse"].items():
                if isinstance(raw, str):
                    raw = {"stage": "encode", "regex": raw}
                try:
                    rules[name] = ParseRule(raw.get("stage", "encode"), re.compile(raw["regex"]))
                except re.error as exc:
                    raise ConfigError(f"metric {name!r}: bad regex: {exc}") from None
            measure = ConfidenceParams(**doc.get("measure", {}))
            return cls(
                encode=doc["encode"],
                decode=doc["decode"],
                sequences=dict(doc["sequences"]),
                parse=rules,
                rename=dict(doc.get("rename", {})),
                switch_format=doc.get("switch_format", "--{name}={value}"),
                workdir=doc.get("workdir"),
                energy_source=doc.get("energy_source"),
                measure=measure,
                timeout=doc.get("timeout"),
            )
        except KeyError as exc:
            raise ConfigError(f"pipeline config missing key {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"malformed pipeline config: {exc}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            if path.suffix == ".toml":
                doc = tomllib.loads(path.read_text(encoding="utf-8"))
            else:
                doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read pipeline config {path}: {exc}") from None
        base = path.parent
        # relative sequence paths are relative to the config file
        doc["sequences"] = {
            k: str(v if Path(v).is_absolute() else base / v)
            for k, v in doc.get("sequences", {}).items()
        }
        return cls.from_dict(doc)


def render_switches(profile: ToolProfile, cfg: PipelineConfig) -> list[str]:
    """Encoder arguments for every usage bit plus the derived switches.

    A rename target starting with ``!`` names an inverted flag, e.g. a
    ``DeblockingFilterDisable`` option for the DBF tool.
    """
    switches = dict(profile.usage)
    switches.update(derived_switches(profile))
    out = []
    for name, on in switches.items():
        flag = cfg.rename.get(name, name)
        if flag.startswith("!"):
            flag, on = flag[1:], not on
        out.append(cfg.switch_format.format(name=flag, value=int(on)))
    return out


def _render(template: str, values: Mapping[str, str], switches: list[str]) -> list[str]:
    argv = []
    for token in shlex.split(template):
        if token == "{switches}":
            argv.extend(switches)
        else:
            argv.append(token.format(**values, switches=" ".join(switches)))
    return argv


class PipelineEvaluator(Evaluator):
    def __init__(self, catalog: ToolCatalog, config: CodingConfig | str, cfg: PipelineConfig):
        super().__init__(catalog, config, list(cfg.sequences))
        self.cfg = cfg
        # energy measurement needs the whole machine
        self.parallel_safe = cfg.energy_source is None
        self._source = parse_source(cfg.energy_source) if cfg.energy_source else None

    def fingerprint(self) -> str:
        blob = json.dumps({
            "encode": self.cfg.encode, "decode": self.cfg.decode,
            "sequences": self.cfg.sequences, "rename": self.cfg.rename,
            "parse": {k: [r.stage, r.regex.pattern] for k, r in sorted(self.cfg.parse.items())},
            "energy": self.cfg.energy_source,
        }, sort_keys=True)
        return "pipeline-" + hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _run(self, argv, stage, ctx):
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.cfg.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EvaluationError(f"{stage} command failed to run: {exc}", stage=stage, **ctx) from None
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout).strip()[-400:]
            raise EvaluationError(
                f"{stage} command exited with status {proc.returncode}: {tail}", stage=stage, **ctx
            )
        return proc.stdout + proc.stderr

    def _analyze_point(self, profile, sequence, qp):
        pid = profile.profile_id(self.catalog)
        ctx = {"profile_id": pid, "sequence": sequence, "qp": qp}
        if sequence not in self.cfg.sequences:
            raise EvaluationError("unknown sequence", stage="setup", **ctx)
        workdir = Path(self.cfg.workdir or tempfile.gettempdir())
        workdir.mkdir(parents=True, exist_ok=True)
        stem = f"{pid}_{sequence}_qp{qp}"
        bitstream = workdir / f"{stem}.bin"
        recon = workdir / f"{stem}.rec"
        switches = render_switches(profile, self.cfg)
        enc_argv = _render(self.cfg.encode, {
            "input": self.cfg.sequences[sequence], "output": str(bitstream),
            "qp": str(qp), "sequence": sequence,
        }, switches)
        dec_argv = _render(self.cfg.decode, {
            "input": str(bitstream), "output": str(recon), "qp": str(qp), "sequence": sequence,
        }, switches)
        logs = {"encode": self._run(enc_argv, "encode", ctx)}
        t0 = time.perf_counter()
        logs["decode"] = self._run(dec_argv, "decode", ctx)
        decode_time = time.perf_counter() - t0

        values: dict[str, float | None] = {}
        for metric, rule in self.cfg.parse.items():
            v = rule.extract(logs[rule.stage])
            if v is None and metric in REQUIRED_METRICS:
                raise EvaluationError(f"could not parse {metric} from {rule.stage} log",
                                      stage=f"parse-{rule.stage}", **ctx)
            values[metric] = v

        if self._source is not None:
            def task():
                self._run(dec_argv, "decode", ctx)

            try:
                series = measure_until_confident(task, self._source, self.cfg.measure)
            except MeasurementError as exc:
                raise EvaluationError(str(exc), stage="measure", **ctx) from None
            if not series.converged:
                raise EvaluationError(
                    f"decode energy did not converge after {series.m} runs", stage="measure", **ctx
                )
            values["energy_j"] = series.mean
            values["time_s"] = float(np.mean(series.durations))
        elif values.get("time_s") is None:
            values["time_s"] = decode_time
        try:
            return RDPoint(qp=qp, **{k: values.get(k) for k in REQUIRED_METRICS + OPTIONAL_METRICS})
        except BDError as exc:
            raise EvaluationError(str(exc), stage="parse", **ctx) from None


def load_evaluator(spec: str, catalog: ToolCatalog, config: CodingConfig | str) -> Evaluator:
    """Build an evaluator from ``synthetic:<landscape.json>`` or ``pipeline:<cfg>``."""
    kind, _, path = spec.partition(":")
    if not path:
        raise ConfigError(f"evaluator spec {spec!r} must look like synthetic:<file> or pipeline:<file>")
    if kind == "synthetic":
        try:
            land = SyntheticLandscape.load(path, catalog)
        except OSError as exc:
            raise ConfigError(f"cannot read landscape {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"landscape {path} is not valid JSON: {exc}") from None
        if land.config != CodingConfig.parse(config):
            raise ConfigError(
                f"landscape {path} is for {land.config.value}, run requested "
                f"{CodingConfig.parse(config).value}"
            )
        return land
    if kind == "pipeline":
        return PipelineEvaluator(catalog, config, PipelineConfig.load(path))
    raise ConfigError(f"unknown evaluator kind {kind!r}")
