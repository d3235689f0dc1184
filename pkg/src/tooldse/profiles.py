"""Coding tool catalogs and binary tool profiles.

A catalog lists the switchable tools of an encoder together with the coding
configurations each tool applies to and its common-test-condition default.
A profile is one on/off assignment over the tools applicable to a single
configuration. Profiles are immutable values: every mutation returns a copy.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping


class ProfileError(ValueError):
    """Raised for invalid catalogs, profiles or profile documents."""


class CodingConfig(str, enum.Enum):
    AI = "AI"
    LB = "LB"
    RA = "RA"

    @classmethod
    def parse(cls, value: "str | CodingConfig") -> "CodingConfig":
        if isinstance(value, CodingConfig):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ProfileError(
                f"unknown coding configuration {value!r}; expected one of AI, LB, RA"
            ) from None


TOOL_GROUPS = ("Intra", "Inter", "TransformQuant", "InLoopFilter", "Other")


@dataclass(frozen=True)
class ToolDescriptor:
    index: int
    name: str
    group: str
    applicability: frozenset[CodingConfig]
    ctc_default: Mapping[CodingConfig, bool]

    def to_json(self) -> dict:
        order = [c for c in CodingConfig if c in self.applicability]
        return {
            "index": self.index,
            "name": self.name,
            "group": self.group,
            "applicability": [c.value for c in order],
            "ctc_default": {c.value: bool(self.ctc_default[c]) for c in order},
        }


@dataclass(frozen=True)
class ToolCatalog:
    name: str
    tools: tuple[ToolDescriptor, ...]
    _by_name: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ProfileError(f"duplicate tool names in catalog: {dupes}")
        indices = [t.index for t in self.tools]
        if sorted(indices) != list(range(1, len(self.tools) + 1)):
            raise ProfileError("tool indices must be unique and contiguous from 1")
        for t in self.tools:
            if t.group not in TOOL_GROUPS:
                raise ProfileError(f"tool {t.name}: unknown group {t.group!r}")
            if set(t.ctc_default) != set(t.applicability):
                raise ProfileError(
                    f"tool {t.name}: ctc_default must be defined exactly for its "
                    "applicable configurations"
                )
        ordered = tuple(sorted(self.tools, key=lambda t: t.index))
        object.__setattr__(self, "tools", ordered)
        object.__setattr__(self, "_by_name", {t.name: t for t in ordered})

    def __len__(self) -> int:
        return len(self.tools)

    def __getitem__(self, name: str) -> ToolDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise ProfileError(f"unknown tool {name!r} in catalog {self.name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def applicable(self, config: CodingConfig | str) -> list[str]:
        """Names of the tools usable under ``config``, in index order."""
        config = CodingConfig.parse(config)
        return [t.name for t in self.tools if config in t.applicability]

    def to_json(self) -> dict:
        return {"name": self.name, "tools": [t.to_json() for t in self.tools]}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, doc: Mapping) -> "ToolCatalog":
        try:
            tools = []
            for raw in doc["tools"]:
                ctc = {CodingConfig.parse(k): bool(v) for k, v in raw["ctc_default"].items()}
                if "applicability" in raw:
                    appl = frozenset(CodingConfig.parse(c) for c in raw["applicability"])
                else:
                    appl = frozenset(ctc)
                tools.append(
                    ToolDescriptor(
                        index=int(raw["index"]),
                        name=str(raw["name"]),
                        group=str(raw["group"]),
                        applicability=appl,
                        ctc_default=ctc,
                    )
                )
            return cls(name=str(doc.get("name", "custom")), tools=tuple(tools))
        except (KeyError, TypeError) as exc:
            raise ProfileError(f"malformed catalog document: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ToolCatalog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


_BUILTIN: ToolCatalog | None = None


def builtin_catalog() -> ToolCatalog:
    """The 28-tool VVC catalog with VTM common-test-condition defaults."""
    global _BUILTIN
    if _BUILTIN is None:
        text = resources.files("tooldse.data").joinpath("vvc_tools.json").read_text("utf-8")
        _BUILTIN = ToolCatalog.from_json(json.loads(text))
    return _BUILTIN


@dataclass(frozen=True)
class ToolProfile:
    """On/off usage of every tool applicable to one coding configuration.

    ``usage`` is stored as a sorted tuple of ``(name, bool)`` pairs so that the
    profile is hashable and compares structurally. Use :func:`make_profile`
    to build one against a catalog.
    """

    config: CodingConfig
    usage: tuple[tuple[str, bool], ...]

    @functools.cached_property
    def _map(self) -> dict[str, bool]:
        return dict(self.usage)

    def __getitem__(self, tool: str) -> bool:
        try:
            return self._map[tool]
        except KeyError:
            raise ProfileError(
                f"tool {tool!r} is not applicable to {self.config.value}"
            ) from None

    @property
    def tools(self) -> dict[str, bool]:
        return dict(self._map)

    def enabled(self) -> list[str]:
        return [n for n, b in self.usage if b]

    @functools.cached_property
    def _hash(self) -> str:
        blob = self.config.value + ";" + ",".join(f"{n}={int(b)}" for n, b in self.usage)
        return hashlib.sha256(blob.encode()).hexdigest()

    def canonical_hash(self) -> str:
        """Digest over config and sorted (tool, bit) pairs; independent of input order."""
        return self._hash

    def bits(self, catalog: ToolCatalog) -> str:
        """Usage as a ``0``/``1`` string in catalog index order."""
        tools = self.tools
        return "".join("1" if tools[n] else "0" for n in catalog.applicable(self.config))

    def profile_id(self, catalog: ToolCatalog) -> str:
        return f"{self.config.value}-{self.bits(catalog)}"


def make_profile(
    catalog: ToolCatalog, config: CodingConfig | str, usage: Mapping[str, bool]
) -> ToolProfile:
    config = CodingConfig.parse(config)
    applicable = catalog.applicable(config)
    for name in usage:
        if name not in catalog:
            raise ProfileError(f"unknown tool {name!r}")
        if name not in applicable:
            raise ProfileError(f"tool {name!r} is not applicable to {config.value}")
    missing = [n for n in applicable if n not in usage]
    if missing:
        raise ProfileError(f"missing tool(s) for {config.value}: {', '.join(missing)}")
    for name, bit in usage.items():
        if not isinstance(bit, bool):
            raise ProfileError(f"tool {name!r}: usage must be a boolean, got {bit!r}")
    return ToolProfile(config, tuple(sorted((n, bool(usage[n])) for n in applicable)))


def ctc_profile(catalog: ToolCatalog, config: CodingConfig | str) -> ToolProfile:
    config = CodingConfig.parse(config)
    usage = {n: bool(catalog[n].ctc_default[config]) for n in catalog.applicable(config)}
    return make_profile(catalog, config, usage)


def toggle(profile: ToolProfile, tool: str) -> ToolProfile:
    """Return a copy of ``profile`` with the usage bit of ``tool`` flipped."""
    names = [n for n, _ in profile.usage]
    if tool not in names:
        raise ProfileError(
            f"cannot toggle {tool!r}: not applicable to {profile.config.value}"
        )
    usage = tuple((n, (not b) if n == tool else b) for n, b in profile.usage)
    return ToolProfile(profile.config, usage)


def with_usage(profile: ToolProfile, changes: Mapping[str, bool]) -> ToolProfile:
    tools = profile.tools
    for name, bit in changes.items():
        if name not in tools:
            raise ProfileError(f"tool {name!r} is not applicable to {profile.config.value}")
        tools[name] = bool(bit)
    return ToolProfile(profile.config, tuple(sorted(tools.items())))


def derived_switches(profile: ToolProfile) -> dict[str, bool]:
    """Auxiliary encoder switches implied by the profile.

    Sign data hiding is the encoder's fallback when dependent quantization is
    off, so it is switched on exactly when DQ is applicable and disabled.
    """
    tools = profile.tools
    if "DQ" in tools:
        return {"SignDataHiding": not tools["DQ"]}
    return {}


def emit_profile(profile: ToolProfile, catalog: ToolCatalog | None = None) -> dict:
    tools = profile.tools
    if catalog is not None:
        order = catalog.applicable(profile.config)
    else:
        order = sorted(tools)
    return {"config": profile.config.value, "tools": {n: tools[n] for n in order}}


def parse_profile(doc: Mapping, catalog: ToolCatalog | None = None) -> ToolProfile:
    catalog = catalog or builtin_catalog()
    if not isinstance(doc, Mapping) or set(doc) != {"config", "tools"}:
        raise ProfileError('profile document must have exactly the keys "config" and "tools"')
    if not isinstance(doc["tools"], Mapping):
        raise ProfileError('"tools" must be an object mapping tool names to booleans')
    return make_profile(catalog, doc["config"], doc["tools"])


def dumps_profile(profile: ToolProfile, catalog: ToolCatalog | None = None) -> str:
    return json.dumps(emit_profile(profile, catalog), indent=2)


def loads_profile(text: str, catalog: ToolCatalog | None = None) -> ToolProfile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"invalid profile JSON: {exc}") from None
    return parse_profile(doc, catalog)


def profile_from_bits(catalog: ToolCatalog, config: CodingConfig | str, bits: str) -> ToolProfile:
    names = catalog.applicable(config)
    if len(bits) != len(names) or set(bits) - {"0", "1"}:
        raise ProfileError(f"bit string {bits!r} does not match {len(names)} applicable tools")
    return make_profile(catalog, config, {n: b == "1" for n, b in zip(names, bits)})


def subset_profiles(
    base: ToolProfile, tools: Iterable[str]
) -> list[ToolProfile]:
    """All 2**len(tools) profiles obtained by varying ``tools`` on top of ``base``."""
    tools = list(tools)
    out = []
    for mask in range(1 << len(tools)):
        changes = {t: bool(mask >> k & 1) for k, t in enumerate(tools)}
        out.append(with_usage(base, changes))
    return out
