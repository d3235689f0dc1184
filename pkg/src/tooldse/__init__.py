"""Energy-aware coding tool profile exploration for video decoders."""

__version__ = "0.1.0"

from .bdmetrics import BDResult, RDCurve, RDPoint, bd_delta, bd_result  # noqa: E402
from .dse import full_search, greedy_dse, pareto_front, select_ebe, select_ee, sensitivity  # noqa: E402
from .profiles import (  # noqa: E402
    CodingConfig,
    ToolCatalog,
    ToolProfile,
    builtin_catalog,
    ctc_profile,
    make_profile,
    toggle,
)

__all__ = [
    "BDResult", "RDCurve", "RDPoint", "bd_delta", "bd_result",
    "full_search", "greedy_dse", "pareto_front", "select_ebe", "select_ee", "sensitivity",
    "CodingConfig", "ToolCatalog", "ToolProfile", "builtin_catalog", "ctc_profile",
    "make_profile", "toggle",
]
