from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .problem import Counters


@dataclass
class HypergradReport:
    """Direct, indirect and total hypergradient plus bookkeeping.

    ``total`` is always ``direct + indirect``; ``y`` is the LL point the
    UL gradient was evaluated at.
    """

    direct: np.ndarray
    indirect: np.ndarray
    method: str
    T: int = 0
    M: Optional[int] = None
    counters: Counters = field(default_factory=Counters)
    peak_iterates: int = 0
    peak_panels: int = 0
    y: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.direct = np.asarray(self.direct, dtype=float)
        self.indirect = np.asarray(self.indirect, dtype=float)
        self.total = self.direct + self.indirect

    def to_record(self) -> dict:
        rec = {"method": self.method, "T": self.T, "M": "" if self.M is None else self.M}
        for i, v in enumerate(self.total):
            rec[f"total_{i}"] = float(v)
        rec.update(self.counters.as_dict())
        rec["peak_iterates"] = self.peak_iterates
        rec["peak_panels"] = self.peak_panels
        for k, v in sorted(self.info.items()):
            if isinstance(v, (bool, int, float, str)) or v is None:
                rec[k] = v
        return rec
