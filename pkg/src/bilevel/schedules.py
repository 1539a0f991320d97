from __future__ import annotations

from .errors import ContractViolation

SCHEDULES = ("constant", "harmonic", "geometric", "sqrt")


def schedule_value(kind: str, base: float, k: int, decay: float = 0.5) -> float:
    """Value of a decaying schedule at 1-based index ``k``.

    ``constant`` -> base, ``harmonic`` -> base/k, ``geometric`` ->
    base*decay**(k-1), ``sqrt`` -> base/sqrt(k).
    """
    if k < 1:
        raise ContractViolation(f"schedule index must be >= 1, got {k}")
    if kind == "constant":
        return float(base)
    if kind == "harmonic":
        return base / k
    if kind == "geometric":
        return base * decay ** (k - 1)
    if kind == "sqrt":
        return base / k ** 0.5
    raise ContractViolation(f"unknown schedule {kind!r}; expected one of {SCHEDULES}")
