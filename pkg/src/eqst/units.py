"""SI conversion of config values given as ``"<number> <unit>"`` strings."""

from __future__ import annotations

import functools
import re

import pint

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


@functools.lru_cache(maxsize=1)
def registry() -> pint.UnitRegistry:
    return pint.UnitRegistry()


def to_si(value, unit: str | None = None) -> float:
    """Convert ``value`` to the SI unit ``unit`` (e.g. ``"V/m"``).

    Plain numbers are taken to be in SI already.  Strings carry their own
    unit, e.g. ``"0.7 kV/mm"`` or ``"65 degC"``.
    """
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = _NUMBER.match(str(value))
    if not m:
        raise ValueError(f"cannot parse quantity {value!r}")
    number, unit_str = float(m.group(1)), m.group(2)
    if not unit_str:
        return number
    if unit is None:
        raise ValueError(f"quantity {value!r} has a unit but none is expected")
    ureg = registry()
    try:
        q = ureg.Quantity(number, unit_str).to(unit)
    except (pint.errors.UndefinedUnitError, pint.errors.DimensionalityError) as exc:
        raise ValueError(f"cannot convert {value!r} to {unit}: {exc}") from None
    return float(q.magnitude)
