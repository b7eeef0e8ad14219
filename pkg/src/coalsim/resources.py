"""Four-axis resource arithmetic shared by every other module.

Quantities are exact rationals (fractions.Fraction) so that reservation
round trips and conservation sums never drift.  Floats and decimal strings
are converted exactly at construction; the documented 1e-9 tolerance exists
for equality checks only, never for ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Union

Quantity = Union[int, float, str, Fraction]

EQUALITY_TOLERANCE = Fraction(1, 10**9)

AXES = ("compute", "memory", "storage", "bandwidth")


def as_fraction(value: Quantity) -> Fraction:
    """Convert a numeric input to an exact Fraction.

    Decimal strings keep their decimal meaning ("0.1" -> 1/10); floats keep
    their exact binary value.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not resource quantities")
    if isinstance(value, (Rational, int, float, str)):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as a resource quantity")


class NegativeResourceError(ValueError):
    """A resource operation would produce a negative component."""


@dataclass(frozen=True)
class ResourceVector:
    """Capacity or demand along (compute, memory MB, storage MB, bandwidth Mbps)."""

    compute: Fraction
    memory: Fraction
    storage: Fraction
    bandwidth: Fraction

    def __init__(
        self,
        compute: Quantity = 0,
        memory: Quantity = 0,
        storage: Quantity = 0,
        bandwidth: Quantity = 0,
    ):
        for name, raw in zip(AXES, (compute, memory, storage, bandwidth)):
            value = as_fraction(raw)
            if value < 0:
                raise NegativeResourceError(f"{name} must be non-negative, got {raw}")
            object.__setattr__(self, name, value)

    def axes(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        return (self.compute, self.memory, self.storage, self.bandwidth)

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(*(a + b for a, b in zip(self.axes(), other.axes())))

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        out = []
        for name, a, b in zip(AXES, self.axes(), other.axes()):
            if a - b < 0:
                raise NegativeResourceError(
                    f"subtraction would drive {name} negative ({a} - {b})"
                )
            out.append(a - b)
        return ResourceVector(*out)

    def fits_within(self, other: "ResourceVector") -> bool:
        """True iff every component of self is <= the matching component of other."""
        return all(a <= b for a, b in zip(self.axes(), other.axes()))

    def is_zero(self) -> bool:
        return all(a == 0 for a in self.axes())

    def scaled(self, factor: Quantity) -> "ResourceVector":
        f = as_fraction(factor)
        return ResourceVector(*(a * f for a in self.axes()))

    def to_floats(self) -> dict[str, float]:
        return {name: float(value) for name, value in zip(AXES, self.axes())}

    def __str__(self) -> str:
        return "(" + ", ".join(format_quantity(a) for a in self.axes()) + ")"


ZERO = ResourceVector()


def resource_add(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    return a + b


def resource_sub(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    return a - b


def resource_leq(a: ResourceVector, b: ResourceVector) -> bool:
    return a.fits_within(b)


def vector_sum(vectors) -> ResourceVector:
    total = ZERO
    for v in vectors:
        total = total + v
    return total


def approx_equal(a: Quantity, b: Quantity, tolerance: Fraction = EQUALITY_TOLERANCE) -> bool:
    """Equality within the documented absolute tolerance (equality checks only)."""
    return abs(as_fraction(a) - as_fraction(b)) <= tolerance


def format_quantity(value) -> str:
    """Canonical text rendering used in event logs.

    Terminating decimals print exactly ("2.5"); non-terminating rationals
    print as num/den ("10/3"); infinities print as "unbounded".
    """
    if value == float("inf"):
        return "unbounded"
    frac = as_fraction(value)
    if frac.denominator == 1:
        return str(frac.numerator)
    # terminating decimal iff denominator is 2^a * 5^b
    den = frac.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{frac.numerator}/{frac.denominator}"
    places = max(twos, fives)
    scaled = frac.numerator * 10**places // frac.denominator
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(places + 1, "0")
    whole, part = digits[:-places], digits[-places:].rstrip("0")
    return f"{sign}{whole}.{part}" if part else f"{sign}{whole}"
