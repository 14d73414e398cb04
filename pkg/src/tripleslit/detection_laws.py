"""Amplitude-to-probability maps: the square law and power-law alternatives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DetectionLaw:
    """``|psi|**exponent``; the Born rule is exponent 2."""

    exponent: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.exponent) and self.exponent > 0):
            raise ValueError(f"detection exponent must be a positive finite number, got {self.exponent}")

    @property
    def kind(self) -> str:
        return "born" if self.exponent == 2 else "power"

    @property
    def is_born(self) -> bool:
        return self.exponent == 2

    @classmethod
    def parse(cls, text: str) -> "DetectionLaw":
        """Parse ``"born"`` or ``"power:<p>"``."""
        text = text.strip().lower()
        if text == "born":
            return cls(2.0)
        if text.startswith("power:"):
            try:
                p = float(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad power-law exponent in {text!r}") from None
            return cls(p)
        raise ValueError(f"law must be 'born' or 'power:<p>', got {text!r}")

    def __str__(self) -> str:
        return "born" if self.is_born else f"power:{self.exponent!r}"


BORN = DetectionLaw(2.0)


def PowerLaw(p: float) -> DetectionLaw:
    return DetectionLaw(float(p))


def detect(amplitude, law: DetectionLaw = BORN):
    """Detection probability density for complex amplitude(s).

    Works elementwise on arrays.  The square law is evaluated as
    ``re**2 + im**2`` for every law with exponent 2, so ``PowerLaw(2)`` and
    ``BORN`` agree bit for bit.
    """
    amp = np.asarray(amplitude, dtype=complex)
    if not np.all(np.isfinite(amp)):
        raise ValueError("amplitude must be finite")
    mod2 = amp.real * amp.real + amp.imag * amp.imag
    if law.exponent == 2:
        out = mod2
    else:
        out = mod2 ** (law.exponent / 2.0)
    return float(out) if out.ndim == 0 else out
