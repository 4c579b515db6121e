"""Box-Cox power transform used to keep the physical slowness positive."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(~mask.ravel())[0])


@dataclass(frozen=True)
class BoxCox:
    """``x = alpha (s^{1/alpha} - 1)`` and its inverse ``s = ((x + alpha) / alpha)^alpha``.

    ``alpha_nl = 1`` is the shifted identity ``x = s - 1``; large values
    approach ``x = log(s)``.
    """

    alpha_nl: float = 1.0

    def __post_init__(self):
        if not self.alpha_nl > 0:
            raise ValueError(f"alpha_nl must be positive, got {self.alpha_nl}")

    def forward(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        ok = s > 0
        if not ok.all():
            raise DomainError("Box-Cox forward needs s > 0", _first_bad(ok))
        a = self.alpha_nl
        # expm1 keeps accuracy when alpha is large and s^{1/alpha} is near 1
        return a * np.expm1(np.log(s) / a)

    def _base(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        base = (x + self.alpha_nl) / self.alpha_nl
        ok = base > 0
        if not ok.all():
            raise DomainError("Box-Cox inverse needs (x + alpha) / alpha > 0", _first_bad(ok))
        return base

    def inverse(self, x) -> np.ndarray:
        return self._base(x) ** self.alpha_nl

    def derivative(self, x) -> np.ndarray:
        """``ds/dx`` of the inverse map, evaluated at ``x``."""
        return self._base(x) ** (self.alpha_nl - 1.0)

    def __call__(self, x, mode: str = "forward") -> np.ndarray:
        return boxcox(self, x, mode)


def boxcox(transform: BoxCox, x, mode: str = "forward") -> np.ndarray:
    if mode == "forward":
        return transform.forward(x)
    if mode == "inverse":
        return transform.inverse(x)
    if mode == "derivative":
        return transform.derivative(x)
    raise ValueError(f"mode must be forward, inverse or derivative, got {mode!r}")
