"""Generalized Tukey lambda distribution (RS parameterization) and quantile losses.

The quantile function is

    alpha(u) = l1 + (u**l3 - (1 - u)**l4) / l2

and with ``l2, l3, l4 > 0`` it is strictly increasing on (0, 1), so quantiles
read off it never cross. Array helpers take parameters stacked on the last
axis (``[..., 4]``) so that network heads can be evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

LOSS_VARIANTS = ("paper", "standard")


@dataclass(frozen=True)
class GldParams:
    """Location ``lambda1``, inverse scale ``lambda2`` and tail shapes ``lambda3``/``lambda4``."""

    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float

    def __post_init__(self):
        for name in ("lambda2", "lambda3", "lambda4"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if not np.isfinite(self.lambda1):
            raise ValueError(f"lambda1 must be finite, got {self.lambda1!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3, self.lambda4])

    @classmethod
    def from_array(cls, arr) -> "GldParams":
        a = np.asarray(arr, dtype=np.float64).reshape(4)
        return cls(*(float(x) for x in a))

    def quantile(self, u):
        return quantile(self, u)

    def mean(self) -> float:
        return mean(self)


def _check_u(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(~(u > 0.0)) or np.any(~(u < 1.0)):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    return u


def quantile(params: GldParams, u):
    """Quantile function evaluated at ``u`` (scalar or array)."""
    u = _check_u(u)
    out = params.lambda1 + (u ** params.lambda3 - (1.0 - u) ** params.lambda4) / params.lambda2
    return float(out) if out.ndim == 0 else out


def mean(params: GldParams) -> float:
    return params.lambda1 + (1.0 / (1.0 + params.lambda3) - 1.0 / (1.0 + params.lambda4)) / params.lambda2


def sample(params: GldParams, rng: np.random.Generator, size=None):
    """Inverse-transform sampling; ``size=None`` returns a single float."""
    u = rng.random(size)
    # Generator.random draws from [0, 1); reject the (measure-zero) exact 0.
    u = np.where(u <= 0.0, np.nextafter(0.0, 1.0), u)
    return quantile(params, u)


# --- batched helpers on stacked parameters -----------------------------------

def quantile_array(lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Quantiles for stacked parameters.

    ``lam`` has shape ``[..., 4]`` and ``u`` shape ``[N]``; result is ``[..., N]``.
    """
    l1, l2, l3, l4 = (lam[..., k, None] for k in range(4))
    return l1 + (u ** l3 - (1.0 - u) ** l4) / l2


def quantile_array_grad(lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Partials of :func:`quantile_array` w.r.t. each parameter, shape ``[..., N, 4]``."""
    l2, l3, l4 = (lam[..., k, None] for k in (1, 2, 3))
    up = u ** l3
    dn = (1.0 - u) ** l4
    d1 = np.ones_like(up)
    d2 = -(up - dn) / l2 ** 2
    d3 = up * np.log(u) / l2
    d4 = -dn * np.log1p(-u) / l2
    return np.stack([d1, d2, d3, d4], axis=-1)


def mean_array(lam: np.ndarray) -> np.ndarray:
    return lam[..., 0] + (1.0 / (1.0 + lam[..., 2]) - 1.0 / (1.0 + lam[..., 3])) / lam[..., 1]


def midpoint_levels(n: int) -> np.ndarray:
    """Quantile levels ``(2i - 1) / (2n)`` for ``i = 1..n``."""
    if n < 1:
        raise ValueError("need at least one quantile level")
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


def check_levels(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0:
        raise ValueError("levels must be a non-empty 1-D sequence")
    if not (levels[0] > 0 and levels[-1] < 1):
        raise ValueError("levels must lie strictly inside (0, 1)")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing")
    return levels


# --- losses ------------------------------------------------------------------

def pinball_loss(u, y, y_hat):
    """``(y - y_hat) * u + max(0, y_hat - y)``; broadcasts over arrays."""
    return (np.subtract(y, y_hat)) * u + np.maximum(0.0, np.subtract(y_hat, y))


def smoothed_pinball_loss(u, y, y_hat, delta: float = 1.0, variant: str = "paper"):
    """Huber-smoothed pinball loss.

    ``variant="paper"`` multiplies the Huber envelope of the residual by the raw
    pinball value. ``variant="standard"`` is the usual quantile-Huber loss
    ``|u - 1{r < 0}| * huber(r) / delta``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    r = np.subtract(y, y_hat)
    a = np.abs(r)
    huber = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    if variant == "paper":
        return huber * pinball_loss(u, y, y_hat)
    if variant == "standard":
        return np.abs(u - (r < 0)) * huber / delta
    raise ValueError(f"unknown loss variant {variant!r}")


def smoothed_pinball_grad(u, y, y_hat, delta: float = 1.0, variant: str = "paper"):
    """Derivative of :func:`smoothed_pinball_loss` with respect to ``y_hat``."""
    r = np.subtract(y, y_hat)
    a = np.abs(r)
    inner = a <= delta
    huber = np.where(inner, 0.5 * r * r, delta * (a - 0.5 * delta))
    # d huber / d y_hat
    dhuber = np.where(inner, -r, -delta * np.sign(r))
    weight = u - (r < 0)
    if variant == "paper":
        pl = r * weight
        return dhuber * pl - huber * weight
    if variant == "standard":
        return np.abs(weight) * dhuber / delta
    raise ValueError(f"unknown loss variant {variant!r}")


def expectile_loss(u, y, y_hat):
    """Asymmetric squared loss ``|u - 1{y < y_hat}| * (y - y_hat)**2``."""
    r = np.subtract(y, y_hat)
    return np.abs(u - (r < 0)) * r * r


def expectile_grad(u, y, y_hat):
    r = np.subtract(y, y_hat)
    return -2.0 * np.abs(u - (r < 0)) * r


class GradientCheck(NamedTuple):
    deviation: float
    skipped: bool


def gradient_check(
    loss: Callable[[float], float],
    grad: Callable[[float], float],
    x: float,
    h: float = 1e-6,
    seams: tuple = (),
) -> GradientCheck:
    """Compare ``grad(x)`` against a central difference of ``loss``.

    Points within ``2h`` of any entry in ``seams`` (kinks of the loss) are
    reported as skipped with ``nan`` deviation.
    """
    if any(abs(x - s) <= 2 * h for s in seams):
        return GradientCheck(float("nan"), True)
    numeric = (loss(x + h) - loss(x - h)) / (2 * h)
    return GradientCheck(float(abs(numeric - grad(x))), False)


def check_smoothed_pinball_grad(u, y, y_hat, delta=1.0, h=1e-6, variant="paper") -> GradientCheck:
    """Finite-difference check of the smoothed pinball loss in ``y_hat``."""
    return gradient_check(
        lambda t: float(smoothed_pinball_loss(u, y, t, delta, variant)),
        lambda t: float(smoothed_pinball_grad(u, y, t, delta, variant)),
        y_hat,
        h=h,
        seams=(y, y - delta, y + delta),
    )
