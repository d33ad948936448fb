"""Customer arrivals, purchase probabilities, realized demand and forecasts.

Consumption follows an ``(n, p)`` process: each sub-period of a day brings
``n`` customers, each buying the item with probability ``p``. The agent sees a
week-ahead forecast of ``p`` whose error grows linearly with look-ahead, and
the mean of ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# forecast noise scale per scenario label
SCENARIO_SIGMA = {"H0": 0.0, "H1": 0.05, "H2": 0.15}


@dataclass(frozen=True)
class SeasonalityConfig:
    omega_weekly: float = 2 * np.pi / 7
    omega_yearly: float = 2 * np.pi / 365
    sub_periods_per_day: int = 4

    def __post_init__(self):
        if self.sub_periods_per_day < 1:
            raise ValueError("sub_periods_per_day must be >= 1")
        if self.omega_weekly < 0 or self.omega_yearly < 0:
            raise ValueError("pulsations must be non-negative")


@dataclass(frozen=True)
class ForecastConfig:
    sigma: float = 0.0
    horizon_days: int = 7

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("forecast sigma must be >= 0")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")


@dataclass(frozen=True)
class CustomerModel:
    """Multivariate Gaussian over the sub-periods of a day."""

    mean: tuple = (45.0, 25.0, 20.0, 30.0)
    covariance: tuple = field(default=None)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or np.any(mean < 0):
            raise ValueError("customer means must be a non-negative vector")
        cov = self.covariance
        if cov is None:
            cov = correlated_covariance(mean, cv=0.2, rho=-0.3)
        cov = np.asarray(cov, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance must be tau x tau")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        w, v = np.linalg.eigh(cov)
        if w.min() < -1e-9 * max(1.0, abs(w).max()):
            raise ValueError("covariance must be positive semi-definite")
        off = cov[~np.eye(mean.size, dtype=bool)]
        if np.any(off > 0):
            raise ValueError("sub-period arrivals must be non-positively correlated")
        object.__setattr__(self, "mean", tuple(float(x) for x in mean))
        object.__setattr__(self, "covariance", tuple(map(tuple, cov)))
        object.__setattr__(self, "_root", v * np.sqrt(np.clip(w, 0.0, None)))

    @property
    def tau(self) -> int:
        return len(self.mean)

    def draw_day(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Customer counts for one day, shape ``[size, tau]``; rounded and floored at 0."""
        z = rng.standard_normal((size, self.tau))
        x = np.asarray(self.mean) + z @ self._root.T
        return np.maximum(np.rint(x), 0).astype(np.int64)


def correlated_covariance(mean, cv: float = 0.2, rho: float = -0.3) -> np.ndarray:
    """Equicorrelated covariance with std ``cv * mean``.

    ``rho`` is raised towards ``-1/(tau-1)`` only as far as needed to stay PSD.
    """
    mean = np.asarray(mean, dtype=np.float64)
    tau = mean.size
    if tau > 1:
        rho = max(rho, -1.0 / (tau - 1))
    corr = np.full((tau, tau), rho)
    np.fill_diagonal(corr, 1.0)
    std = cv * mean
    return corr * np.outer(std, std)


def purchase_probability(base_demand, phase_weekly, phase_yearly, t, cfg: SeasonalityConfig):
    """``clamp(b * cos(w_w t + phi1) * cos(w_y t + phi2), 0, 1)``; broadcasts."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("day index must be non-negative")
    p = base_demand * np.cos(cfg.omega_weekly * t + phase_weekly) * np.cos(cfg.omega_yearly * t + phase_yearly)
    return np.clip(p, 0.0, 1.0)


def item_purchase_probability(item, t, cfg: SeasonalityConfig):
    return purchase_probability(item.base_demand, item.phase_weekly, item.phase_yearly, t, cfg)


def customer_arrivals(model: CustomerModel, sub_period: int, rng: np.random.Generator) -> int:
    """Draw a day of arrivals and return the count for ``sub_period``."""
    if not 0 <= sub_period < model.tau:
        raise ValueError("sub_period out of range")
    return int(model.draw_day(rng, 1)[0, sub_period])


def realize_demand(n, p, rng: np.random.Generator):
    return rng.binomial(n, p)


def forecast_probability(true_p_ahead, delta_t, eps):
    """``clamp(p(t + delta_t) + delta_t * eps, 0, 1)``."""
    return np.clip(true_p_ahead + delta_t * eps, 0.0, 1.0)


def item_forecast_probability(item, t, delta_t, eps, seasonality: SeasonalityConfig, forecast: ForecastConfig):
    if np.any(np.asarray(delta_t) < 1) or np.any(np.asarray(delta_t) > forecast.horizon_days):
        raise ValueError("delta_t must lie in 1..horizon_days")
    return forecast_probability(item_purchase_probability(item, t + np.asarray(delta_t), seasonality), delta_t, eps)


def forecast_customers(model: CustomerModel) -> np.ndarray:
    return np.asarray(model.mean, dtype=np.float64)


def draw_forecast_noise(cfg: ForecastConfig, rng: np.random.Generator, size: int) -> np.ndarray:
    """One ``N(0, sigma)`` draw per item; the stream advances even when sigma is 0."""
    return cfg.sigma * rng.standard_normal(size)


def week_ahead(items, t: int, eps, seasonality: SeasonalityConfig, forecast: ForecastConfig, customers: CustomerModel):
    """Forecast and true expected units per day for days ``t+1 .. t+horizon``.

    Returns ``(forecast_units, true_units)`` each of shape ``[k, horizon]``.
    """
    deltas = np.arange(1, forecast.horizon_days + 1)
    p_true = purchase_probability(
        items.base_demand[:, None], items.phase_weekly[:, None], items.phase_yearly[:, None],
        t + deltas[None, :], seasonality,
    )
    p_hat = forecast_probability(p_true, deltas[None, :], np.asarray(eps)[:, None])
    daily_customers = forecast_customers(customers).sum()
    return daily_customers * p_hat, daily_customers * p_true
