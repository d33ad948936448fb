"""Policy interface and the (s, Q) reorder-point baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import market
from .env import Observation, StoreConfig
from .items import ItemSet


class Policy(Protocol):
    def act(self, obs: Observation, explore: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Order quantity per item, each in ``[0, max_order]``."""


@dataclass(frozen=True)
class SQParams:
    s: np.ndarray  # reorder threshold per item (units)
    q: np.ndarray  # order quantity per item (units)

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s, dtype=np.int64))
        q = np.atleast_1d(np.asarray(self.q, dtype=np.int64))
        if np.any(s < 0) or np.any(q < 0):
            raise ValueError("s and Q must be non-negative")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "q", q)


def sq_act(params: SQParams, obs: Observation) -> np.ndarray:
    """Order ``Q`` when on-hand plus in-transit units fall below ``s``.

    Shelf lives are ignored: only the unit count matters.
    """
    position = obs.on_hand + obs.pipeline
    return np.where(position < params.s, params.q, 0).astype(np.int64)


def expected_daily_demand(items: ItemSet, cfg: StoreConfig, days: int = 365) -> np.ndarray:
    """Mean noise-free forecast units per day over ``days`` days from the start day."""
    t = cfg.start_day + np.arange(1, days + 1)[None, :]
    p = market.purchase_probability(
        items.base_demand[:, None], items.phase_weekly[:, None], items.phase_yearly[:, None], t, cfg.seasonality)
    return market.forecast_customers(cfg.customers).sum() * p.mean(axis=1)


def calibrate_sq(items: ItemSet, cfg: StoreConfig, safety_days: float = 1.0, cover_days: float = 1.0) -> SQParams:
    """Plug-in rule: ``s`` covers the lead time plus ``safety_days``; ``Q`` covers ``cover_days``.

    Items with any demand order at least one unit, otherwise rounding would
    leave slow movers permanently unstocked.
    """
    daily = expected_daily_demand(items, cfg)
    lead_days = cfg.lead_time / cfg.tau
    s = np.rint(daily * (lead_days + safety_days))
    q = np.rint(daily * cover_days)
    q = np.where(daily > 0, np.maximum(q, 1), 0)
    s = np.where(daily > 0, np.maximum(s, 1), 0)
    q = np.clip(q, 0, cfg.max_order)
    return SQParams(np.maximum(s, 0), q)


class SQPolicy:
    def __init__(self, params: SQParams, max_order: int):
        if np.any(params.q > max_order):
            raise ValueError("Q exceeds the action space")
        self.params = params
        self.max_order = max_order

    @classmethod
    def calibrated(cls, items: ItemSet, cfg: StoreConfig, **kw) -> "SQPolicy":
        return cls(calibrate_sq(items, cfg, **kw), cfg.max_order)

    def act(self, obs: Observation, explore: bool = False, rng=None) -> np.ndarray:
        return sq_act(self.params, obs)


class ConstantPolicy:
    """Orders the same quantity every step; handy for audits and tests."""

    def __init__(self, quantity: int):
        self.quantity = int(quantity)

    def act(self, obs: Observation, explore: bool = False, rng=None) -> np.ndarray:
        return np.full(len(obs), self.quantity, dtype=np.int64)


class RandomPolicy:
    def __init__(self, max_order: int, seed=0):
        self.max_order = max_order
        self.rng = np.random.default_rng(seed)

    def act(self, obs: Observation, explore: bool = False, rng=None) -> np.ndarray:
        return (rng or self.rng).integers(0, self.max_order + 1, len(obs))
