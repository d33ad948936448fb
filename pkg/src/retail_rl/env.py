"""Vectorized single-store replenishment environment.

Every item owns a row of ``max_stock`` slots holding remaining shelf lives in
days (0 marks an empty slot). Rows are kept sorted in descending order, so the
freshest units sit at the front: LIFO sales remove from the front and
deliveries (always the freshest units) are inserted there too.

A day consists of ``tau`` steps. Each step delivers orders placed
``lead_time`` steps earlier, enqueues the new order, realizes demand for the
current sub-period and, on the last sub-period, ages the stock by one day and
discards expired units as waste.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import market, seeding
from .items import ItemSet
from .market import CustomerModel, ForecastConfig, SeasonalityConfig


@dataclass(frozen=True)
class StoreConfig:
    max_stock: int = 100
    max_order: int = 20
    lead_time: int | None = None  # steps; defaults to one day
    waste_weight: float = 1.0
    order_cost_per_unit: float = 0.0
    start_day: int = 0
    seasonality: SeasonalityConfig = field(default_factory=SeasonalityConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    customers: CustomerModel = field(default_factory=CustomerModel)

    def __post_init__(self):
        if self.lead_time is None:
            object.__setattr__(self, "lead_time", self.seasonality.sub_periods_per_day)
        if self.max_stock < 1:
            raise ValueError("max_stock must be >= 1")
        if not 0 <= self.max_order:
            raise ValueError("max_order must be >= 0")
        if self.lead_time < 1:
            raise ValueError("lead_time must be >= 1 step")
        if self.customers.tau != self.seasonality.sub_periods_per_day:
            raise ValueError("customer model must have one mean per sub-period")
        if self.waste_weight < 0 or self.order_cost_per_unit < 0:
            raise ValueError("waste_weight and order_cost_per_unit must be >= 0")

    @property
    def n_actions(self) -> int:
        return self.max_order + 1

    @property
    def tau(self) -> int:
        return self.seasonality.sub_periods_per_day

    @property
    def obs_width(self) -> int:
        return self.max_stock + self.forecast.horizon_days + 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["customers"] = {"mean": list(self.customers.mean), "covariance": [list(r) for r in self.customers.covariance]}
        return d


@dataclass
class Observation:
    """Agent-visible slice for a batch of items.

    ``pipeline`` (units in transit) is not part of the network input; it is
    carried for inventory-position policies.
    """

    stock: np.ndarray          # [k, M] remaining shelf lives, descending
    shelf_life: np.ndarray     # [k]
    forecast: np.ndarray       # [k, horizon] expected units per future day
    cost: np.ndarray           # [k]
    price: np.ndarray          # [k]
    pipeline: np.ndarray       # [k]

    def to_array(self, include_pipeline: bool = False) -> np.ndarray:
        return np.concatenate(
            [
                self.stock.astype(np.float64),
                self.shelf_life[:, None].astype(np.float64),
                self.forecast,
                self.cost[:, None],
                self.price[:, None],
            ]
            + ([self.pipeline[:, None].astype(np.float64)] if include_pipeline else []),
            axis=1,
        )

    @property
    def on_hand(self) -> np.ndarray:
        return np.count_nonzero(self.stock, axis=1)

    def __len__(self) -> int:
        return self.stock.shape[0]


@dataclass
class StepOutcome:
    reward: np.ndarray
    sales_reward: np.ndarray
    waste_cost: np.ndarray
    order_cost: np.ndarray
    ordered: np.ndarray
    delivered: np.ndarray
    overflow: np.ndarray
    demanded: np.ndarray
    sold: np.ndarray
    missed: np.ndarray
    wasted: np.ndarray
    availability: np.ndarray


@dataclass
class StoreState:
    stock: np.ndarray       # [k, M], each row sorted descending
    pipeline: np.ndarray    # [k, L] ring buffer of in-transit units
    step: int = 0
    day: int = 0
    sub_period: int = 0

    def copy(self) -> "StoreState":
        return StoreState(self.stock.copy(), self.pipeline.copy(), self.step, self.day, self.sub_period)


# --- stock operations on descending-sorted rows ------------------------------

def _as_rows(stock):
    stock = np.asarray(stock, dtype=np.int64)
    return (stock[None, :], True) if stock.ndim == 1 else (stock, False)


def _add_sorted(stock, units, shelf_life):
    k, m = stock.shape
    free = m - np.count_nonzero(stock, axis=1)
    added = np.minimum(units, free)
    idx = np.arange(m)[None, :] - added[:, None]
    shifted = np.take_along_axis(stock, np.maximum(idx, 0), axis=1)
    return np.where(idx < 0, shelf_life[:, None], shifted), added


def _sell_sorted(stock, demanded):
    k, m = stock.shape
    sold = np.minimum(np.count_nonzero(stock, axis=1), demanded)
    idx = np.arange(m)[None, :] + sold[:, None]
    shifted = np.take_along_axis(stock, np.minimum(idx, m - 1), axis=1)
    return np.where(idx < m, shifted, 0), sold, demanded - sold


def _decay_sorted(stock):
    wasted = np.count_nonzero(stock == 1, axis=1)
    return np.where(stock > 0, stock - 1, 0), wasted


def add_stock(stock, units, shelf_life):
    """Insert ``units`` fresh slots at ``shelf_life``, capped by free slots.

    Accepts one row ``[M]`` or a batch ``[k, M]``. Returns ``(stock', added)``
    with rows sorted in descending order.
    """
    rows, single = _as_rows(stock)
    units = np.broadcast_to(np.asarray(units, dtype=np.int64), rows.shape[:1])
    if np.any(units < 0):
        raise ValueError("units must be >= 0")
    life = np.broadcast_to(np.asarray(shelf_life, dtype=np.int64), rows.shape[:1])
    out, added = _add_sorted(-np.sort(-rows, axis=1), units, life)
    return (out[0], int(added[0])) if single else (out, added)


def sell_lifo(stock, demanded):
    """Sell the freshest units first. Returns ``(stock', sold, missed)``."""
    rows, single = _as_rows(stock)
    demanded = np.broadcast_to(np.asarray(demanded, dtype=np.int64), rows.shape[:1])
    if np.any(demanded < 0):
        raise ValueError("demand must be >= 0")
    out, sold, missed = _sell_sorted(-np.sort(-rows, axis=1), demanded)
    return (out[0], int(sold[0]), int(missed[0])) if single else (out, sold, missed)


def sales_reward(sold, missed, margin):
    """Sold units earn the margin, missed units cost it."""
    return (np.asarray(sold) - np.asarray(missed)) * margin


def end_of_day(stock, cost=None):
    """Age every unit by one day. Returns ``(stock', wasted)`` or with ``cost`` also the waste cost."""
    rows, single = _as_rows(stock)
    out, wasted = _decay_sorted(-np.sort(-rows, axis=1))
    if single:
        out, wasted = out[0], int(wasted[0])
    if cost is None:
        return out, wasted
    return out, wasted, wasted * np.asarray(cost)


class StoreEnv:
    """Steps ``k`` independent items in lock-step.

    Randomness is split into separate streams (customers, purchases,
    forecast noise) so that demand realizations do not depend on the actions
    taken: two policies run with the same seed face identical demand.
    """

    def __init__(self, items: ItemSet, cfg: StoreConfig = StoreConfig(), seed=0):
        if len(items) < 1:
            raise ValueError("need at least one item")
        if np.any(items.shelf_life < 1):
            raise ValueError("item shelf lives must be >= 1")
        self.items = items
        self.cfg = cfg
        self.seed = seed
        self.reset()

    @property
    def k(self) -> int:
        return len(self.items)

    def reset(self) -> Observation:
        c, d, f = seeding.children(self.seed, 3)
        self._rng_customers = np.random.default_rng(c)
        self._rng_demand = np.random.default_rng(d)
        self._rng_forecast = np.random.default_rng(f)
        k, cfg = self.k, self.cfg
        self.state = StoreState(
            np.zeros((k, cfg.max_stock), dtype=np.int64),
            np.zeros((k, cfg.lead_time), dtype=np.int64),
            day=cfg.start_day,
        )
        self.totals = {name: np.zeros(k) for name in (
            "reward", "sales_reward", "waste_cost", "order_cost", "ordered", "delivered",
            "overflow", "demanded", "sold", "missed", "wasted")}
        self.forecast_abs_error = 0.0
        self.forecast_count = 0
        self._new_day()
        return self.observe()

    def _new_day(self):
        t = self.state.day
        self._customers = self.cfg.customers.draw_day(self._rng_customers, self.k)
        self._p_today = market.purchase_probability(
            self.items.base_demand, self.items.phase_weekly, self.items.phase_yearly, t, self.cfg.seasonality)
        eps = market.draw_forecast_noise(self.cfg.forecast, self._rng_forecast, self.k)
        self._eps = eps
        self._forecast, true_units = market.week_ahead(
            self.items, t, eps, self.cfg.seasonality, self.cfg.forecast, self.cfg.customers)
        self.forecast_abs_error += float(np.abs(self._forecast - true_units).sum())
        self.forecast_count += self._forecast.size

    @property
    def forecast_mae(self) -> float:
        return self.forecast_abs_error / max(self.forecast_count, 1)

    def observe(self) -> Observation:
        st = self.state
        return Observation(
            st.stock.copy(),
            self.items.shelf_life.copy(),
            self._forecast.copy(),
            self.items.cost.copy(),
            self.items.price.copy(),
            st.pipeline.sum(axis=1),
        )

    def step(self, action) -> tuple[Observation, StepOutcome]:
        cfg, st = self.cfg, self.state
        action = np.asarray(action)
        if action.shape not in ((), (self.k,)):
            raise ValueError(f"expected {self.k} actions, got shape {action.shape}")
        if not np.issubdtype(action.dtype, np.integer):
            if np.any(action != np.round(action)):
                raise ValueError("actions must be integer order quantities")
        action = np.broadcast_to(action, (self.k,)).astype(np.int64)
        if np.any((action < 0) | (action > cfg.max_order)):
            raise ValueError(f"actions must lie in [0, {cfg.max_order}]")
        action = np.clip(action, 0, cfg.max_stock)

        slot = st.step % cfg.lead_time
        arriving = st.pipeline[:, slot].copy()
        st.pipeline[:, slot] = action
        stock, delivered = _add_sorted(st.stock, arriving, self.items.shelf_life)

        demanded = self._rng_demand.binomial(self._customers[:, st.sub_period], self._p_today)
        stock, sold, missed = _sell_sorted(stock, demanded)
        sales = sales_reward(sold, missed, self.items.margin)

        if st.sub_period == cfg.tau - 1:
            stock, wasted = _decay_sorted(stock)
            st.stock = stock
            st.day += 1
            st.sub_period = 0
            self._new_day()
        else:
            wasted = np.zeros(self.k, dtype=np.int64)
            st.stock = stock
            st.sub_period += 1
        st.step += 1

        waste_cost = wasted * self.items.cost
        order_cost = action * cfg.order_cost_per_unit
        reward = sales - cfg.waste_weight * waste_cost - order_cost
        availability = np.where(demanded > 0, sold / np.maximum(demanded, 1), 1.0)
        out = StepOutcome(
            reward, sales, waste_cost, order_cost, action, delivered, arriving - delivered,
            demanded, sold, missed, wasted, availability,
        )
        for name, total in self.totals.items():
            total += getattr(out, name)
        return self.observe(), out

    def on_hand(self) -> np.ndarray:
        return np.count_nonzero(self.state.stock, axis=1)

    def in_transit(self) -> np.ndarray:
        return self.state.pipeline.sum(axis=1)
