"""Pseudo-item generation from a Clayton copula with gamma / log-normal marginals.

The copula couples four coordinates: shelf life, base demand, cost and markup.
Price is derived as ``cost * (1 + markup)`` so that every item sells at a
positive margin. Weekly and yearly seasonality phases are drawn uniformly and
independently of the copula.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

CSV_HEADER = ["item_id", "shelf_life", "base_demand", "price", "cost", "phase_weekly", "phase_yearly"]

_U_EPS = 1e-12


@dataclass(frozen=True)
class PseudoItem:
    shelf_life: int
    base_demand: float
    price: float
    cost: float
    phase_weekly: float
    phase_yearly: float

    @property
    def margin(self) -> float:
        return self.price - self.cost


@dataclass(frozen=True)
class Marginal:
    """A gamma(shape, scale) or lognormal(mu, sigma) marginal law."""

    family: str
    a: float
    b: float

    def __post_init__(self):
        if self.family not in ("gamma", "lognormal"):
            raise ValueError(f"unknown marginal family {self.family!r}")
        if self.family == "gamma" and not (self.a > 0 and self.b > 0):
            raise ValueError("gamma marginal needs positive shape and scale")
        if self.family == "lognormal" and not self.b > 0:
            raise ValueError("lognormal marginal needs positive sigma")

    @property
    def dist(self):
        if self.family == "gamma":
            return stats.gamma(self.a, scale=self.b)
        return stats.lognorm(self.b, scale=np.exp(self.a))

    def ppf(self, u):
        return self.dist.ppf(u)

    def cdf(self, x):
        return self.dist.cdf(x)


@dataclass(frozen=True)
class CopulaModel:
    theta: float = 2.0
    shelf_life: Marginal = Marginal("gamma", 3.0, 3.0)
    base_demand: Marginal = Marginal("lognormal", -3.0, 0.7)
    cost: Marginal = Marginal("gamma", 2.0, 2.0)
    markup: Marginal = Marginal("lognormal", -0.7, 0.4)
    max_shelf_life: int = 30
    base_demand_cap: float = 0.5

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("Clayton theta must be positive")
        if self.max_shelf_life < 1:
            raise ValueError("max_shelf_life must be at least 1")
        if not 0 < self.base_demand_cap <= 1:
            raise ValueError("base_demand_cap must lie in (0, 1]")

    def to_dict(self) -> dict:
        out = {"theta": self.theta, "max_shelf_life": self.max_shelf_life, "base_demand_cap": self.base_demand_cap}
        for name in ("shelf_life", "base_demand", "cost", "markup"):
            m = getattr(self, name)
            out[f"{name}_family"] = m.family
            out[f"{name}_a"] = m.a
            out[f"{name}_b"] = m.b
        return out


@dataclass
class ItemSet:
    """Struct-of-arrays view of a list of items, used by the vectorized store."""

    shelf_life: np.ndarray
    base_demand: np.ndarray
    price: np.ndarray
    cost: np.ndarray
    phase_weekly: np.ndarray
    phase_yearly: np.ndarray
    item_id: np.ndarray = field(default=None)

    def __post_init__(self):
        self.shelf_life = np.asarray(self.shelf_life, dtype=np.int64)
        for name in ("base_demand", "price", "cost", "phase_weekly", "phase_yearly"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.item_id is None:
            self.item_id = np.arange(len(self.shelf_life))
        self.item_id = np.asarray(self.item_id, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.shelf_life)

    def __getitem__(self, k: int) -> PseudoItem:
        return PseudoItem(
            int(self.shelf_life[k]),
            float(self.base_demand[k]),
            float(self.price[k]),
            float(self.cost[k]),
            float(self.phase_weekly[k]),
            float(self.phase_yearly[k]),
        )

    def __iter__(self) -> Iterator[PseudoItem]:
        return (self[k] for k in range(len(self)))

    @property
    def margin(self) -> np.ndarray:
        return self.price - self.cost

    def subset(self, idx) -> "ItemSet":
        return ItemSet(
            self.shelf_life[idx], self.base_demand[idx], self.price[idx], self.cost[idx],
            self.phase_weekly[idx], self.phase_yearly[idx], self.item_id[idx],
        )

    @classmethod
    def from_items(cls, items: Sequence[PseudoItem]) -> "ItemSet":
        cols = list(zip(*((i.shelf_life, i.base_demand, i.price, i.cost, i.phase_weekly, i.phase_yearly) for i in items)))
        return cls(*(np.array(c) for c in cols))


def sample_clayton(theta: float, k: int, rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    """``k`` draws from a ``dim``-variate Clayton copula (Marshall-Olkin frailty).

    With frailty ``V ~ Gamma(1/theta)`` and ``E_j ~ Exp(1)``,
    ``U_j = (1 + E_j / V) ** (-1/theta)`` has the Clayton joint law.
    """
    if k < 1:
        raise ValueError("need k >= 1 samples")
    if not theta > 0:
        raise ValueError("Clayton theta must be positive")
    v = rng.gamma(1.0 / theta, 1.0, size=(k, 1))
    e = rng.exponential(1.0, size=(k, dim))
    u = np.exp(-np.log1p(e / v) / theta)
    return np.clip(u, _U_EPS, 1.0 - _U_EPS)


def generate_items(model: CopulaModel, k: int, rng: np.random.Generator) -> ItemSet:
    if k < 1:
        raise ValueError("need k >= 1 items")
    u = sample_clayton(model.theta, k, rng)
    shelf = np.clip(np.ceil(model.shelf_life.ppf(u[:, 0])), 1, model.max_shelf_life).astype(np.int64)
    base = np.minimum(model.base_demand.ppf(u[:, 1]), np.nextafter(model.base_demand_cap, 0.0))
    base = np.maximum(base, np.finfo(float).tiny)
    cost = np.maximum(model.cost.ppf(u[:, 2]), 1e-6)
    price = cost * (1.0 + np.maximum(model.markup.ppf(u[:, 3]), 1e-6))
    phases = rng.uniform(0.0, 2 * np.pi, size=(k, 2))
    return ItemSet(shelf, base, price, cost, phases[:, 0], phases[:, 1])


def shelf_life_pmf(model: CopulaModel) -> np.ndarray:
    """Probability of each shelf life ``1..max_shelf_life`` after round-up and clamping."""
    edges = np.arange(0, model.max_shelf_life + 1, dtype=float)
    cdf = model.shelf_life.cdf(edges)
    pmf = np.diff(cdf)
    pmf[-1] += 1.0 - cdf[-1]
    return pmf


def write_items_csv(items: ItemSet, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for k in range(len(items)):
            w.writerow([
                int(items.item_id[k]), int(items.shelf_life[k]), repr(float(items.base_demand[k])),
                repr(float(items.price[k])), repr(float(items.cost[k])),
                repr(float(items.phase_weekly[k])), repr(float(items.phase_yearly[k])),
            ])


def read_items_csv(path) -> ItemSet:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected item CSV header {reader.fieldnames}")
        rows = list(reader)
    return ItemSet(
        [int(r["shelf_life"]) for r in rows],
        [float(r["base_demand"]) for r in rows],
        [float(r["price"]) for r in rows],
        [float(r["cost"]) for r in rows],
        [float(r["phase_weekly"]) for r in rows],
        [float(r["phase_yearly"]) for r in rows],
        [int(r["item_id"]) for r in rows],
    )
