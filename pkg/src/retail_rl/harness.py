"""Experiment driver: configuration, training, paired evaluation and result files.

All randomness hangs off one integer ``seed`` through fixed spawn keys, so the
evaluation items and demand realizations depend only on the seed and the
evaluation settings, never on the agent. Every agent trained with the same
seed is therefore scored against the (s, Q) baseline on identical data.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import market, neural, seeding
from .agents import AGENTS, AgentConfig, ValueAgent, make_agent
from .env import StepOutcome, StoreConfig, StoreEnv
from .items import CopulaModel, ItemSet, generate_items
from .policies import SQPolicy

CONFIG_VERSION = 1

# spawn keys for the independent random streams derived from the run seed
_TRAIN_ITEMS, _TRAIN_ENV, _AGENT, _EVAL_ITEMS, _EVAL_ENV = range(5)

_AGENT_FIELDS = tuple(f.name for f in fields(AgentConfig))

GENERATION_COLUMNS = (
    "generation", "agent_profit", "baseline_profit", "norm_profit_pct",
    "agent_waste", "baseline_waste", "norm_waste_pct",
)
TRACE_COLUMNS = (
    "step", "item_id", "action", "delivered", "demanded", "sold", "missed", "wasted", "reward", "stock_count",
)
REWARD_NORMALIZATIONS = ("none", "price")
LOG_COLUMNS = ("update_idx", "loss", "epsilon", "mean_q_or_mean_lambda")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class RunSettings:
    """Everything that is not an agent hyperparameter."""

    config_version: int = CONFIG_VERSION
    agent: str = "gtdqn"
    scenario: str = "H0"
    waste_weight: float = 1.0
    seed: int = 0
    # training
    train_items: int = 100
    train_steps: int = 1000        # environment steps; each yields one transition per item
    episode_steps: int = 500       # environment is re-seeded after this many steps
    updates_per_step: int = 1
    reward_normalization: str = "none"  # "price" divides each item's training reward by its price
    warmup_transitions: int = 1000
    log_every: int = 1
    checkpoint_every: int = 0      # updates between checkpoints; 0 writes only the final one
    # evaluation
    eval_generations: int = 5
    eval_items: int = 50
    eval_steps: int = 500
    sq_safety_days: float = 1.0
    sq_cover_days: float = 1.0
    # environment
    max_stock: int = 100
    max_order: int = 20
    lead_time: int = 4
    sub_periods_per_day: int = 4
    horizon_days: int = 7
    order_cost_per_unit: float = 0.0
    start_day: int = 0
    shelf_scale: float = 30.0
    forecast_scale: float = 10.0


_RUN_FIELDS = tuple(f.name for f in fields(RunSettings))
_COUNT_FIELDS = (
    "train_items", "train_steps", "episode_steps", "updates_per_step", "log_every",
    "eval_generations", "eval_items", "eval_steps", "max_stock", "lead_time", "sub_periods_per_day",
    "horizon_days",
)


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSettings = field(default_factory=RunSettings)
    agent: AgentConfig = field(default_factory=AgentConfig)

    @property
    def sigma(self) -> float:
        return market.SCENARIO_SIGMA[self.run.scenario]

    def store_config(self) -> StoreConfig:
        r = self.run
        n = r.sub_periods_per_day
        default_mean = market.CustomerModel().mean
        if n == len(default_mean):
            customers = market.CustomerModel()
        else:
            customers = market.CustomerModel(mean=tuple(np.full(n, sum(default_mean) / n)))
        return StoreConfig(
            max_stock=r.max_stock, max_order=r.max_order, lead_time=r.lead_time, waste_weight=r.waste_weight,
            order_cost_per_unit=r.order_cost_per_unit, start_day=r.start_day,
            seasonality=market.SeasonalityConfig(sub_periods_per_day=n),
            forecast=market.ForecastConfig(sigma=self.sigma, horizon_days=r.horizon_days),
            customers=customers,
        )

    def to_dict(self) -> dict:
        d = asdict(self.run)
        d.update(self.agent.to_dict())
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a flat mapping; every problem is reported in one error."""
        errors = []
        unknown = sorted(set(data) - set(_RUN_FIELDS) - set(_AGENT_FIELDS))
        if unknown:
            errors.append(f"unknown keys: {', '.join(unknown)}")
        version = data.get("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            errors.append(f"config_version {version} is not supported (expected {CONFIG_VERSION})")
        run_kw = {k: data[k] for k in _RUN_FIELDS if k in data}
        agent_kw = {k: data[k] for k in _AGENT_FIELDS if k in data}
        for source, defaults in ((run_kw, RunSettings()), (agent_kw, AgentConfig())):
            for k, v in list(source.items()):
                default = getattr(defaults, k)
                try:
                    source[k] = _coerce(v, default)
                except (TypeError, ValueError):
                    errors.append(f"{k}: cannot interpret {v!r} as {type(default).__name__}")
                    del source[k]
        run = RunSettings(**run_kw)
        errors.extend(_validate_run(run))
        agent = None
        try:
            agent = AgentConfig(**agent_kw)
        except (TypeError, ValueError) as exc:
            errors.extend(str(exc).split("; "))
        if errors:
            raise ConfigError(errors)
        return cls(run, agent)

    def replace(self, **overrides) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(overrides)
        return ExperimentConfig.from_dict(d)


def _coerce(value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ValueError(value)
    if isinstance(default, int):
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise ValueError(value)
        return int(float(value))
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ValueError(value)
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        return tuple(int(v) for v in value)
    return type(default)(value)


def _validate_run(r: RunSettings) -> list:
    errors = []
    if r.agent not in AGENTS:
        errors.append(f"agent must be one of {sorted(AGENTS)}")
    if r.reward_normalization not in REWARD_NORMALIZATIONS:
        errors.append(f"reward_normalization must be one of {REWARD_NORMALIZATIONS}")
    if r.scenario not in market.SCENARIO_SIGMA:
        errors.append(f"scenario must be one of {sorted(market.SCENARIO_SIGMA)}")
    for name in _COUNT_FIELDS:
        if getattr(r, name) < 1:
            errors.append(f"{name} must be positive")
    for name in ("warmup_transitions", "checkpoint_every", "max_order", "start_day"):
        if getattr(r, name) < 0:
            errors.append(f"{name} must be non-negative")
    for name in ("waste_weight", "order_cost_per_unit", "sq_safety_days", "sq_cover_days"):
        if getattr(r, name) < 0:
            errors.append(f"{name} must be non-negative")
    if not (r.shelf_scale > 0 and r.forecast_scale > 0):
        errors.append("shelf_scale and forecast_scale must be positive")
    return errors


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(["config file must hold a single JSON object"])
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# Tuned so that one training run takes two to three minutes on one core.
DESK_AGENT = dict(
    gamma=0.99, lr=1e-3, lr_final=1e-4, adam_beta2=0.999, batch_size=64, target_sync=500,
    buffer_capacity=100_000, epsilon=0.01, epsilon_start=1.0, reward_scale=0.1,
    trunk=(128, 64), observe_position=True,
)

NAMED_CONFIGS = {
    "desk": dict(train_items=20, train_steps=10_000, updates_per_step=4, reward_normalization="price",
                 max_order=10, eval_generations=5, eval_items=50, eval_steps=500),
    "paper": dict(train_items=6000, train_steps=5000, eval_generations=30, eval_items=100, eval_steps=2000,
                  trunk=(128, 64), lr=1e-4, lr_final=None, gamma=0.99, target_sync=500, reward_scale=1.0,
                  epsilon_start=0.01, epsilon_decay_updates=0, observe_position=False),
    "smoke": dict(train_items=4, train_steps=40, warmup_transitions=32, batch_size=16, eval_generations=2,
                  eval_items=3, eval_steps=24, trunk=(8, 4), max_stock=12, target_sync=10),
}


def named_config(name: str, **overrides) -> ExperimentConfig:
    """A preset with the lr and epsilon schedules tied to the run length unless given explicitly."""
    if name not in NAMED_CONFIGS:
        raise ValueError(f"unknown named config {name!r}; choose from {sorted(NAMED_CONFIGS)}")
    d = dict(DESK_AGENT)
    d.update(NAMED_CONFIGS[name])
    d.update(overrides)
    return with_schedules(d)


def with_schedules(d: dict) -> ExperimentConfig:
    d = dict(d)
    run = RunSettings(**{k: d[k] for k in _RUN_FIELDS if k in d})
    total = max(total_updates(run), 1)
    if d.get("lr_final") is not None and not d.get("lr_decay_updates"):
        d["lr_decay_updates"] = total
    if d.get("epsilon_start", 1.0) != d.get("epsilon", 0.01) and not d.get("epsilon_decay_updates"):
        d["epsilon_decay_updates"] = max(total // 2, 1)
    return ExperimentConfig.from_dict(d)


def total_updates(run: RunSettings) -> int:
    warm_steps = -(-run.warmup_transitions // run.train_items)
    return max(run.train_steps - warm_steps + 1, 0) * run.updates_per_step


def _stream(seed: int, key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(key,))


# -- training -------------------------------------------------------------------

@dataclass
class TrainResult:
    agent: ValueAgent
    log: list  # rows of LOG_COLUMNS
    checkpoints: list
    transitions: int
    wall_updates: int


def build_agent(cfg: ExperimentConfig, seed=None) -> ValueAgent:
    r = cfg.run
    return make_agent(
        r.agent, r.max_stock, r.horizon_days, r.max_order + 1, cfg.agent,
        seed=_stream(r.seed, _AGENT) if seed is None else seed,
        shelf_scale=r.shelf_scale, forecast_scale=r.forecast_scale,
    )


def run_training(cfg: ExperimentConfig, out_dir=None, progress: Callable | None = None) -> TrainResult:
    """Train ``cfg.run.agent`` on freshly generated items.

    Episodes are truncated after ``episode_steps`` and the environment is
    re-seeded; truncation is not a terminal state, so transitions always
    bootstrap.
    """
    r = cfg.run
    store_cfg = cfg.store_config()
    items = generate_items(CopulaModel(), r.train_items, np.random.default_rng(_stream(r.seed, _TRAIN_ITEMS)))
    agent = build_agent(cfg)
    env_seeds = _stream(r.seed, _TRAIN_ENV)
    episode = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    # a positive per-item factor leaves each item's optimal policy unchanged
    reward_factor = 1.0 / items.price if r.reward_normalization == "price" else np.ones(len(items))
    log, checkpoints = [], []
    env = None
    obs = None
    for step in range(r.train_steps):
        if step % r.episode_steps == 0:
            env = StoreEnv(items, store_cfg, seed=seeding.children(env_seeds, episode + 1)[episode])
            episode += 1
            obs = env.observe()
        x = obs.to_array(agent.spec.observe_position)
        action = agent.act(x, explore=True)
        obs, outcome = env.step(action)
        agent.remember(x, action, outcome.reward * reward_factor, obs.to_array(agent.spec.observe_position), False)
        if len(agent.buffer) < max(r.warmup_transitions, 1):
            continue
        for _ in range(r.updates_per_step):
            eps = agent.epsilon
            loss, value = agent.learn()
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at update {agent.updates}")
            if agent.updates % r.log_every == 0:
                log.append((agent.updates, loss, eps, value))
            if out_dir is not None and r.checkpoint_every and agent.updates % r.checkpoint_every == 0:
                checkpoints.append(_checkpoint(agent, cfg, out_dir / f"checkpoint_{agent.updates:08d}.npz"))
        if progress is not None:
            progress(step, agent)
    if out_dir is not None:
        checkpoints.append(_checkpoint(agent, cfg, out_dir / "checkpoint.npz"))
        write_training_log(log, out_dir / "training_log.csv")
    return TrainResult(agent, log, checkpoints, r.train_steps * r.train_items, agent.updates)


def _checkpoint(agent: ValueAgent, cfg: ExperimentConfig, path: Path) -> Path:
    meta = agent.state_meta()
    meta["experiment"] = cfg.to_dict()
    neural.save_checkpoint(path, agent.spec, agent.params, meta)
    return path


def load_agent(cfg: ExperimentConfig, checkpoint) -> ValueAgent:
    spec, params, meta = neural.load_checkpoint(checkpoint)
    agent = build_agent(cfg)
    if spec != agent.spec:
        raise ValueError("checkpoint network does not match the configured agent")
    if meta.get("agent") != cfg.run.agent:
        raise ValueError(f"checkpoint holds a {meta.get('agent')!r} agent, config asks for {cfg.run.agent!r}")
    agent.load_params(params)
    agent.updates = int(meta.get("updates", 0))
    return agent


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_training_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# -- evaluation -----------------------------------------------------------------

class GreedyPolicy:
    """Wraps an agent so that it always acts greedily."""

    def __init__(self, agent: ValueAgent):
        self.agent = agent

    def act(self, obs, explore: bool = False, rng=None) -> np.ndarray:
        return self.agent.act(obs, explore=False)


@dataclass
class Rollout:
    totals: dict          # per-item sums of every StepOutcome field
    on_hand: np.ndarray
    in_transit: np.ndarray
    forecast_mae: float
    trace: list | None = None

    @property
    def profit(self) -> np.ndarray:
        """Money earned: sales reward minus the unweighted cost of wasted units."""
        return self.totals["sales_reward"] - self.totals["waste_cost"] - self.totals["order_cost"]

    @property
    def waste(self) -> np.ndarray:
        return self.totals["wasted"]

    def conservation_violations(self) -> int:
        t = self.totals
        bad = t["delivered"] != t["sold"] + t["wasted"] + self.on_hand
        bad |= t["ordered"] != t["delivered"] + t["overflow"] + self.in_transit
        return int(bad.sum())


def rollout(policy, items: ItemSet, store_cfg: StoreConfig, seed, steps: int, trace: bool = False) -> Rollout:
    env = StoreEnv(items, store_cfg, seed=seed)
    obs = env.observe()
    rows = [] if trace else None
    for step in range(steps):
        action = policy.act(obs)
        obs, out = env.step(action)
        if trace:
            rows.extend(_trace_rows(step, items, out, env.on_hand()))
    return Rollout({k: v.copy() for k, v in env.totals.items()}, env.on_hand(), env.in_transit(),
                   env.forecast_mae, rows)


def _trace_rows(step, items, out: StepOutcome, stock_count):
    return [
        (step, int(items.item_id[i]), int(out.ordered[i]), int(out.delivered[i]), int(out.demanded[i]),
         int(out.sold[i]), int(out.missed[i]), int(out.wasted[i]), float(out.reward[i]), int(stock_count[i]))
        for i in range(len(items))
    ]


@dataclass
class GenerationResult:
    generation: int
    agent_profit: float           # summed over items with positive baseline profit
    baseline_profit: float
    norm_profit_pct: float
    agent_waste: float            # units, all items
    baseline_waste: float
    norm_waste_pct: float
    excluded_items: int           # items whose baseline profit is not positive
    excluded_agent_profit: float
    excluded_baseline_profit: float
    agent_availability: float
    baseline_availability: float
    forecast_mae: float
    conservation_violations: int
    item_agent_profit: np.ndarray = field(repr=False, default=None)
    item_baseline_profit: np.ndarray = field(repr=False, default=None)

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in GENERATION_COLUMNS)


@dataclass
class RunResult:
    config: ExperimentConfig
    generations: list
    trace: list | None = None

    def scores(self, column: str = "norm_profit_pct") -> np.ndarray:
        return np.array([getattr(g, column) for g in self.generations], dtype=float)

    def summary(self) -> dict:
        out = {}
        for column in ("norm_profit_pct", "norm_waste_pct"):
            s = self.scores(column)
            out[column] = {
                "mean": float(np.mean(s)),
                "median": float(np.median(s)),
                "mad": median_absolute_deviation(s),
                "std_error": standard_error(s),
            }
        out["forecast_mae"] = float(np.mean(self.scores("forecast_mae")))
        out["excluded_items"] = int(sum(g.excluded_items for g in self.generations))
        out["conservation_violations"] = int(sum(g.conservation_violations for g in self.generations))
        return out


def median_absolute_deviation(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.median(np.abs(x - np.median(x))))


def standard_error(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def _pct(num: float, den: float) -> float:
    return 100.0 * num / den if den != 0 else float("nan")


def evaluation_data(cfg: ExperimentConfig):
    """Yields ``(generation, items, env_seed)``; depends only on the seed and eval settings."""
    r = cfg.run
    item_seeds = seeding.children(_stream(r.seed, _EVAL_ITEMS), r.eval_generations)
    env_seeds = seeding.children(_stream(r.seed, _EVAL_ENV), r.eval_generations)
    for g in range(r.eval_generations):
        items = generate_items(CopulaModel(), r.eval_items, np.random.default_rng(item_seeds[g]))
        yield g, items, env_seeds[g]


def run_evaluation(cfg: ExperimentConfig, policy_factory, trace: bool = False) -> RunResult:
    """Greedy evaluation against the calibrated (s, Q) baseline on paired data.

    ``policy_factory(items, store_cfg)`` returns the policy under test, or it
    may be an agent, in which case it is wrapped greedily.
    """
    if isinstance(policy_factory, ValueAgent):
        agent = policy_factory
        width = cfg.store_config().obs_width + agent.spec.observe_position
        if agent.spec.input_width != width or agent.spec.n_actions != cfg.run.max_order + 1:
            raise ValueError("agent network does not match the evaluation environment")
        policy_factory = lambda items, store_cfg: GreedyPolicy(agent)  # noqa: E731
    r = cfg.run
    store_cfg = cfg.store_config()
    generations, trace_rows = [], [] if trace else None
    for g, items, env_seed in evaluation_data(cfg):
        policy = policy_factory(items, store_cfg)
        base_policy = SQPolicy.calibrated(items, store_cfg, safety_days=r.sq_safety_days, cover_days=r.sq_cover_days)
        ours = rollout(policy, items, store_cfg, env_seed, r.eval_steps, trace=trace and g == 0)
        base = rollout(base_policy, items, store_cfg, env_seed, r.eval_steps)
        keep = base.profit > 0
        agent_profit = float(ours.profit[keep].sum())
        baseline_profit = float(base.profit[keep].sum())
        agent_waste = float(ours.waste.sum())
        baseline_waste = float(base.waste.sum())
        generations.append(GenerationResult(
            g, agent_profit, baseline_profit, _pct(agent_profit, baseline_profit),
            agent_waste, baseline_waste, _pct(agent_waste, baseline_waste),
            int((~keep).sum()), float(ours.profit[~keep].sum()), float(base.profit[~keep].sum()),
            _availability(ours), _availability(base), ours.forecast_mae,
            ours.conservation_violations() + base.conservation_violations(),
            ours.profit, base.profit,
        ))
        if trace and g == 0:
            trace_rows = ours.trace
    return RunResult(cfg, generations, trace_rows)


def _availability(ro: Rollout) -> float:
    demanded = ro.totals["demanded"].sum()
    return float(ro.totals["sold"].sum() / demanded) if demanded > 0 else 1.0


# -- result files ---------------------------------------------------------------

def generations_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GENERATION_COLUMNS)
    for g in result.generations:
        w.writerow([_fmt(v) for v in g.row()])
    return buf.getvalue()


def read_generations_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "generation" else float(v)) for k, v in row.items()} for row in rows]


def manifest(result: RunResult, extra: dict | None = None) -> dict:
    cfg = result.config
    out = {
        "config_version": CONFIG_VERSION,
        "config": cfg.to_dict(),
        "seeds": {
            "seed": cfg.run.seed,
            "streams": {"train_items": _TRAIN_ITEMS, "train_env": _TRAIN_ENV, "agent": _AGENT,
                        "eval_items": _EVAL_ITEMS, "eval_env": _EVAL_ENV},
        },
        "forecast_sigma": cfg.sigma,
        "summary": result.summary(),
        "dispersion_labels": {"mad": "median absolute deviation across generations",
                              "std_error": "standard error of the mean across generations"},
        "excluded": [
            {"generation": g.generation, "items": g.excluded_items,
             "agent_profit": g.excluded_agent_profit, "baseline_profit": g.excluded_baseline_profit}
            for g in result.generations
        ],
        "availability": [
            {"generation": g.generation, "agent": g.agent_availability, "baseline": g.baseline_availability}
            for g in result.generations
        ],
    }
    if extra:
        out.update(extra)
    return out


def emit_results(result: RunResult, out_dir, extra: dict | None = None) -> dict:
    """Writes ``generations.csv``, ``manifest.json`` and, if traced, ``trace.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"generations": out_dir / "generations.csv", "manifest": out_dir / "manifest.json"}
    paths["generations"].write_text(generations_csv(result))
    paths["manifest"].write_text(json.dumps(manifest(result, extra), indent=2, sort_keys=True) + "\n")
    if result.trace is not None:
        paths["trace"] = out_dir / "trace.csv"
        with open(paths["trace"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in result.trace:
                w.writerow([_fmt(v) for v in row])
    return paths


# -- audit ----------------------------------------------------------------------

@dataclass
class AuditReport:
    episodes: int
    steps: int
    conservation_violations: int
    reward_violations: int
    lifo_violations: int

    @property
    def ok(self) -> bool:
        return self.conservation_violations == self.reward_violations == self.lifo_violations == 0


def audit(cfg: ExperimentConfig, episodes: int = 10, steps: int = 500, items_per_episode: int = 10) -> AuditReport:
    """Random-policy sweep checking stock conservation, reward decomposition and LIFO sales."""
    store_cfg = cfg.store_config()
    root = np.random.SeedSequence(cfg.run.seed, spawn_key=(99,))
    conservation = reward = lifo = 0
    for ss in seeding.children(root, episodes):
        s_items, s_env, s_pol = seeding.children(ss, 3)
        items = generate_items(CopulaModel(), items_per_episode, np.random.default_rng(s_items))
        env = StoreEnv(items, store_cfg, seed=s_env)
        pol_rng = np.random.default_rng(s_pol)
        for _ in range(steps):
            before = env.state.stock.copy()
            sub_period = env.state.sub_period
            _, out = env.step(pol_rng.integers(0, store_cfg.max_order + 1, len(items)))
            expected = (out.sold - out.missed) * items.margin - store_cfg.waste_weight * out.wasted * items.cost \
                - out.ordered * store_cfg.order_cost_per_unit
            reward += int(np.sum(~np.isclose(out.reward, expected, rtol=0, atol=1e-9)))
            if sub_period != store_cfg.tau - 1:
                lifo += _lifo_violations(before, out, items, env.state.stock)
        ro = Rollout(env.totals, env.on_hand(), env.in_transit(), env.forecast_mae)
        conservation += ro.conservation_violations()
    return AuditReport(episodes, steps, conservation, reward, lifo)


def _lifo_violations(before, out, items, after) -> int:
    """After a mid-day step, stock must equal the smallest shelf lives left once deliveries land and sales
    take the freshest units."""
    bad = 0
    for i in range(len(items)):
        pool = np.concatenate([before[i][before[i] > 0], np.full(out.delivered[i], items.shelf_life[i])])
        pool = np.sort(pool)[::-1][out.sold[i]:]
        if not np.array_equal(np.sort(after[i][after[i] > 0])[::-1], pool):
            bad += 1
    return bad
