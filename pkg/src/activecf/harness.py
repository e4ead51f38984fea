"""Simulated rating elicitation: sessions over test users and strategy comparison."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .active_user import STATS_PRIOR_WEIGHT, ActiveUserState
from .aspect_model import AspectModel, TrainConfig, align_model, load_model, predict_rating, save_model, train_em
from .dataset import TestUser, generate_synthetic, load_dataset, split_protocol
from .strategies import StrategyKind, select_item

_logger = logging.getLogger(__name__)

_STRATEGY_INDEX = {kind: i for i, kind in enumerate(StrategyKind)}


def mae(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("predictions and truths must be nonempty and equally long")
    return float(np.mean(np.abs(t - p)))


@dataclass(frozen=True)
class RoundRecord:
    round: int
    item: int | None
    rating: int | None
    mae: float
    carried: bool = False


@dataclass(frozen=True)
class SessionLog:
    user: int
    strategy: StrategyKind
    rounds: tuple
    theta: tuple = ()
    alpha: tuple = ()
    losses: tuple = field(default=(), repr=False)

    @property
    def maes(self) -> list:
        return [r.mae for r in self.rounds]

    @property
    def queried(self) -> list:
        return [r.item for r in self.rounds if r.item is not None]


def _holdout_mae(model, state, holdout) -> float:
    items = [x for x, _ in holdout]
    truths = [r for _, r in holdout]
    return mae(predict_rating(model, state.theta_star, np.asarray(items), state.stats), truths)


def session_rng(master_seed: int, strategy: StrategyKind, user: int) -> np.random.Generator:
    """Independent stream per (master seed, strategy, user)."""
    ss = np.random.SeedSequence([int(master_seed), _STRATEGY_INDEX[StrategyKind(strategy)], int(user)])
    return np.random.default_rng(ss)


def run_session(model: AspectModel, test_user: TestUser, strategy: StrategyKind, rounds: int = 5,
                rng=None, keep_losses: bool = False,
                prior_weight: float = STATS_PRIOR_WEIGHT) -> SessionLog:
    """Elicit up to ``rounds`` ratings from one simulated user.

    Round 0 is the holdout MAE from the seed ratings alone. If the candidate
    pool runs out, the last MAE is carried forward and flagged.
    """
    strategy = StrategyKind(strategy)
    if not test_user.candidates:
        raise ValueError(f"user {test_user.user} has an empty candidate pool")
    holdout_items = {x for x, _ in test_user.holdout}
    rng = np.random.default_rng(rng)
    state = ActiveUserState.from_revealed(model, test_user.seed, prior_weight)
    records = [RoundRecord(0, None, None, _holdout_mae(model, state, test_user.holdout))]
    pool = sorted(x for x, _ in test_user.candidates)
    losses = []
    for rnd in range(1, rounds + 1):
        if not pool:
            records.append(RoundRecord(rnd, None, None, records[-1].mae, carried=True))
            continue
        item, report = select_item(strategy, model, state, pool, rng)
        assert item in pool and item not in holdout_items
        rating = test_user.rating_of(item)
        pool.remove(item)
        state = state.with_rating(model, item, rating)
        assert not holdout_items.intersection(state.rated_items)
        records.append(RoundRecord(rnd, item, rating, _holdout_mae(model, state, test_user.holdout)))
        if keep_losses:
            losses.append((rnd, report))
    return SessionLog(test_user.user, strategy, tuple(records),
                      tuple(state.theta_star.tolist()), tuple(state.alpha.tolist()), tuple(losses))


@dataclass
class ExperimentConfig:
    """Everything ``run_experiment`` needs: 3 seed ratings, 20 held out, 5 query rounds by default."""

    dataset: str | None = None
    delimiter: str = "\t"
    header: bool = False
    rating_scale: int = 5
    model: str | None = None
    synth_k: int = 4
    synth_users: int = 300
    synth_items: int = 50
    synth_ratings_per_user: int = 30
    synth_sigma: float = 0.3
    synth_concentration: float = 0.5
    synth_seed: int | None = None
    train_users: int = 200
    k: int = 5
    max_iter: int = 200
    loglik_tol: float = 1e-6
    seed_count: int = 3
    holdout_count: int = 20
    rounds: int = 5
    prior_weight: float = STATS_PRIOR_WEIGHT
    strategies: tuple = tuple(StrategyKind)
    seed: int = 0
    out: str = "results"
    jobs: int = 1
    dump_losses: bool = False

    def __post_init__(self):
        self.strategies = tuple(StrategyKind.parse(s) if isinstance(s, str) else StrategyKind(s)
                                for s in self.strategies)
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("duplicate strategy")
        if self.seed_count < 0 or self.holdout_count < 1:
            raise ValueError("seed_count must be >= 0 and holdout_count >= 1")
        if self.prior_weight < 0:
            raise ValueError("prior_weight must be non-negative")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


def _coerce(f: dataclasses.Field, raw: str):
    name, text = f.name, raw.strip()
    if name == "strategies":
        return tuple(s for s in text.replace(",", " ").split() if s)
    if name == "delimiter":
        return {"\\t": "\t", "tab": "\t", "comma": ",", "space": " "}.get(text, text)
    kind = str(f.type)
    if text.lower() in ("", "none") and "None" in kind:
        return None
    if kind.startswith("bool"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    return text


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse flat ``key = value`` lines (``#`` comments allowed) into a config."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as e:
        raise ValueError(f"config parse failure: {e}") from None
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for key, raw in parser["experiment"].items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        try:
            values[key] = _coerce(fields[key], raw)
        except ValueError as e:
            raise ValueError(f"config key {key!r}: {e}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


@dataclass(frozen=True)
class ResultRow:
    strategy: StrategyKind
    round: int
    mae_mean: float
    mae_stderr: float
    n_users: int


@dataclass(frozen=True)
class ResultsTable:
    rows: tuple
    sessions: tuple = field(default=(), repr=False)

    @classmethod
    def from_sessions(cls, sessions) -> ResultsTable:
        by_strategy: dict = {}
        for s in sessions:
            by_strategy.setdefault(s.strategy, []).append(s.maes)
        rows = []
        for kind in sorted(by_strategy, key=lambda k: k.value):
            m = np.array(by_strategy[kind])
            n = m.shape[0]
            for rnd in range(m.shape[1]):
                col = m[:, rnd]
                se = float(col.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
                rows.append(ResultRow(kind, rnd, float(col.mean()), se, n))
        return cls(tuple(rows), tuple(sessions))

    def mean(self, strategy, rnd) -> float:
        for row in self.rows:
            if row.strategy == StrategyKind(strategy) and row.round == rnd:
                return row.mae_mean
        raise KeyError((strategy, rnd))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "round", "mae_mean", "mae_stderr", "n_users"])
        for r in self.rows:
            w.writerow([r.strategy.value, r.round, f"{r.mae_mean:.4f}", f"{r.mae_stderr:.4f}", r.n_users])
        return buf.getvalue()


def prepare(cfg: ExperimentConfig):
    """Load or synthesize the data, split it and train (or load) the model."""
    if cfg.dataset:
        data = load_dataset(cfg.dataset, cfg.rating_scale, cfg.delimiter, cfg.header)
    else:
        data, _ = generate_synthetic(
            cfg.synth_k, cfg.synth_users, cfg.synth_items, cfg.synth_ratings_per_user,
            cfg.rating_scale, cfg.seed if cfg.synth_seed is None else cfg.synth_seed,
            sigma=cfg.synth_sigma, concentration=cfg.synth_concentration,
        )
    split_seed, train_seed = np.random.SeedSequence(cfg.seed).generate_state(2)
    split = split_protocol(data, cfg.train_users, cfg.seed_count, cfg.holdout_count, int(split_seed))
    if cfg.model:
        model = align_model(load_model(cfg.model), data.item_ids)
    else:
        train = data.subset_users(sorted(split.train_users))
        model = train_em(train, TrainConfig(cfg.k, cfg.max_iter, cfg.loglik_tol, seed=int(train_seed)))
    return data, split, model


_worker_model = None


def _init_worker(model):
    global _worker_model
    _worker_model = model


def _session_task(args):
    test_user, strategy, rounds, seed, keep, prior_weight = args
    return run_session(_worker_model, test_user, strategy, rounds,
                       session_rng(seed, strategy, test_user.user), keep, prior_weight)


def run_sessions(model, split, cfg: ExperimentConfig) -> list:
    tasks = [(tu, kind, cfg.rounds, cfg.seed, cfg.dump_losses, cfg.prior_weight)
             for kind in cfg.strategies for tu in split.test_users]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(model,)) as ex:
            return list(ex.map(_session_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))))
    _init_worker(model)
    return [_session_task(t) for t in tasks]


def _session_json(log: SessionLog, data) -> str:
    ids = data.item_ids
    return json.dumps({
        "user": data.user_ids[log.user],
        "strategy": log.strategy.value,
        "rounds": [
            {"round": r.round, "item": None if r.item is None else ids[r.item],
             "rating": r.rating, "mae": round(r.mae, 6), "carried": r.carried}
            for r in log.rounds
        ],
        "theta": [round(v, 10) for v in log.theta],
        "alpha": [round(v, 10) for v in log.alpha],
    }, sort_keys=True)


def write_outputs(table: ResultsTable, data, model, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(table.to_csv(), encoding="utf-8")
    with open(out / "sessions.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for log in table.sessions:
            fh.write(_session_json(log, data) + "\n")
    save_model(model, out / "model.txt")
    if any(log.losses for log in table.sessions):
        with open(out / "losses.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("strategy,user,round,item,loss\n")
            for log in table.sessions:
                for rnd, report in log.losses:
                    for line in report.to_csv(data.item_ids).splitlines()[1:]:
                        fh.write(f"{log.strategy.value},{data.user_ids[log.user]},{rnd},{line}\n")
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ResultsTable:
    """Train, run every (strategy, test user) session and aggregate MAE per round."""
    data, split, model = prepare(cfg)
    _logger.info("running %d sessions over %d test users", len(cfg.strategies) * len(split.test_users),
                 len(split.test_users))
    sessions = run_sessions(model, split, cfg)
    table = ResultsTable.from_sessions(sessions)
    if write:
        write_outputs(table, data, model, cfg.out)
    return table
