"""Experiment configuration, per-seed runs, robustness sweeps and reports."""

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import InvalidInputError
from .data import Dataset
from .envs import (GridSpec, PerturbationSpec, Simulator, cliff_walk, compile,
                   generate_offline_dataset, make_pair, perturbed)
from .evaluation import evaluate_policy
from .fitted import TrainConfig
from .learners import (LOG_COLUMNS, fit_learner, load_checkpoint, make_learner,
                       save_checkpoint)
from .rmdp import UncertaintySpec, robust_value_iteration

SCHEMA_VERSION = 1
METHODS = ("fqi", "rfqi", "hydro", "naive-merge", "hydro-no-priority", "hydro-no-filter")
SWEEP_COLUMNS = ["method", "perturb_param", "magnitude", "seed", "mean_return",
                 "std_return", "n_episodes"]
REPORT_COLUMNS = ["method", "perturb_param", "magnitude", "n_seeds", "mean_return",
                  "std_return"]
DEFAULT_MAGNITUDES = tuple(round(0.05 * i, 2) for i in range(11))


def _reject_unknown(d, known, where):
    unknown = set(d) - set(known)
    if unknown:
        raise InvalidInputError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class EvalSpec:
    episodes: int = 200
    horizon: int = 100
    perturb_param: str = "slip_prob"
    magnitudes: tuple = DEFAULT_MAGNITUDES

    def __post_init__(self):
        self.magnitudes = tuple(float(m) for m in self.magnitudes)
        PerturbationSpec(self.perturb_param, self.magnitudes)
        if self.episodes < 1 or self.horizon < 0:
            raise InvalidInputError("episodes must be >= 1 and horizon >= 0")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one method's runs over a seed list.

    ``dataset_seed`` is offset by each run seed, so every seed sees its own
    offline dataset unless ``dataset_path`` pins a file.
    """

    method: str = "hydro"
    base_env: GridSpec = field(default_factory=cliff_walk)
    source_shift: dict = field(default_factory=lambda: {"slip_prob": 0.2})
    dataset_size: int = 500
    dataset_seed: int = 0
    dataset_epsilon: float = 0.3
    dataset_path: str = None
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    seeds: tuple = tuple(range(10))
    output_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}, got {self.method!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise InvalidInputError("the seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidInputError("seeds must be distinct")
        if self.dataset_size < 1:
            raise InvalidInputError("dataset_size must be at least 1")
        if self.dataset_path is not None and not os.path.isfile(self.dataset_path):
            raise InvalidInputError(f"dataset file not found: {self.dataset_path}")
        if self.workers < 1:
            raise InvalidInputError("workers must be at least 1")
        if abs(self.base_env.gamma - self.train.gamma) > 0:
            raise InvalidInputError("env gamma and train gamma differ")
        make_pair(self.base_env, self.source_shift)

    _KEYS = ("schema_version", "method", "env", "dataset", "train", "eval", "seeds",
             "output_dir", "workers")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls._from_dict(d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"invalid config: {exc}") from exc

    @classmethod
    def _from_dict(cls, d):
        _reject_unknown(d, cls._KEYS, "config")
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise InvalidInputError(
                f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        kw = {}
        env = dict(d.get("env", {}))
        _reject_unknown(env, ("base", "source_shift"), "env")
        if "base" in env:
            kw["base_env"] = GridSpec.from_dict(env["base"])
        if "source_shift" in env:
            kw["source_shift"] = dict(env["source_shift"])
        data = dict(d.get("dataset", {}))
        _reject_unknown(data, ("size", "seed", "epsilon", "path"), "dataset")
        for key in ("size", "seed", "epsilon", "path"):
            if key in data:
                kw[f"dataset_{key}"] = data[key]
        train = dict(d.get("train", {}))
        if "base" in env and "gamma" not in train:
            train["gamma"] = kw["base_env"].gamma
        kw["train"] = TrainConfig.from_dict(train)
        ev = dict(d.get("eval", {}))
        _reject_unknown(ev, ("episodes", "horizon", "perturb_param", "magnitudes"), "eval")
        kw["eval"] = EvalSpec(**ev)
        for key in ("method", "seeds", "output_dir", "workers"):
            if key in d:
                kw[key] = d[key]
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "env": {"base": self.base_env.to_dict(), "source_shift": self.source_shift},
            "dataset": {"size": self.dataset_size, "seed": self.dataset_seed,
                        "epsilon": self.dataset_epsilon, "path": self.dataset_path},
            "train": self.train.to_dict(),
            "eval": {"episodes": self.eval.episodes, "horizon": self.eval.horizon,
                     "perturb_param": self.eval.perturb_param,
                     "magnitudes": list(self.eval.magnitudes)},
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "workers": self.workers,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# -- building blocks ---------------------------------------------------------

def env_pair(config):
    """``(target spec, source spec, compiled target MDP)``."""
    target, source = make_pair(config.base_env, config.source_shift)
    return target, source, compile(target)


def behavior_policy(mdp):
    """Nominal-optimal greedy policy used to collect offline data."""
    return robust_value_iteration(mdp, UncertaintySpec(0.0)).policy


def make_dataset(config, seed):
    if config.dataset_path is not None:
        with open(config.dataset_path) as fh:
            return Dataset.from_csv(fh.read())
    _, _, mdp = env_pair(config)
    return generate_offline_dataset(mdp, behavior_policy(mdp), config.dataset_epsilon,
                                    config.dataset_size, config.dataset_seed + seed)


def train_one(config, seed):
    """Fit ``config.method`` for one seed; returns the fitted learner."""
    _, source, mdp = env_pair(config)
    params = config.train.to_dict()
    params["seed"] = seed
    model = make_learner(config.method, params)
    return fit_learner(model, make_dataset(config, seed), Simulator(source, seed),
                       mdp.n_states, mdp.n_actions)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def log_to_csv(log):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in log:
        w.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])
    return buf.getvalue()


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _write_atomic(path, text):
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def evaluate_sweep(q, config, seed):
    """One row per perturbation magnitude for the greedy policy of ``q``."""
    ev = config.eval
    rows = []
    for i, mag in enumerate(ev.magnitudes):
        mdp = compile(perturbed(config.base_env, ev.perturb_param, mag))
        eval_seed = np.random.SeedSequence([seed, i, 7919]).generate_state(1)[0]
        mean, std = evaluate_policy(q, mdp, ev.episodes, ev.horizon, int(eval_seed))
        rows.append({"method": config.method, "perturb_param": ev.perturb_param,
                     "magnitude": mag, "seed": seed, "mean_return": mean,
                     "std_return": std, "n_episodes": ev.episodes})
    return rows


def _run_seed(config, seed):
    out = config.output_dir
    ckpt = os.path.join(out, "checkpoints", f"{config.method}_seed{seed}.json")
    if os.path.isfile(ckpt):
        model = load_checkpoint(ckpt)
    else:
        model = train_one(config, seed)
        _write_atomic(os.path.join(out, "logs", f"{config.method}_seed{seed}.csv"),
                      log_to_csv(model.log_))
        os.makedirs(os.path.dirname(ckpt), exist_ok=True)
        save_checkpoint(model, ckpt)
    return evaluate_sweep(model.q_table_, config, seed)


def _worker(args):
    config_json, seed, tmp_path = args
    rows = _run_seed(ExperimentConfig.from_json(config_json), seed)
    with open(tmp_path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows, SWEEP_COLUMNS))
    return tmp_path


def run_sweep(config):
    """Train (or reload) every seed, evaluate across the perturbation grid
    and write ``<output_dir>/sweep_<method>.csv``.

    Checkpoints make reruns idempotent: an existing checkpoint for a
    ``(method, seed)`` is evaluated instead of retrained. Returns
    ``(rows, csv_path)``.
    """
    try:
        os.makedirs(config.output_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {config.output_dir}: {exc}") from exc
    path = os.path.join(config.output_dir, f"sweep_{config.method}.csv")
    if config.workers == 1:
        rows = [r for seed in config.seeds for r in _run_seed(config, seed)]
    else:
        with tempfile.TemporaryDirectory(dir=config.output_dir) as tmp:
            jobs = [(config.to_json(), seed, os.path.join(tmp, f"{seed}.csv"))
                    for seed in config.seeds]
            with ProcessPoolExecutor(config.workers) as pool:
                parts = list(pool.map(_worker, jobs))
            rows = []
            for part in parts:
                with open(part) as fh:
                    rows.extend(read_sweep_csv(fh.read(), part))
    _write_atomic(path, rows_to_csv(rows, SWEEP_COLUMNS))
    return rows, path


# -- reading and aggregating -------------------------------------------------

def read_sweep_csv(text, name="<input>"):
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    for col in SWEEP_COLUMNS:
        if col not in header:
            raise InvalidInputError(f"{name}: missing column {col!r}")
    for col in header:
        if col not in SWEEP_COLUMNS:
            raise InvalidInputError(f"{name}: unexpected column {col!r}")
    rows = []
    for rec in reader:
        try:
            rows.append({"method": rec["method"], "perturb_param": rec["perturb_param"],
                         "magnitude": float(rec["magnitude"]), "seed": int(rec["seed"]),
                         "mean_return": float(rec["mean_return"]),
                         "std_return": float(rec["std_return"]),
                         "n_episodes": int(rec["n_episodes"])})
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"{name}: malformed row {rec}: {exc}") from exc
    return rows


def load_sweeps(paths):
    rows = []
    for p in paths:
        with open(p) as fh:
            rows.extend(read_sweep_csv(fh.read(), p))
    return rows


def report(rows):
    """Per ``(method, perturb_param, magnitude)`` mean and std over seeds.

    The std column uses ``ddof=1`` and is 0 for a single seed.
    """
    if not rows:
        raise InvalidInputError("no sweep rows to report on")
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["perturb_param"], r["magnitude"]), []).append(
            r["mean_return"])
    out = []
    for (method, param, mag), vals in sorted(groups.items()):
        v = np.asarray(vals)
        out.append({"method": method, "perturb_param": param, "magnitude": mag,
                    "n_seeds": v.size, "mean_return": float(v.mean()),
                    "std_return": float(v.std(ddof=1)) if v.size > 1 else 0.0})
    return out


def per_seed_sweep_means(rows, method, magnitudes=None):
    """Sweep-averaged return of each seed of ``method`` (uniform over the
    grid points, optionally restricted to ``magnitudes``)."""
    by_seed = {}
    for r in rows:
        if r["method"] != method:
            continue
        if magnitudes is not None and not np.any(np.isclose(r["magnitude"], magnitudes)):
            continue
        by_seed.setdefault(r["seed"], []).append(r["mean_return"])
    if not by_seed:
        raise InvalidInputError(f"no rows for method {method!r}")
    return np.array([np.mean(by_seed[s]) for s in sorted(by_seed)])
