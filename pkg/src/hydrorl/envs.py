"""Slippery, windy cliff gridworlds with an absorbing fail state.

Cells are indexed ``y * width + x`` with ``y = 0`` the top row; the fail
state is the extra index ``width * height``. Actions are up, down, left,
right. A step first moves in the intended direction with probability
``1 - slip_prob`` and in each perpendicular direction with probability
``slip_prob / 2``; the column's wind then pushes the agent one row down
(towards the cliff row in the default layout) with probability
``wind_push[x]``. Off-grid moves clamp. Entering a cliff cell, after either
stage, lands in the fail state. The goal is absorbing and pays reward 1 on
every step spent there; every other reward is 0.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from ._validation import InvalidInputError
from .data import TARGET, Dataset
from .rmdp import TabularMDP

UP, DOWN, LEFT, RIGHT = range(4)
N_ACTIONS = 4
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}
_PERP = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}
PERTURBABLE = ("slip_prob", "wind_push")


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    cliff: tuple
    goal: tuple
    start: tuple  # ((x, y, prob), ...)
    slip_prob: float = 0.0
    wind_push: tuple = None
    gamma: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "cliff", tuple(tuple(map(int, c)) for c in self.cliff))
        object.__setattr__(self, "goal", tuple(map(int, self.goal)))
        object.__setattr__(self, "start", tuple(
            (int(x), int(y), float(p)) for x, y, p in self.start))
        wind = self.wind_push
        if wind is None:
            wind = 0.0
        if np.isscalar(wind):
            wind = (float(wind),) * int(self.width)
        object.__setattr__(self, "wind_push", tuple(float(w) for w in wind))
        self.validate()

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("grid dimensions must be positive")
        cells = [self.goal, *self.cliff, *[(x, y) for x, y, _ in self.start]]
        if any(not (0 <= x < self.width and 0 <= y < self.height) for x, y in cells):
            raise InvalidInputError("cell outside the grid")
        if self.goal in self.cliff:
            raise InvalidInputError("goal must not be a cliff cell")
        if any((x, y) in self.cliff for x, y, _ in self.start):
            raise InvalidInputError("start support intersects the cliff")
        probs = np.array([p for _, _, p in self.start])
        if probs.size == 0 or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
            raise InvalidInputError("start distribution is not a distribution")
        if not 0.0 <= self.slip_prob < 1.0:
            raise InvalidInputError(f"slip_prob must lie in [0, 1), got {self.slip_prob}")
        if len(self.wind_push) != self.width or any(
                not 0.0 <= w < 1.0 for w in self.wind_push):
            raise InvalidInputError("wind_push needs one value in [0, 1) per column")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError("gamma must lie in (0, 1)")

    @property
    def n_states(self):
        return self.width * self.height + 1

    @property
    def fail_state(self):
        return self.width * self.height

    def index(self, x, y):
        return y * self.width + x

    def coords(self, s):
        return s % self.width, s // self.width

    def to_dict(self):
        return {"width": self.width, "height": self.height,
                "cliff": [list(c) for c in self.cliff], "goal": list(self.goal),
                "start": [list(t) for t in self.start], "slip_prob": self.slip_prob,
                "wind_push": list(self.wind_push), "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d):
        known = {"width", "height", "cliff", "goal", "start", "slip_prob",
                 "wind_push", "gamma"}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown GridSpec keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def cliff_walk(width=5, height=5, slip_prob=0.1, wind_push=0.0, gamma=0.95):
    """Start in the bottom-left corner, goal bottom-right, cliff in between."""
    y = height - 1
    return GridSpec(width, height, cliff=[(x, y) for x in range(1, width - 1)],
                    goal=(width - 1, y), start=[(0, y, 1.0)], slip_prob=slip_prob,
                    wind_push=wind_push, gamma=gamma)


def _shift(spec, x, y, action):
    dx, dy = _MOVES[action]
    return (min(max(x + dx, 0), spec.width - 1), min(max(y + dy, 0), spec.height - 1))


def _outcomes(spec, s, a):
    """List of ``(probability, next_state)`` pairs for a non-absorbing cell."""
    x, y = spec.coords(s)
    slip = spec.slip_prob
    p1, p2 = _PERP[a]
    first = [(1.0 - slip, _shift(spec, x, y, a))]
    if slip > 0:
        first += [(slip / 2, _shift(spec, x, y, p1)), (slip / 2, _shift(spec, x, y, p2))]
    out = []
    for p, (cx, cy) in first:
        if (cx, cy) in spec.cliff:
            out.append((p, spec.fail_state))
            continue
        w = spec.wind_push[cx]
        for q, cell in ((1.0 - w, (cx, cy)), (w, _shift(spec, cx, cy, DOWN))):
            if q == 0:
                continue
            nxt = spec.fail_state if cell in spec.cliff else spec.index(*cell)
            out.append((p * q, nxt))
    return out


def compile(spec):
    """Exact :class:`TabularMDP` of a grid specification."""
    S, f = spec.n_states, spec.fail_state
    goal = spec.index(*spec.goal)
    kernel = np.zeros((S, N_ACTIONS, S))
    reward = np.zeros((S, N_ACTIONS))
    cliff = {spec.index(*c) for c in spec.cliff}
    for s in range(S):
        for a in range(N_ACTIONS):
            if s == f or s in cliff:
                kernel[s, a, f] = 1.0
            elif s == goal:
                kernel[s, a, s] = 1.0
                reward[s, a] = 1.0
            else:
                for p, nxt in _outcomes(spec, s, a):
                    kernel[s, a, nxt] += p
    init = np.zeros(S)
    for x, y, p in spec.start:
        init[spec.index(x, y)] += p
    return TabularMDP(kernel, reward, spec.gamma, init, fail_state=f)


def absorbing_states(mdp):
    idx = np.arange(mdp.n_states)
    return np.all(mdp.kernel[idx, :, idx] == 1.0, axis=1)


class Simulator:
    """Step/reset interface that samples the grid physics directly.

    The simulator never consults the compiled kernel, so agreement between
    the two is a genuine check of :func:`compile`.
    """

    def __init__(self, spec, seed=None):
        self.spec = spec
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._goal = spec.index(*spec.goal)
        self._start_states = np.array([spec.index(x, y) for x, y, _ in spec.start])
        self._start_probs = np.array([p for _, _, p in spec.start])
        self.state = None

    n_actions = N_ACTIONS

    @property
    def n_states(self):
        return self.spec.n_states

    def clone(self, seed):
        return Simulator(self.spec, seed)

    def is_absorbing(self, s):
        return s == self._goal or s == self.spec.fail_state

    def reset(self):
        self.state = int(self.rng.choice(self._start_states, p=self._start_probs))
        return self.state

    def step(self, action):
        """Advance one step; returns ``(next_state, reward)``."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        spec, s = self.spec, self.state
        f = spec.fail_state
        if s == f:
            return f, 0.0
        if s == self._goal:
            return s, 1.0
        x, y = spec.coords(s)
        if (x, y) in spec.cliff:
            self.state = f
            return f, 0.0
        u = self.rng.random()
        a = int(action)
        if u >= 1.0 - spec.slip_prob:
            a = _PERP[a][0] if u < 1.0 - spec.slip_prob / 2 else _PERP[a][1]
        cell = _shift(spec, x, y, a)
        if cell not in spec.cliff and self.rng.random() < spec.wind_push[cell[0]]:
            cell = _shift(spec, *cell, DOWN)
        self.state = f if cell in spec.cliff else spec.index(*cell)
        return self.state, 0.0


def make_pair(base, source_shift):
    """Return ``(target, source)`` specs differing only in dynamics.

    ``source_shift`` maps ``slip_prob`` and/or ``wind_push`` to additive
    deltas; a wind delta is added to every column.
    """
    unknown = set(source_shift) - set(PERTURBABLE)
    if unknown:
        raise InvalidInputError(f"cannot shift {sorted(unknown)}")
    changes = {}
    if "slip_prob" in source_shift:
        changes["slip_prob"] = base.slip_prob + float(source_shift["slip_prob"])
    if "wind_push" in source_shift:
        dw = float(source_shift["wind_push"])
        changes["wind_push"] = tuple(w + dw for w in base.wind_push)
    return base, replace(base, **changes)


@dataclass(frozen=True)
class PerturbationSpec:
    param: str
    magnitudes: tuple

    def __post_init__(self):
        if self.param not in PERTURBABLE:
            raise InvalidInputError(f"param must be one of {PERTURBABLE}")
        object.__setattr__(self, "magnitudes", tuple(float(m) for m in self.magnitudes))
        if not self.magnitudes:
            raise InvalidInputError("perturbation grid is empty")


def perturbed(base, param, magnitude):
    if param == "wind_push":
        return replace(base, wind_push=(float(magnitude),) * base.width)
    return replace(base, **{param: float(magnitude)})


def perturbation_sweep_envs(base, pspec):
    """One compiled MDP per magnitude, in grid order."""
    return [compile(perturbed(base, pspec.param, m)) for m in pspec.magnitudes]


def generate_offline_dataset(mdp, behavior, epsilon, n, seed, horizon=200):
    """Collect ``n`` target-domain transitions with an epsilon-greedy behaviour.

    Episodes start from ``init_dist`` and end after ``horizon`` steps or after
    the first step taken from an absorbing state, so absorbing self-loops
    appear in the data without dominating it.
    """
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidInputError("epsilon must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    behavior = np.asarray(behavior, dtype=int)
    absorbing = absorbing_states(mdp)
    S, A = mdp.n_states, mdp.n_actions
    cols = np.zeros((4, n))
    done = np.zeros(n, dtype=bool)
    s, t = None, 0
    for i in range(n):
        if s is None:
            s, t = int(rng.choice(S, p=mdp.init_dist)), 0
        a = int(rng.integers(A)) if rng.random() < epsilon else int(behavior[s])
        s_next = int(rng.choice(S, p=mdp.kernel[s, a]))
        cols[:, i] = s, a, mdp.reward[s, a], s_next
        t += 1
        done[i] = absorbing[s] or t >= horizon
        s = None if done[i] else s_next
    return Dataset(cols[0], cols[1], cols[2], cols[3], done, TARGET,
                   meta={"epsilon": epsilon, "seed": seed, "horizon": horizon})


def exhaustive_dataset(mdp, denom):
    """Every ``(s, a)`` with next states in exact kernel proportions.

    Each row contributes ``denom * P(s'|s, a)`` copies of ``(s, a, r, s')``,
    so the kernel entries must be multiples of ``1 / denom``.
    """
    counts = np.rint(mdp.kernel * denom)
    if np.max(np.abs(counts - mdp.kernel * denom)) > 1e-9:
        raise InvalidInputError("kernel entries are not multiples of 1/denom")
    s, a, sn = np.nonzero(counts)
    reps = counts[s, a, sn].astype(int)
    s, a, sn = (np.repeat(x, reps) for x in (s, a, sn))
    return Dataset(s, a, mdp.reward[s, a], sn, np.zeros(len(s), dtype=bool), TARGET,
                   meta={"denom": denom})
