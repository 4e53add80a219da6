"""Episode simulation: policy snapshot + dynamics + dual reward.

Episodes are simulated side by side as stacked arrays.  Each episode owns
its random stream (initial condition first, then a pre-drawn
``(max_steps, 6)`` block of standard-normal exploration noise), so an
episode's trajectory does not depend on which batch or worker ran it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import STATE_DIM, step_batch
from .lqr import LqrDesign, reference_accel
from .network import ACT_DIM, Snapshot, gaussian_logprob, scale_action_batch
from .reward import TERM_NAMES, RewardWeights, shaping_terms_batch
from .scenario import (InitialConditionRange, ScenarioConfig, collision_batch, docked_batch,
                       initial_state_from_sample, max_collision_distance)

DOCKED = "docked"
TIME_LIMIT = "time-limit"

STREAM_ROLLOUT = 0
STREAM_SHUFFLE = 1
STREAM_INIT = 2
STREAM_MONTE_CARLO = 3


@dataclass(frozen=True)
class DockingTask:
    """Everything a rollout needs besides the policy."""

    scenario: ScenarioConfig
    weights: RewardWeights
    lqr: LqrDesign

    @property
    def r_col(self) -> float:
        return max_collision_distance(self.scenario)


@dataclass
class EpisodeRecord:
    states: np.ndarray          # (T, 13) state before each action
    actions: np.ndarray         # (T, 6) raw policy outputs (pre-scaling)
    commands: np.ndarray        # (T, 6) applied [F, L] after scaling and clamping
    logp: np.ndarray            # (T,)
    r1: np.ndarray              # (T,)
    r2: np.ndarray              # (T,)
    values: np.ndarray          # (T,)
    terms: np.ndarray           # (T, 4) shaping terms, columns = TERM_NAMES
    collided: np.ndarray        # (T,) bool, evaluated on the post-action state
    final_state: np.ndarray     # (13,)
    termination: str
    dt: float = 1.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.r1)

    @property
    def docked(self) -> bool:
        return self.termination == DOCKED

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    @property
    def score(self) -> float:
        return float(self.r1.sum() + self.r2.sum())

    def term_scores(self) -> dict:
        out = dict(zip(TERM_NAMES, (float(s) for s in self.terms.sum(axis=0))))
        out["docking"] = float(self.r2.sum())
        return out


def episode_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(index)])


def draw_episode(rng: np.random.Generator, ic_range: InitialConditionRange, max_steps: int,
                 stochastic: bool) -> tuple[np.ndarray, np.ndarray | None]:
    lo, hi = ic_range.bounds()
    x0 = initial_state_from_sample(rng.uniform(lo, hi))
    noise = rng.standard_normal((max_steps, ACT_DIM)) if stochastic else None
    return x0, noise


def rollout_batch(snapshot: Snapshot | None, task: DockingTask, x0: np.ndarray, noise: np.ndarray | None,
                  max_steps: int, stochastic: bool = True, controller=None) -> list[EpisodeRecord]:
    """Simulate ``len(x0)`` episodes until docking or ``max_steps``.

    ``controller``, if given, replaces the policy: it maps the stacked
    active states to raw actions, and log-probabilities and values are
    recorded as zero.
    """
    sc = task.scenario
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    if stochastic and noise is None:
        raise ValueError("stochastic rollout requires pre-drawn noise")
    if controller is None:
        log_var = snapshot.policy.log_var
        std = np.sqrt(np.exp(log_var))
    r_col = task.r_col

    states = np.zeros((n, max_steps, STATE_DIM))
    actions = np.zeros((n, max_steps, ACT_DIM))
    commands = np.zeros((n, max_steps, ACT_DIM))
    logp = np.zeros((n, max_steps))
    values = np.zeros((n, max_steps))
    terms = np.zeros((n, max_steps, len(TERM_NAMES)))
    r2 = np.zeros((n, max_steps))
    collided = np.zeros((n, max_steps), dtype=bool)
    lengths = np.full(n, max_steps)
    docked = np.zeros(n, dtype=bool)
    final = x0.copy()

    x = x0.copy()
    idx = np.arange(n)
    for t in range(max_steps):
        if idx.size == 0:
            break
        if controller is None:
            obs = snapshot.observe(x)
            mean = snapshot.policy.mean(obs)
            raw = mean + std * noise[idx, t] if stochastic else mean
        else:
            raw = np.asarray(controller(x), dtype=float)
        u = scale_action_batch(raw, sc.f_max, sc.l_max)
        x_next = step_batch(x, u, sc.mass_props, sc.dt)
        dock_now = docked_batch(x_next, sc)
        coll, rp_norm = collision_batch(x_next, sc, dock_now)
        a_ref = reference_accel(task.lqr, x[:, 0:3], x[:, 3:6])
        step_terms = shaping_terms_batch(x[:, 6:10], x[:, 10:13], u, u[:, 0:3] / sc.mass_props.mass,
                                         a_ref, coll, rp_norm, r_col, task.weights)

        states[idx, t] = x
        actions[idx, t] = raw
        commands[idx, t] = u
        if controller is None:
            logp[idx, t] = gaussian_logprob(mean, log_var, raw)
            values[idx, t] = snapshot.value_estimate(obs)
        terms[idx, t] = step_terms
        collided[idx, t] = coll
        r2[idx, t] = np.where(dock_now, task.weights.d, 0.0)

        final[idx] = x_next
        done = dock_now
        lengths[idx[done]] = t + 1
        docked[idx[done]] = True
        keep = ~done
        idx = idx[keep]
        x = x_next[keep]

    records = []
    for i in range(n):
        T = lengths[i]
        records.append(EpisodeRecord(
            states=states[i, :T].copy(),
            actions=actions[i, :T].copy(),
            commands=commands[i, :T].copy(),
            logp=logp[i, :T].copy(),
            r1=terms[i, :T].sum(axis=1),
            r2=r2[i, :T].copy(),
            values=values[i, :T].copy(),
            terms=terms[i, :T].copy(),
            collided=collided[i, :T].copy(),
            final_state=final[i].copy(),
            termination=DOCKED if docked[i] else TIME_LIMIT,
            dt=sc.dt,
        ))
    return records


def rollout(snapshot: Snapshot, task: DockingTask, rng: np.random.Generator, stochastic: bool = True,
            training: bool = True) -> EpisodeRecord:
    """One episode from an initial condition drawn from the training or testing range."""
    sc = task.scenario
    max_steps = sc.max_steps(training)
    ic_range = sc.ic_train if training else sc.ic_test
    x0, noise = draw_episode(rng, ic_range, max_steps, stochastic)
    return rollout_batch(snapshot, task, x0[None], None if noise is None else noise[None],
                         max_steps, stochastic)[0]


def rollout_indexed(snapshot: Snapshot, task: DockingTask, seed: int, stream: int, indices,
                    ic_range: InitialConditionRange, max_steps: int, stochastic: bool) -> list[EpisodeRecord]:
    """Batch of episodes whose random streams are ``(seed, stream, index)``."""
    draws = [draw_episode(episode_rng(seed, stream, i), ic_range, max_steps, stochastic) for i in indices]
    if not draws:
        return []
    x0 = np.stack([d[0] for d in draws])
    noise = np.stack([d[1] for d in draws]) if stochastic else None
    records = rollout_batch(snapshot, task, x0, noise, max_steps, stochastic)
    for i, rec in zip(indices, records):
        rec.meta["index"] = int(i)
    return records


def lqr_tracking_controller(task: DockingTask):
    """Raw actions that apply the LQR reference acceleration and no torque."""
    sc = task.scenario

    def control(x):
        accel = reference_accel(task.lqr, x[:, 0:3], x[:, 3:6])
        raw = np.zeros((x.shape[0], ACT_DIM))
        raw[:, 0:3] = accel * sc.mass_props.mass / sc.f_max
        return raw

    return control
