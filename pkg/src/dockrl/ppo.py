"""PPO with dual-discount returns, KL-targeted adaptation and corner-case
checkpoint selection."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import network as nn
from .network import Policy, Snapshot
from .rollout import (DockingTask, EpisodeRecord, STREAM_ROLLOUT, STREAM_SHUFFLE, rollout_batch,
                      rollout_indexed)
from .scenario import ScenarioConfig, initial_state_from_sample

log = logging.getLogger(__name__)

EPS_MIN = 0.05
EPS_MAX = 0.4
KL_ADAPT_FACTOR = 1.5
EPS_ADAPT_FACTOR = 1.2
CORNER_VARIABLES = ("r_x", "v_x", "v_y", "v_z", "w_x", "w_y", "w_z")
# positions of the corner variables in the 12-vector [r, v, euler, w]
_CORNER_SLOTS = (0, 3, 4, 5, 9, 10, 11)


@dataclass(frozen=True)
class PpoHyperparams:
    epsilon: float = 0.2
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    kl_target: float = 0.001
    batch_episodes: int = 128
    epochs_per_update: int = 10
    minibatch: int = 4096
    value_epochs: int = 10
    value_minibatch: int = 1024
    normalize_advantages: bool = True
    log_var_lr_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not (self.lr_policy > 0 and self.lr_value > 0 and self.kl_target > 0 and self.log_var_lr_scale > 0):
            raise ValueError("learning rates, log_var_lr_scale and kl_target must be positive")
        if min(self.batch_episodes, self.epochs_per_update, self.minibatch,
               self.value_epochs, self.value_minibatch) < 1:
            raise ValueError("batch/epoch/minibatch sizes must be >= 1")


# -- returns ----------------------------------------------------------------

def discounted_returns(r1, r2, gamma1: float, gamma2: float) -> np.ndarray:
    """``sum_{k>=t} gamma1^(k-t) r1_k + gamma2^(k-t) r2_k`` for every t."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    g1 = np.zeros_like(r1)
    g2 = np.zeros_like(r2)
    acc1 = acc2 = 0.0
    for t in range(len(r1) - 1, -1, -1):
        acc1 = r1[t] + gamma1 * acc1
        acc2 = r2[t] + gamma2 * acc2
        g1[t] = acc1
        g2[t] = acc2
    return g1 + g2


def returns_and_advantages(ep: EpisodeRecord, gamma1: float, gamma2: float):
    ret = discounted_returns(ep.r1, ep.r2, gamma1, gamma2)
    return ret, ret - ep.values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 0 else 1.0)


# -- surrogate ---------------------------------------------------------------

def ppo_surrogate(ratio, advantage, epsilon):
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon)
    return np.minimum(ratio * advantage, clipped * advantage)


def surrogate_and_grad(policy: Policy, obs, actions, old_logp, adv, epsilon):
    """Mean clipped surrogate over the batch and its gradient (as a Policy)."""
    mean, acts = nn.forward_cache(policy.net, obs)
    var = np.exp(policy.log_var)
    diff = actions - mean
    logp = nn.gaussian_logprob(mean, policy.log_var, actions)
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv
    J = float(np.mean(np.minimum(unclipped, clipped)))
    active = unclipped <= clipped
    dlogp = np.where(active, adv * ratio, 0.0) / len(adv)
    grad_mean = dlogp[:, None] * diff / var
    grad_lv = np.sum(dlogp[:, None] * (-0.5 + 0.5 * diff * diff / var), axis=0)
    grads = nn.backward(policy.net, acts, grad_mean)
    return J, Policy(grads, grad_lv), ratio


def value_loss_and_grad(value: nn.NetworkParameters, obs, targets):
    """``0.5 * mean((V - y)^2)`` and its parameter gradient."""
    out, acts = nn.forward_cache(value, obs)
    err = out[:, 0] - targets
    loss = 0.5 * float(np.mean(err * err))
    grads = nn.backward(value, acts, (err / len(err))[:, None])
    return loss, grads


# -- KL adaptation ------------------------------------------------------------

def adapt_kl(observed_kl: float, hyper: PpoHyperparams) -> PpoHyperparams:
    if observed_kl < 0:
        raise ValueError("observed KL must be non-negative")
    if observed_kl > 2.0 * hyper.kl_target:
        return replace(hyper, lr_policy=hyper.lr_policy / KL_ADAPT_FACTOR,
                       epsilon=max(hyper.epsilon / EPS_ADAPT_FACTOR, EPS_MIN))
    if observed_kl < 0.5 * hyper.kl_target:
        return replace(hyper, lr_policy=hyper.lr_policy * KL_ADAPT_FACTOR,
                       epsilon=min(hyper.epsilon * EPS_ADAPT_FACTOR, EPS_MAX))
    return hyper


# -- update -------------------------------------------------------------------

@dataclass
class OptimizerState:
    policy: nn.AdamState
    value: nn.AdamState

    @classmethod
    def fresh(cls, snapshot: Snapshot) -> "OptimizerState":
        return cls(nn.AdamState.for_params(snapshot.policy.arrays()),
                   nn.AdamState.for_params(snapshot.value.arrays()))


@dataclass
class UpdateDiagnostics:
    kl: float
    epochs: int
    surrogate_first: float
    surrogate_last: float
    value_loss_before: float
    value_loss_after: float
    ratio_first_max_dev: float
    aborted: bool = False
    kl_per_epoch: list = field(default_factory=list)


class NonFiniteUpdate(RuntimeError):
    pass


def _chunks(perm, size):
    for start in range(0, len(perm), size):
        yield perm[start:start + size]


def batch_arrays(batch: list[EpisodeRecord], snapshot: Snapshot, gamma1: float, gamma2: float):
    obs = snapshot.observe(np.concatenate([ep.states for ep in batch]))
    actions = np.concatenate([ep.actions for ep in batch])
    old_logp = np.concatenate([ep.logp for ep in batch])
    rets, advs = zip(*(returns_and_advantages(ep, gamma1, gamma2) for ep in batch))
    return obs, actions, old_logp, np.concatenate(rets), np.concatenate(advs)


def update(batch: list[EpisodeRecord], snapshot: Snapshot, hyper: PpoHyperparams,
           opt: OptimizerState, rng: np.random.Generator, gamma1: float, gamma2: float,
           train_value: bool = True):
    """One PPO update on a batch of episodes.

    Returns ``(new_snapshot, new_opt_state, diagnostics)``.  If any loss or
    parameter turns non-finite the original snapshot and optimizer state are
    returned with ``diagnostics.aborted`` set.
    """
    obs, actions, old_logp, rets, adv = batch_arrays(batch, snapshot, gamma1, gamma2)
    if hyper.normalize_advantages:
        adv = normalize_advantages(adv)
    n = len(adv)
    old_mean = snapshot.policy.mean(obs)
    old_lv = snapshot.policy.log_var.copy()
    policy = snapshot.policy
    value = snapshot.value
    p_state, v_state = opt.policy, opt.value
    targets = rets / snapshot.value_scale
    n_net = len(policy.net.arrays())
    rates = [hyper.lr_policy] * n_net + [hyper.lr_policy * hyper.log_var_lr_scale]

    try:
        ratio_dev = None
        surr_first = surr_last = float("nan")
        kl = 0.0
        kls = []
        epochs = 0
        for epoch in range(hyper.epochs_per_update):
            for mb in _chunks(rng.permutation(n), hyper.minibatch):
                J, grads, ratio = surrogate_and_grad(policy, obs[mb], actions[mb], old_logp[mb],
                                                     adv[mb], hyper.epsilon)
                if ratio_dev is None:
                    ratio_dev = float(np.max(np.abs(ratio - 1.0)))
                    surr_first = J
                surr_last = J
                if not np.isfinite(J):
                    raise NonFiniteUpdate("policy surrogate is not finite")
                new_arrays, p_state = nn.adam_step(policy.arrays(), [-g for g in grads.arrays()],
                                                   p_state, rates)
                policy = Policy.from_arrays(new_arrays)
            epochs = epoch + 1
            kl = float(np.mean(nn.gaussian_kl(old_mean, old_lv, policy.mean(obs), policy.log_var)))
            kls.append(kl)
            if not np.isfinite(kl):
                raise NonFiniteUpdate("KL divergence is not finite")
            if kl > 4.0 * hyper.kl_target:
                break

        v_before = v_after = float("nan")
        if train_value:
            v_before, _ = value_loss_and_grad(value, obs, targets)
            for _ in range(hyper.value_epochs):
                for mb in _chunks(rng.permutation(n), hyper.value_minibatch):
                    loss, grads = value_loss_and_grad(value, obs[mb], targets[mb])
                    if not np.isfinite(loss):
                        raise NonFiniteUpdate("value loss is not finite")
                    new_arrays, v_state = nn.adam_step(value.arrays(), grads.arrays(), v_state,
                                                       hyper.lr_value)
                    value = nn.NetworkParameters.from_arrays(new_arrays)
            v_after, _ = value_loss_and_grad(value, obs, targets)
        if not all(np.all(np.isfinite(a)) for a in policy.arrays() + value.arrays()):
            raise NonFiniteUpdate("parameters became non-finite")
    except (NonFiniteUpdate, FloatingPointError) as exc:
        log.warning("update aborted: %s", exc)
        diag = UpdateDiagnostics(float("nan"), 0, float("nan"), float("nan"), float("nan"),
                                 float("nan"), float("nan"), aborted=True)
        return snapshot, opt, diag

    new_snapshot = replace(snapshot, policy=policy, value=value)
    diag = UpdateDiagnostics(kl, epochs, surr_first, surr_last, v_before, v_after,
                             ratio_dev if ratio_dev is not None else 0.0, kl_per_epoch=kls)
    return new_snapshot, OptimizerState(p_state, v_state), diag


# -- corner-case evaluation ----------------------------------------------------

def corner_initial_states(scenario: ScenarioConfig) -> np.ndarray:
    """All 2^7 extreme combinations of the seven corner variables (testing range)."""
    lo, hi = scenario.ic_test.bounds()
    center = 0.5 * (lo + hi)
    rows = []
    for signs in itertools.product((0, 1), repeat=len(_CORNER_SLOTS)):
        values = center.copy()
        for slot, s in zip(_CORNER_SLOTS, signs):
            values[slot] = hi[slot] if s else lo[slot]
        rows.append(values)
    return initial_state_from_sample(np.array(rows))


def corner_case_eval(snapshot: Snapshot, task: DockingTask, return_records: bool = False):
    """Deterministic docks out of the 128 corner cases (testing time limit)."""
    x0 = corner_initial_states(task.scenario)
    records = rollout_batch(snapshot, task, x0, None, task.scenario.max_steps(training=False),
                            stochastic=False)
    count = sum(ep.docked for ep in records)
    return (count, records) if return_records else count


def is_new_best(count: int, best: int | None) -> bool:
    return best is None or count >= best


def collect_batch(snapshot: Snapshot, task: DockingTask, seed: int, first_index: int, n: int,
                  workers: int = 1, executor=None) -> list[EpisodeRecord]:
    """Training episodes ``first_index .. first_index + n - 1``, split over contiguous worker shards."""
    sc = task.scenario
    indices = list(range(first_index, first_index + n))
    args = (sc.ic_train, sc.max_steps(training=True), True)
    if workers <= 1 or executor is None:
        return rollout_indexed(snapshot, task, seed, STREAM_ROLLOUT, indices, *args)
    shards = np.array_split(np.array(indices), workers)
    futures = [executor.submit(rollout_indexed, snapshot, task, seed, STREAM_ROLLOUT,
                               shard.tolist(), *args) for shard in shards if len(shard)]
    out = []
    for fut in futures:
        out.extend(fut.result())
    return out


def shuffle_rng(seed: int, update_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAM_SHUFFLE, int(update_index)])
