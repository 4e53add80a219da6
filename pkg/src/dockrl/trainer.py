"""Training loop: collect, update, adapt, evaluate corners, log, checkpoint.

Output directory layout::

    manifest.json   config snapshot, seed, worker count, build identifier
    train_log.csv   one row per update (columns in LOG_COLUMNS)
    latest.json     resumable checkpoint (includes optimizer state)
    best.json       snapshot with the highest corner-case dock count so far
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .network import RunningNormalizer, Snapshot, init_policy, init_value
from .ppo import (OptimizerState, PpoHyperparams, adapt_kl, collect_batch, corner_case_eval,
                  is_new_best, shuffle_rng, update)
from .reward import TERM_NAMES
from .rollout import STREAM_INIT, DockingTask, episode_rng

log = logging.getLogger(__name__)

LOG_NAME = "train_log.csv"
LATEST_NAME = "latest.json"
BEST_NAME = "best.json"
MANIFEST_NAME = "manifest.json"

LOG_COLUMNS = (
    "update",                # 1-based update index
    "episodes",              # training episodes consumed so far
    "mean_score",            # mean undiscounted r1 + r2 over the batch
    "score_lqr",             # mean per-episode sum of each shaping term ...
    "score_attitude",
    "score_control",
    "score_collision",
    "score_docking",         # ... and of the docking bonus
    "train_dock_fraction",   # fraction of batch episodes that docked
    "mean_length",           # mean episode length in steps
    "kl",                    # mean KL(old || new) after the last epoch run
    "epochs",                # policy epochs run before early stop
    "epsilon",               # clip parameter used for this update
    "lr_policy",             # policy learning rate used for this update
    "max_action_variance",   # max of exp(log_var) after the update
    "value_loss",            # value regression loss after fitting
    "corner_docks",          # corner-case docks (blank when not evaluated)
    "best_corner_docks",
    "aborted",               # 1 if the update was rolled back
)


class ResumeError(Exception):
    pass


def build_identifier() -> str:
    """Package version plus a digest of the package sources."""
    digest = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return f"dockrl-{__version__}+{digest.hexdigest()[:12]}"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class TrainerState:
    snapshot: Snapshot
    optimizer: OptimizerState
    hyper: PpoHyperparams
    update: int = 0
    episodes: int = 0
    best_corner: int | None = None
    best_update: int | None = None

    def counters(self) -> dict:
        return {"update": self.update, "episodes": self.episodes, "epsilon": self.hyper.epsilon,
                "lr_policy": self.hyper.lr_policy, "best_corner": self.best_corner,
                "best_update": self.best_update}


def initial_state(cfg: RunConfig) -> TrainerState:
    rng = episode_rng(cfg.run.seed, STREAM_INIT, 0)
    net = cfg.network
    policy = init_policy(rng, tuple(net.policy_hidden), net.init_log_var)
    value = init_value(rng, tuple(net.value_hidden))
    snap = Snapshot(policy, value, RunningNormalizer(), net.value_scale, net.normalize_quaternion)
    return TrainerState(snap, OptimizerState.fresh(snap), cfg.ppo_hyperparams())


class Trainer:
    def __init__(self, cfg: RunConfig, out_dir, state: TrainerState | None = None,
                 task: DockingTask | None = None, base_dir: Path | None = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.task = task if task is not None else cfg.task(base_dir)
        self.state = state if state is not None else initial_state(cfg)
        self.config_hash = cfg.config_hash()

    # -- construction ---------------------------------------------------------
    @classmethod
    def resume(cls, cfg: RunConfig, out_dir, checkpoint=None, **kw) -> "Trainer":
        out_dir = Path(out_dir)
        path = Path(checkpoint) if checkpoint is not None else out_dir / LATEST_NAME
        doc = load_checkpoint(path)
        if doc["config_hash"] != cfg.config_hash():
            raise ResumeError(f"{path}: checkpoint was produced with a different configuration "
                              f"(hash {doc['config_hash'][:12]} vs {cfg.config_hash()[:12]})")
        if "trainer" not in doc or "optimizer" not in doc:
            raise ResumeError(f"{path}: checkpoint has no trainer state and cannot be resumed")
        t = doc["trainer"]
        hyper = replace(cfg.ppo_hyperparams(), epsilon=float(t["epsilon"]), lr_policy=float(t["lr_policy"]))
        state = TrainerState(doc["snapshot"], doc["optimizer"], hyper, int(t["update"]),
                             int(t["episodes"]), t["best_corner"], t["best_update"])
        trainer = cls(cfg, out_dir, state, **kw)
        trainer._truncate_log(state.update)
        return trainer

    # -- files ----------------------------------------------------------------
    @property
    def log_path(self) -> Path:
        return self.out_dir / LOG_NAME

    def _truncate_log(self, last_update: int) -> None:
        """Drop log rows written after the checkpoint being resumed."""
        if not self.log_path.exists():
            return
        with self.log_path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            return
        kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) <= last_update]
        with self.log_path.open("w", newline="") as fh:
            csv.writer(fh).writerows(kept)

    def write_manifest(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "build": build_identifier(),
            "config_hash": self.config_hash,
            "seed": self.cfg.run.seed,
            "workers": self.cfg.run.workers,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "config": self.cfg.model_dump(mode="json"),
        }
        (self.out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))

    def _append_log(self, row: dict) -> None:
        new = not self.log_path.exists() or self.log_path.stat().st_size == 0
        with self.log_path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(LOG_COLUMNS)
            writer.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])
            fh.flush()

    def save(self, name: str = LATEST_NAME, with_optimizer: bool = True) -> Path:
        path = self.out_dir / name
        save_checkpoint(path, self.state.snapshot, self.config_hash, self.cfg.model_dump(mode="json"),
                        trainer=self.state.counters(),
                        optimizer=self.state.optimizer if with_optimizer else None)
        return path

    # -- one update -----------------------------------------------------------
    def step(self, executor=None) -> dict:
        st = self.state
        hyper = st.hyper
        n = hyper.batch_episodes
        run = self.cfg.run
        batch = collect_batch(st.snapshot, self.task, run.seed, st.episodes, n, run.workers, executor)

        # normalizer shards merged in partition order, then applied to the next snapshot
        shards = np.array_split(np.arange(len(batch)), max(run.workers, 1))
        norm = st.snapshot.normalizer
        for shard in shards:
            if len(shard):
                norm = norm.merge(RunningNormalizer.from_batch(
                    np.concatenate([batch[i].states for i in shard])))

        w = self.task.weights
        new_snap, opt, diag = update(batch, st.snapshot, hyper, st.optimizer,
                                     shuffle_rng(run.seed, st.update + 1), w.gamma1, w.gamma2)
        if not diag.aborted:
            new_snap = replace(new_snap, normalizer=norm)
            st.snapshot, st.optimizer = new_snap, opt
            st.hyper = adapt_kl(diag.kl, hyper)
        st.update += 1
        st.episodes += n

        corner = None
        if st.update % run.corner_eval_interval == 0:
            corner = corner_case_eval(st.snapshot, self.task)
            if is_new_best(corner, st.best_corner):
                st.best_corner, st.best_update = corner, st.update
                self.save(BEST_NAME, with_optimizer=False)

        terms = np.array([[ep.term_scores()[k] for k in TERM_NAMES + ("docking",)] for ep in batch])
        row = {
            "update": st.update,
            "episodes": st.episodes,
            "mean_score": float(np.mean([ep.score for ep in batch])),
            **{f"score_{k}": float(v) for k, v in zip(TERM_NAMES + ("docking",), terms.mean(axis=0))},
            "train_dock_fraction": float(np.mean([ep.docked for ep in batch])),
            "mean_length": float(np.mean([len(ep) for ep in batch])),
            "kl": diag.kl,
            "epochs": diag.epochs,
            "epsilon": hyper.epsilon,
            "lr_policy": hyper.lr_policy,
            "max_action_variance": float(np.max(np.exp(st.snapshot.policy.log_var))),
            "value_loss": diag.value_loss_after,
            "corner_docks": corner,
            "best_corner_docks": st.best_corner,
            "aborted": diag.aborted,
        }
        self._append_log(row)
        return row

    # -- full run -------------------------------------------------------------
    def run(self, budget: int | None = None, callback=None) -> TrainerState:
        """Train until the episode budget cannot fit another full batch."""
        budget = self.cfg.run.episode_budget if budget is None else budget
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.write_manifest()
        workers = self.cfg.run.workers
        executor = ProcessPoolExecutor(workers) if workers > 1 else None
        interval = self.cfg.run.checkpoint_interval
        try:
            while self.state.episodes + self.state.hyper.batch_episodes <= budget:
                row = self.step(executor)
                log.info("update %d episodes %d score %.1f kl %.2e corner %s", row["update"],
                         row["episodes"], row["mean_score"], row["kl"], row["corner_docks"])
                if callback is not None:
                    callback(row)
                if self.state.update % interval == 0:
                    self.save()
        finally:
            if executor is not None:
                executor.shutdown()
        self.save()
        return self.state


def read_log(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = ["Trainer", "TrainerState", "ResumeError", "CheckpointError", "LOG_COLUMNS", "read_log",
           "initial_state", "build_identifier"]
