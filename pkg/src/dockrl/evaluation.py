"""Monte Carlo testing of a frozen policy, per-trajectory statistics and
trajectory CSV export/import."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import quaternion as quat
from .dynamics import port_state_batch
from .network import Snapshot
from .reward import TERM_NAMES, error_quaternion
from .rollout import DOCKED, STREAM_MONTE_CARLO, TIME_LIMIT, DockingTask, EpisodeRecord, rollout_indexed
from .scenario import ScenarioConfig, docked_batch

MC_CHUNK = 250


def expenditure(ep: EpisodeRecord, dt: float | None = None) -> tuple[float, float]:
    """L1 time integral of the applied force and torque commands."""
    dt = ep.dt if dt is None else dt
    c = np.abs(np.asarray(ep.commands, dtype=float))
    return float(c[:, 0:3].sum() * dt), float(c[:, 3:6].sum() * dt)


@dataclass(frozen=True)
class TrajectoryStats:
    duration_s: float
    cross_track_position_m: float     # |(r_py, r_pz)| at the final state
    cross_track_velocity_mps: float   # |(v_py, v_pz)| at the final state
    final_vx_mps: float               # axial port closing velocity
    final_attitude_error_deg: float   # axis-angle of the error quaternion
    final_w_error_degps: float        # |w - w_des|
    thrust_total_n: float
    torque_total_nm: float
    docked: bool
    collided: bool


STAT_FIELDS = tuple(f.name for f in fields(TrajectoryStats))
NUMERIC_FIELDS = STAT_FIELDS[:-2]


def trajectory_stats(ep: EpisodeRecord, task: DockingTask) -> TrajectoryStats:
    sc = task.scenario
    xf = ep.final_state
    r_p, v_p = port_state_batch(xf, sc.r_c, sc.r_t, sc.omega_frame)
    qe = error_quaternion(xf[6:10], task.weights.q_des)
    thrust, torque = expenditure(ep)
    return TrajectoryStats(
        duration_s=ep.duration,
        cross_track_position_m=float(np.hypot(r_p[1], r_p[2])),
        cross_track_velocity_mps=float(np.hypot(v_p[1], v_p[2])),
        final_vx_mps=float(v_p[0]),
        final_attitude_error_deg=float(np.degrees(quat.rotation_angle(qe))),
        final_w_error_degps=float(np.degrees(np.linalg.norm(xf[10:13] - task.weights.w_des))),
        thrust_total_n=thrust,
        torque_total_nm=torque,
        docked=ep.docked,
        collided=bool(np.any(ep.collided)),
    )


def _aggregate(trials: list[TrajectoryStats]) -> dict | None:
    if not trials:
        return None
    out = {}
    for name in NUMERIC_FIELDS:
        vals = np.array([getattr(t, name) for t in trials])
        out[name] = {"mean": float(vals.mean()), "max": float(vals.max())}
    return out


@dataclass
class MonteCarloReport:
    seed: int
    indices: list = field(default_factory=list)
    trials: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.trials)

    @property
    def no_data(self) -> bool:
        return self.n == 0

    @property
    def successes(self) -> int:
        return sum(t.docked for t in self.trials)

    @property
    def success_fraction(self) -> float | None:
        return None if self.no_data else self.successes / self.n

    @property
    def collisions(self) -> int:
        return sum(t.collided for t in self.trials)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "no_data": self.no_data,
            "successes": self.successes,
            "success_fraction": self.success_fraction,
            "collisions": self.collisions,
            "successful_trials": _aggregate([t for t in self.trials if t.docked]),
            "all_trials": _aggregate(self.trials),
        }

    def merge(self, other: "MonteCarloReport") -> "MonteCarloReport":
        if other.seed != self.seed:
            raise ValueError("cannot merge reports from different master seeds")
        if set(self.indices) & set(other.indices):
            raise ValueError("reports overlap")
        return MonteCarloReport(self.seed, self.indices + other.indices, self.trials + other.trials)

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report = out_dir / "report.json"
        report.write_text(json.dumps(self.summary(), indent=2))
        per_trial = out_dir / "trials.csv"
        with per_trial.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("index",) + STAT_FIELDS)
            for i, t in zip(self.indices, self.trials):
                writer.writerow([i] + [int(v) if isinstance(v, bool) else repr(v) for v in asdict(t).values()])
        return report, per_trial


def monte_carlo(snapshot: Snapshot, task: DockingTask, n: int, seed: int, first_index: int = 0,
                keep_records: int = 0):
    """Deterministic rollouts from ``n`` testing-range initial conditions.

    Trial ``i`` draws its initial condition from the stream
    ``(seed, MONTE_CARLO, i)``, so reports over disjoint index ranges merge
    into the report over their union.  Returns ``(report, records)`` where
    ``records`` holds the first ``keep_records`` episodes.
    """
    if n < 0:
        raise ValueError("trial count must be non-negative")
    sc = task.scenario
    report = MonteCarloReport(seed)
    kept = []
    for start in range(first_index, first_index + n, MC_CHUNK):
        idx = list(range(start, min(start + MC_CHUNK, first_index + n)))
        records = rollout_indexed(snapshot, task, seed, STREAM_MONTE_CARLO, idx, sc.ic_test,
                                  sc.max_steps(training=False), stochastic=False)
        for i, ep in zip(idx, records):
            report.indices.append(i)
            report.trials.append(trajectory_stats(ep, task))
            if len(kept) < keep_records:
                kept.append(ep)
    return report, kept


# -- trajectory export ---------------------------------------------------------

_AXES = ("x", "y", "z")
TRAJECTORY_COLUMNS = (
    ["t_s"]
    + [f"r_{a}_m" for a in _AXES] + [f"v_{a}_mps" for a in _AXES]
    + ["q_w", "q_x", "q_y", "q_z"]
    + ["roll_deg", "pitch_deg", "yaw_deg"]
    + [f"w_{a}_radps" for a in _AXES]
    + [f"F_{a}_n" for a in _AXES] + [f"L_{a}_nm" for a in _AXES]
    + [f"r_p_{a}_m" for a in _AXES] + [f"v_p_{a}_mps" for a in _AXES]
    + ["r1", "r2", "cumulative_reward"]
    + [f"raw_{i}" for i in range(6)]
    + [f"term_{k}" for k in TERM_NAMES]
    + ["collided"]
)


def export_trajectory(ep: EpisodeRecord, scenario: ScenarioConfig, path) -> Path:
    """One row per sample time ``t = 0 .. T``.

    Row ``t`` holds the state at ``t``, the command applied over
    ``[t, t+dt)`` and the reward for that transition; the cumulative reward
    includes it.  The final row carries only the terminal state.
    """
    states = np.vstack([ep.states, ep.final_state[None]])
    r_p, v_p = port_state_batch(states, scenario.r_c, scenario.r_t, scenario.omega_frame)
    euler = np.degrees(quat.to_euler_xyz(states[:, 6:10]))
    cumulative = np.cumsum(ep.r1 + ep.r2)
    T = len(ep)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for k in range(T + 1):
            row = [k * ep.dt] + list(states[k, 0:10]) + list(euler[k]) + list(states[k, 10:13])
            if k < T:
                row += list(ep.commands[k])
            else:
                row += [None] * 6
            row += list(r_p[k]) + list(v_p[k])
            if k < T:
                row += [ep.r1[k], ep.r2[k], cumulative[k]] + list(ep.actions[k]) + list(ep.terms[k])
                row += [int(ep.collided[k])]
            else:
                row += [None, None, cumulative[-1] if T else 0.0] + [None] * (6 + len(TERM_NAMES) + 1)
            writer.writerow(["" if v is None else repr(float(v)) if not isinstance(v, int) else v
                             for v in row])
    return path


def read_trajectory(path) -> dict:
    """Column name -> float array (empty cells become NaN)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) if v != "" else np.nan for v in r] for r in body]).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def import_trajectory(path, scenario: ScenarioConfig) -> EpisodeRecord:
    """Rebuild the exported fields of an EpisodeRecord (log-probabilities and values are not exported)."""
    cols = read_trajectory(path)

    def block(names):
        return np.column_stack([cols[c] for c in names])

    state_cols = TRAJECTORY_COLUMNS[1:11] + TRAJECTORY_COLUMNS[14:17]
    states = block(state_cols)
    T = states.shape[0] - 1
    dt = float(cols["t_s"][1] - cols["t_s"][0]) if T else scenario.dt
    r2 = cols["r2"][:T]
    final = states[T]
    docked = bool(T and r2[-1] > 0 and docked_batch(final, scenario))
    return EpisodeRecord(
        states=states[:T],
        actions=block([f"raw_{i}" for i in range(6)])[:T],
        commands=block(TRAJECTORY_COLUMNS[17:23])[:T],
        logp=np.zeros(T),
        r1=cols["r1"][:T],
        r2=r2,
        values=np.zeros(T),
        terms=block([f"term_{k}" for k in TERM_NAMES])[:T],
        collided=cols["collided"][:T].astype(bool),
        final_state=final,
        termination=DOCKED if docked else TIME_LIMIT,
        dt=dt,
    )
