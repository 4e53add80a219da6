import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dockrl.lqr import (DesignFileError, NumericalFailure, TuningResult, design_gain, load_design,
                        reference_accel, save_design, scaled_weights, simulate_reference, tune_gain)
from dockrl.quaternion import InvalidInputError

finite = st.floats(-50, 50, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)


@pytest.fixture(scope="module")
def shipped(cfg):
    return cfg.lqr_design()


def _nominal(cfg, design):
    sc = cfg.scenario_config()
    return simulate_reference(design, cfg.lqr.nominal_r0_m, cfg.lqr.nominal_v0_mps, sc.dt, sc.t_limit_test)


# -- design_gain ------------------------------------------------------------------

def test_scalar_are_solution():
    # per axis: p-equation gives k_p = 1, k_d = sqrt(2 k_p + 1) = sqrt(3)
    d = design_gain(np.eye(6), np.eye(3))
    assert np.allclose(d.K, np.hstack([np.eye(3), np.sqrt(3) * np.eye(3)]), atol=1e-10)


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0])
def test_gain_is_scale_invariant(alpha):
    Q, R = scaled_weights(1.0)
    assert np.allclose(design_gain(alpha * Q, alpha * R).K, design_gain(Q, R).K, rtol=1e-8)


def test_design_passes_riccati_check(shipped):
    assert shipped.riccati_residual() < 1e-8
    assert np.all(np.linalg.eigvals(shipped.closed_loop).real < 0)


def test_non_pd_r_is_rejected():
    with pytest.raises(InvalidInputError):
        design_gain(np.eye(6), np.diag([1.0, 0.0, 1.0]))
    with pytest.raises(InvalidInputError):
        design_gain(np.eye(6), -np.eye(3))


def test_newton_iteration_limit():
    with pytest.raises(NumericalFailure):
        design_gain(np.eye(6), np.eye(3), max_iter=1)


# -- reference_accel --------------------------------------------------------------

def test_offset_origin_is_a_fixed_point(shipped):
    assert np.array_equal(reference_accel(shipped, shipped.r_target + shipped.origin_offset, np.zeros(3)),
                          np.zeros(3))


@settings(max_examples=100, deadline=None)
@given(vec3, vec3, vec3, vec3, st.floats(-3, 3))
def test_reference_accel_superposition(r1, v1, r2, v2, a):
    d = design_gain(np.eye(6), np.eye(3))    # zero target and offset -> purely linear map
    d = d.with_target(np.zeros(3), np.zeros(3))
    lhs = reference_accel(d, r1 + a * r2, v1 + a * v2)
    rhs = reference_accel(d, r1, v1) + a * reference_accel(d, r2, v2)
    assert np.allclose(lhs, rhs, atol=1e-10 * (1 + np.abs(lhs).max()))


def test_reference_accel_broadcasts(shipped):
    r = np.random.default_rng(0).normal(size=(5, 3))
    v = np.random.default_rng(1).normal(size=(5, 3))
    batch = reference_accel(shipped, r, v)
    assert np.allclose(batch, [reference_accel(shipped, r[i], v[i]) for i in range(5)], atol=1e-15)


# -- simulate_reference -----------------------------------------------------------

def test_start_at_target_arrives_at_zero(shipped):
    assert simulate_reference(shipped, shipped.r_target, np.zeros(3), 1.0, 50.0).arrival_step == 0


def test_no_arrival_is_reported_not_raised(shipped):
    ref = simulate_reference(shipped, [-20.0, 0, 0], np.zeros(3), 1.0, 10.0)
    assert ref.arrival_step is None and ref.arrival_time is None
    assert len(ref.t) == 11


def test_nominal_arrival_time(cfg, shipped):
    ref = _nominal(cfg, shipped)
    assert abs(ref.arrival_time - 105.0) <= 2.0


def test_nominal_approach_is_monotone_with_positive_terminal_speed(cfg, shipped):
    ref = _nominal(cfg, shipped)
    k = ref.arrival_step
    assert np.all(np.diff(ref.r[: k + 1, 0]) > 0)
    assert ref.v[k, 0] > 0
    # the offset keeps the reference pushing through the face
    assert 0.05 <= ref.v[k, 0] <= 0.15


@pytest.mark.xfail(strict=True, reason="105 s arrival forces an axial pole near -0.024/s; "
                                       "worst training corner keeps ~4.6e-3 of its error at 250 s")
def test_error_decays_a_thousandfold_by_250s(cfg, shipped):
    assert _worst_decay(cfg, shipped, 250.0) < 1e-3


def test_error_decays_a_thousandfold_eventually(cfg, shipped):
    assert _worst_decay(cfg, shipped, 400.0) < 1e-3


def _worst_decay(cfg, design, horizon):
    sc = cfg.scenario_config()
    ic = sc.ic_train
    goal = design.r_target + design.origin_offset
    worst = 0.0
    for s in itertools.product([-1.0, 1.0], repeat=6):
        s = np.array(s)
        r0 = ic.r_center + s[:3] * ic.r_halfwidth
        v0 = ic.v_center + s[3:] * ic.v_halfwidth
        ref = simulate_reference(design, r0, v0, sc.dt, horizon)
        e0 = np.linalg.norm(np.r_[r0 - goal, v0])
        e = np.linalg.norm(np.r_[ref.r[-1] - goal, ref.v[-1]])
        worst = max(worst, e / e0)
    return worst


def test_reference_csv(tmp_path, cfg, shipped):
    ref = _nominal(cfg, shipped)
    ref.to_csv(tmp_path / "ref.csv")
    rows = (tmp_path / "ref.csv").read_text().splitlines()
    assert rows[0].split(",")[:4] == ["t", "r_x", "r_y", "r_z"]
    assert len(rows) == len(ref.t) + 1
    assert float(rows[-1].split(",")[1]) == ref.r[-1, 0]


# -- tuning -----------------------------------------------------------------------

def test_arrival_is_monotone_in_position_weight(cfg, shipped):
    sc = cfg.scenario_config()
    arrivals = []
    for scale in np.geomspace(0.05, 5.0, 5):
        d = design_gain(*scaled_weights(scale)).with_target(shipped.r_target, shipped.origin_offset)
        ref = simulate_reference(d, [-20.0, 0, 0], np.zeros(3), sc.dt, sc.t_limit_test)
        arrivals.append(np.inf if ref.arrival_time is None else ref.arrival_time)
    assert all(a >= b for a, b in zip(arrivals, arrivals[1:]))
    assert arrivals[0] > arrivals[-1]


def test_unreachable_target_raises(shipped):
    with pytest.raises(NumericalFailure, match="not bracketed"):
        tune_gain(shipped.r_target, [-20.0, 0, 0], target_time=5.0, iterations=5)


# -- persistence -----------------------------------------------------------------

def test_save_load_round_trip(tmp_path, shipped):
    path = tmp_path / "gain.yaml"
    save_design(path, TuningResult(shipped, 1.0, 105.0, [(1.0, 105.0)]), {"note": "x"})
    back = load_design(path)
    for name in ("K", "P", "Q_lqr", "R_lqr", "origin_offset", "r_target"):
        assert np.array_equal(getattr(back, name), getattr(shipped, name))


def test_malformed_design_files(tmp_path, shipped):
    with pytest.raises(DesignFileError):
        load_design(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("K: [1, 2\n")
    with pytest.raises(DesignFileError):
        load_design(tmp_path / "bad.yaml")
    (tmp_path / "partial.yaml").write_text("K: [[1.0]]\n")
    with pytest.raises(DesignFileError):
        load_design(tmp_path / "partial.yaml")


def test_tampered_gain_fails_riccati_check(tmp_path, shipped):
    path = tmp_path / "gain.yaml"
    save_design(path, TuningResult(shipped, 1.0, 105.0, []))
    import yaml
    doc = yaml.safe_load(path.read_text())
    doc["P"][0][0] *= 1.01
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(NumericalFailure):
        load_design(path)
