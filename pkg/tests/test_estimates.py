import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conelab.errors import DomainError
from conelab.estimates import (
    EstimateReport,
    check_cusp_bullets,
    check_global_lower,
    check_lower_bound_short,
    check_phidot_lower,
    check_phidot_upper,
    check_trace_sandwich,
    check_upper_bound,
    model_density_for,
    run_validators,
    uniformity_ratios,
)
from conelab.flow import FlowState, FlowVariant, Trajectory, run_flow

TIMES = [0.0, 0.1, 0.2, 0.3]


def _trajectory(cfg, chi_at, phidot_at=None, density_at=None, times=TIMES):
    """Trajectory with prescribed fields; the callables take t"""
    n = cfg.mesh.n
    states = []
    for t in times:
        states.append(
            FlowState(
                t=t,
                chi=np.asarray(chi_at(t), dtype=float) * np.ones(n),
                phidot=np.zeros(n) if phidot_at is None else np.asarray(phidot_at(t), dtype=float) * np.ones(n),
                metric_density=cfg.g.copy() if density_at is None else np.asarray(density_at(t), dtype=float) * np.ones(n),
            )
        )
    return Trajectory(config=cfg, states=states)


def test_upper_bound_recovers_planted_rate(make_flow, bump):
    cfg = make_flow()
    traj = _trajectory(cfg, lambda t: bump if t == 0 else np.max(bump) + 3.0 * t)
    report = check_upper_bound(traj)
    assert report.fitted_C == pytest.approx(3.0)
    assert report.passed
    assert report.gamma == 0.5


def test_upper_bound_vanishes_for_constant_data(make_flow):
    traj = _trajectory(make_flow(), lambda t: 0.4)
    assert check_upper_bound(traj).fitted_C == pytest.approx(0.0, abs=1e-14)


def test_lower_bound_log_form(make_flow, bump):
    cfg = make_flow()
    traj = _trajectory(cfg, lambda t: bump + (t * math.log(t) - t if t > 0 else 0.0))
    report = check_lower_bound_short(traj)
    assert report.aux["C_log"] == pytest.approx(0.0, abs=1e-12)
    # inf phi0 - phi grows with the t log t - t drop
    assert report.fitted_C > 0


def test_phidot_upper_on_a_zero_run(make_flow, smoke):
    cfg = make_flow(geom=smoke)
    traj = run_flow(cfg, np.zeros(cfg.mesh.n))
    report = check_phidot_upper(traj)
    assert report.fitted_C == 0.0
    assert report.aux["first_form"] == -1.0
    assert report.aux["delta"] == 0.1


def test_phidot_upper_zero_when_phidot_is_psi(make_flow):
    cfg = make_flow()
    traj = _trajectory(cfg, lambda t: 0.0, phidot_at=lambda t: cfg.psi_bullet)
    assert check_phidot_upper(traj, delta=0.15).fitted_C == 0.0


def test_phidot_lower_planted(make_flow, bump):
    cfg = make_flow()
    traj = _trajectory(cfg, lambda t: bump, phidot_at=lambda t: cfg.psi_bullet)
    report = check_phidot_lower(traj, sigma=0.5)
    osc = np.max(bump) - np.min(bump)
    assert report.fitted_C == pytest.approx(-2 * osc + math.log(0.3))
    assert report.aux["T_form"] == 0.0
    assert report.aux["sigma"] == 0.5


@pytest.mark.parametrize("sigma", [0.0, -0.1])
def test_phidot_lower_needs_positive_sigma(make_flow, sigma):
    traj = _trajectory(make_flow(), lambda t: 0.0)
    with pytest.raises(DomainError):
        check_phidot_lower(traj, sigma=sigma)


def test_trace_sandwich_on_the_model_metric(make_flow):
    cfg = make_flow()
    model = _trajectory(cfg, lambda t: 0.0)
    model = _trajectory(cfg, lambda t: 0.0, density_at=lambda t: model_density_for(model))
    assert check_trace_sandwich(model).fitted_C == pytest.approx(0.0, abs=1e-12)


def test_trace_sandwich_scales_with_t_squared(make_flow):
    cfg = make_flow(horizon_T=1.0)
    base = _trajectory(cfg, lambda t: 0.0, times=[0.0, 1.0])
    model = model_density_for(base)
    traj = _trajectory(
        cfg,
        lambda t: 0.0,
        density_at=lambda t: model * math.exp(1.0 / t**2) if t > 0 else model,
        times=[0.0, 0.5, 0.75, 1.0],
    )
    assert check_trace_sandwich(traj).fitted_C == pytest.approx(1.0)


def test_global_lower(make_flow):
    traj = _trajectory(make_flow(), lambda t: -7.0 if t == 0.2 else 0.0)
    assert check_global_lower(traj).fitted_C == 7.0


def test_cusp_bullets_on_the_reference(make_flow):
    cfg = make_flow(variant=FlowVariant.CUSP)
    reference = _trajectory(cfg, lambda t: 0.0)
    omega_o = model_density_for(reference)
    traj = _trajectory(cfg, lambda t: 0.0, phidot_at=lambda t: cfg.psi_bullet, density_at=lambda t: omega_o)
    report = check_cusp_bullets(traj)
    assert report.fitted_C == 0.0
    assert report.aux["a"] == 0.0
    assert report.aux["C_upper"] == 0.0
    assert report.aux["C_sandwich"] == 0.0


def test_cusp_bullets_one_over_t_excess(make_flow):
    cfg = make_flow(variant=FlowVariant.CUSP)
    traj = _trajectory(
        cfg,
        lambda t: 0.0,
        phidot_at=lambda t: cfg.psi_bullet + (1.0 / t if t > 0 else 0.0),
    )
    report = check_cusp_bullets(traj)
    assert report.aux["C_upper"] == pytest.approx(1.0)
    assert report.aux["a"] == 0.0


def test_cusp_bullets_need_a_cusp_run(make_flow):
    with pytest.raises(DomainError):
        check_cusp_bullets(_trajectory(make_flow(), lambda t: 0.0))


def test_validators_need_positive_times(make_flow):
    traj = _trajectory(make_flow(variant=FlowVariant.CUSP), lambda t: 0.0, times=[0.0])
    with pytest.raises(DomainError):
        check_cusp_bullets(traj)
    with pytest.raises(DomainError):
        check_upper_bound(traj)


def test_report_serializes_pass_alias():
    payload = EstimateReport(name="upper_bound", fitted_C=1.5, gamma=0.5).to_dict()
    assert payload["pass"] is True
    assert "passed" not in payload


def test_non_finite_constant_fails_the_report(make_flow):
    traj = _trajectory(make_flow(), lambda t: np.nan if t > 0 else 0.0)
    assert not check_global_lower(traj).passed


def test_uniformity_ratios():
    reports = [
        EstimateReport(name="upper_bound", fitted_C=1.0, gamma=0.5),
        EstimateReport(name="upper_bound", fitted_C=-3.0, gamma=0.25),
        EstimateReport(name="global_lower", fitted_C=2.0, gamma=0.5),
        EstimateReport(name="global_lower", fitted_C=math.nan, gamma=0.25),
    ]
    ratios = uniformity_ratios(reports)
    assert ratios["upper_bound"] == pytest.approx(3.0)
    assert ratios["global_lower"] == math.inf


def test_validators_on_real_runs(make_flow, bump):
    conical = run_flow(make_flow(output_times=(0.1, 0.2)), bump)
    cusp = run_flow(make_flow(variant=FlowVariant.CUSP, output_times=(0.1, 0.2)), bump)
    reports = run_validators(conical, cusp)
    assert [r.name for r in reports] == [
        "upper_bound",
        "lower_bound_short",
        "phidot_upper",
        "phidot_lower",
        "trace_sandwich",
        "global_lower",
        "cusp_bullets",
    ]
    assert all(r.passed for r in reports)

    again = run_validators(run_flow(conical.config, bump), run_flow(cusp.config, bump))
    for a, b in zip(reports, again):
        assert a.fitted_C == b.fitted_C
        assert_allclose(list(a.aux.values()), list(b.aux.values()), rtol=0, atol=0)
