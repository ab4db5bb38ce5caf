import numpy as np
import pytest
from numpy.testing import assert_allclose

from conelab.compare import (
    EllipticProblem,
    build_subsolution,
    check_subsolution,
    contraction_test,
    cusp_reference_bound,
    nodal_ordering,
    ordering_chain,
    ordering_vs_regularized,
    shared_times,
    solve_elliptic,
)
from conelab.errors import AdmissibilityError, ConfigError, DomainError, HorizonError
from conelab.flow import FlowState, FlowVariant, Trajectory, run_flow
from conelab.mesh import second_difference


def _planted_source(geom, mesh, gamma, kappa, k, v_star):
    """Source for which u = v_star + kappa psi solves the elliptic problem"""
    u = mesh.nodes
    g = geom.g(u)
    shape = EllipticProblem(geom=geom, gamma=gamma, source_field=np.zeros(mesh.n))
    psi, _, curvature = shape.potential_pieces(mesh)
    density = g + kappa * curvature + second_difference(mesh, v_star)
    weight = -(1.0 - gamma) * geom.ell(u)
    return np.log(density / g) - k * (v_star + kappa * psi) - weight, psi


@pytest.mark.parametrize("amplitude", [0.0, 0.2])
def test_elliptic_recovers_planted_solution(one_point, small_mesh, amplitude):
    kappa, k = 1.4, 1.0
    v_star = amplitude * np.exp(-small_mesh.nodes**2 / 4.0)
    source, psi = _planted_source(one_point, small_mesh, 0.5, kappa, k, v_star)
    problem = EllipticProblem(geom=one_point, gamma=0.5, source_field=source, potential_scale=kappa)
    start = kappa * psi + 0.05 * np.cos(small_mesh.nodes)
    solution = solve_elliptic(problem, small_mesh, initial=start)
    assert_allclose(solution, v_star + kappa * psi, atol=1e-8)


def test_elliptic_constant_source_shift(one_point, small_mesh):
    zero = EllipticProblem(geom=one_point, gamma=0.5, source_field=np.zeros(small_mesh.n))
    shifted = EllipticProblem(geom=one_point, gamma=0.5, source_field=np.full(small_mesh.n, 0.5))
    assert_allclose(solve_elliptic(shifted, small_mesh), solve_elliptic(zero, small_mesh) - 0.5, atol=1e-8)


def test_larger_source_gives_smaller_solution(one_point, small_mesh):
    bump = 0.3 * np.exp(-small_mesh.nodes**2)
    low = solve_elliptic(EllipticProblem(geom=one_point, gamma=0.5, source_field=np.zeros(small_mesh.n)), small_mesh)
    high = solve_elliptic(EllipticProblem(geom=one_point, gamma=0.5, source_field=bump), small_mesh)
    assert np.all(high <= low + 1e-9)


def test_elliptic_problem_validation(one_point, smoke, small_mesh):
    zeros = np.zeros(small_mesh.n)
    with pytest.raises(DomainError):
        EllipticProblem(geom=one_point, gamma=0.5, source_field=zeros, rhs_potential_coeff=0.0)
    with pytest.raises(DomainError):
        EllipticProblem(geom=smoke, gamma=0.5, source_field=zeros)
    problem = EllipticProblem(geom=one_point, gamma=0.5, source_field=np.zeros(5))
    with pytest.raises(DomainError):
        solve_elliptic(problem, small_mesh)


def test_cusp_reference_bound_is_finite(one_point, small_mesh):
    bound = cusp_reference_bound(one_point, small_mesh)
    assert np.isfinite(bound)
    assert bound >= 0


@pytest.fixture
def conical_run(make_flow, bump):
    return run_flow(make_flow(output_times=(0.1, 0.2)), bump)


def test_subsolution_starts_at_the_flow(conical_run):
    sub = build_subsolution(conical_run, 0.1, l=2.0)
    start = conical_run.state_at(0.1)
    assert sub.times.tolist() == [0.1, 0.2]
    assert_allclose(sub.values[0], start.chi + 0.1 * conical_run.config.psi_bullet)
    assert sub.shift_C == 0.0
    report = check_subsolution(conical_run, sub)
    assert report.passed, report.violations[:3]


def test_subsolution_horizon(conical_run):
    with pytest.raises(HorizonError):
        build_subsolution(conical_run, 0.15)
    with pytest.raises(HorizonError):
        build_subsolution(conical_run, 0.3, l=2.0)
    with pytest.raises(HorizonError):
        build_subsolution(conical_run, 0.0)


def test_subsolution_admissibility(conical_run):
    # (2l - 1) g - g/2 < g/2 for l = 0.6
    with pytest.raises(AdmissibilityError):
        build_subsolution(conical_run, 0.1, l=0.6)


def test_contraction_of_shifted_runs(make_flow, bump):
    cfg = make_flow(output_times=(0.1, 0.2))
    upper = run_flow(cfg, bump + 5.0)
    lower = run_flow(cfg, bump)
    report = contraction_test(upper, lower)
    assert report.passed
    assert report.bound == pytest.approx(5.0)
    assert len(report.curve) == 4
    assert report.to_dict()["violation_count"] == 0


def test_contraction_needs_the_same_flow(make_flow, bump):
    conical = run_flow(make_flow(output_times=(0.1,)), bump)
    cusp = run_flow(make_flow(variant=FlowVariant.CUSP, output_times=(0.1,)), bump)
    with pytest.raises(ConfigError):
        contraction_test(conical, cusp)


def _synthetic(cfg, chi_at, times=(0.0, 0.1, 0.2)):
    zeros = np.zeros(cfg.mesh.n)
    states = [FlowState(t=t, chi=np.asarray(chi_at(t), dtype=float), phidot=zeros, metric_density=cfg.g) for t in times]
    return Trajectory(config=cfg, states=states)


def test_ordering_vs_regularized(make_flow):
    conical_cfg = make_flow()
    regularized_cfg = make_flow(variant=FlowVariant.REGULARIZED)
    lift = conical_cfg.psi_bullet + 0.5 * conical_cfg.ell
    conical = _synthetic(conical_cfg, lambda t: np.zeros(conical_cfg.mesh.n))

    above = _synthetic(regularized_cfg, lambda t: t * lift + 0.01)
    assert ordering_vs_regularized(conical, above).passed

    below = _synthetic(regularized_cfg, lambda t: t * (lift - 0.05), times=(0.0, 0.2))
    report = ordering_vs_regularized(conical, below)
    assert not report.passed
    assert {v[0] for v in report.violations} == {0.2}
    with pytest.raises(ConfigError):
        ordering_vs_regularized(above, conical)


def test_ordering_chain_on_synthetic_runs(make_flow):
    conical_cfg = make_flow()
    cusp_cfg = make_flow(variant=FlowVariant.CUSP)
    regularized_cfg = make_flow(variant=FlowVariant.REGULARIZED)
    n = conical_cfg.mesh.n
    conical = _synthetic(conical_cfg, lambda t: np.zeros(n))
    # cusp phi equals the lifted conical phi; regularized sits above it
    lifted = conical_cfg.psi_bullet + 0.5 * conical_cfg.ell
    cusp = _synthetic(cusp_cfg, lambda t: t * (lifted - cusp_cfg.psi_bullet))
    regularized = _synthetic(regularized_cfg, lambda t: t * lifted + 1.0, times=(0.0, 0.2))

    left, right = ordering_chain(conical, cusp, regularized)
    assert left.passed and right.passed
    assert [t for t, _ in left.curve] == [0.0, 0.2]
    assert left.max_defect == pytest.approx(0.0, abs=1e-12)
    assert right.max_defect == pytest.approx(-1.0)


def test_shared_times(make_flow):
    cfg = make_flow()
    a = _synthetic(cfg, lambda t: np.zeros(cfg.mesh.n), times=(0.0, 0.1, 0.2))
    b = _synthetic(cfg, lambda t: np.zeros(cfg.mesh.n), times=(0.0, 0.2, 0.3))
    assert shared_times(a, b) == [(0, 0), (2, 1)]


def test_nodal_ordering_reports_violations():
    u = np.array([-1.0, 0.0, 1.0])
    lower = np.array([[0.0, 0.5, 0.0]])
    upper = np.zeros((1, 3))
    report = nodal_ordering("sample", [0.25], u, lower, upper)
    assert not report.passed
    assert report.violations == [(0.25, 0.0, 0.5, 0.0)]
    assert report.max_defect == 0.5
    assert report.to_dict()["pass"] is False


def _smooth(rng, u, modes=4):
    """Random cosine modes tapered away from both ends"""
    phase = (u - u[0]) / (u[-1] - u[0])
    field = sum(rng.uniform(-1.0, 1.0) * np.cos(np.pi * k * phase) / k**2 for k in range(1, modes + 1))
    return np.exp(-(u**2) / 16.0) * field


def test_comparison_over_random_ordered_pairs(make_flow):
    cfg = make_flow(horizon_T=0.1, output_times=(0.05, 0.1))
    u = cfg.u
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(100):
        lower0 = 0.2 * _smooth(rng, u)
        upper0 = lower0 + 0.1 * (_smooth(rng, u) ** 2) + rng.uniform(0.0, 0.05)
        lower = run_flow(cfg, lower0)
        upper = run_flow(cfg, upper0)
        report = nodal_ordering("random pair", lower.times, u, lower.chi, upper.chi)
        failures += not report.passed
    assert failures == 0


def test_contraction_over_random_unordered_pairs(make_flow):
    cfg = make_flow(horizon_T=0.1, output_times=(0.05, 0.1))
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = run_flow(cfg, 0.2 * _smooth(rng, cfg.u))
        b = run_flow(cfg, 0.2 * _smooth(rng, cfg.u))
        report = contraction_test(a, b)
        assert report.passed, report.violations[:3]


def test_cusp_subsolution(make_flow, bump):
    cusp_run = run_flow(make_flow(variant=FlowVariant.CUSP, output_times=(0.1, 0.2)), bump)
    sub = build_subsolution(cusp_run, 0.1, l=2.0)
    assert sub.variant is FlowVariant.CUSP
    assert np.isfinite(sub.shift_C)
    report = check_subsolution(cusp_run, sub)
    assert report.passed, report.violations[:3]


def test_ordering_chain_on_real_runs(make_flow, bump):
    times = (0.1, 0.2)
    conical = run_flow(make_flow(output_times=times), bump)
    cusp = run_flow(make_flow(variant=FlowVariant.CUSP, output_times=times), bump)
    regularized = run_flow(make_flow(variant=FlowVariant.REGULARIZED, output_times=times), bump)
    left, right = ordering_chain(conical, cusp, regularized)
    assert left.passed, left.violations[:3]
    assert right.passed, right.violations[:3]
