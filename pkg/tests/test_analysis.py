import numpy as np
import pytest

from fedgan.analysis import (AgentFields, EstimatedConstants, GradientField, InterpolatedPath, PreconditionError,
                             ProbeBox, check_lemmas, check_two_timescale, deviation_at, estimate_constants, euler,
                             find_lambda, integrate_ode, lemma1_bound, lemma2_bound, rk4, theorem1_deviation,
                             validate_schedule, write_lemma_csv)
from fedgan.datasets import Partition, gen_uniform_1d, partition_noniid
from fedgan.federation import Schedule, run_fedgan
from fedgan.models import analytic2d_params, make_analytic2d

ONES = EstimatedConstants(L=0.5, sigma_g=1.0, sigma_h=1.0, mu_g=1.0)


@pytest.fixture(scope="module")
def field2d():
    ds = gen_uniform_1d(4096, seed=0)
    return GradientField(make_analytic2d(), "non_saturating", ds, n_latent=4096, seed=0)


# -- bounds -----------------------------------------------------------------

def test_bound_arithmetic():
    assert lemma1_bound(ONES, 0.1, 1, 5) == pytest.approx(0.3, abs=1e-12)
    assert lemma2_bound(ONES, 0.1, 2) == pytest.approx(0.43, abs=1e-12)
    assert lemma1_bound(ONES, 0.1, 10, 5) == 0.0
    r = [lemma1_bound(ONES, 0.1, n, 6) for n in range(6)]
    assert all(x < y for x, y in zip(r, r[1:]))
    no_mu = EstimatedConstants(L=0.7, sigma_g=0.4, sigma_h=0.2, mu_g=0.0)
    assert lemma2_bound(no_mu, 0.05, 1) == pytest.approx(lemma1_bound(no_mu, 0.05, 1, 3), rel=1e-15)
    assert lemma2_bound(no_mu, 0.05, 7) >= 0
    with pytest.raises(ValueError):
        lemma1_bound(EstimatedConstants(0.0, 1, 1, 1), 0.1, 1, 2)
    with pytest.raises(ValueError):
        EstimatedConstants(-1.0, 1, 1, 1)


# -- constants --------------------------------------------------------------

def test_constants_single_agent_and_stability():
    model = make_analytic2d()
    ds = gen_uniform_1d(2000, seed=1)
    one = Partition([np.arange(2000)], np.array([1.0]))
    box = ProbeBox(np.array([-1.0, 0.0]), np.array([1.0, 2.0]))   # (psi, theta)
    c1 = estimate_constants(model, "non_saturating", ds, one, box, seed=1, noise_batches=16)
    c2 = estimate_constants(model, "non_saturating", ds, one, box, seed=2, noise_batches=16)
    assert c1.mu_g == 0.0
    assert np.isfinite(c1.L) and c1.L > 0
    assert abs(c1.L - c2.L) <= 0.1 * max(c1.L, c2.L)
    assert c1.n_probes == 100 and c1.n_pairs == 200


def test_noise_constant_scales_with_batch():
    model = make_analytic2d()
    ds = gen_uniform_1d(2000, seed=1)
    part = partition_noniid(ds, 2, "by_range")
    box = ProbeBox(np.array([0.2, 0.4]), np.array([0.8, 1.2]))
    small = estimate_constants(model, "non_saturating", ds, part, box, batch=16, seed=3, noise_batches=64)
    big = estimate_constants(model, "non_saturating", ds, part, box, batch=64, seed=3, noise_batches=64)
    assert 1.6 < small.sigma_g / big.sigma_g < 2.5
    assert 1.6 < small.sigma_h / big.sigma_h < 2.5
    assert big.mu_g > 0


def test_constants_preconditions():
    with pytest.raises(PreconditionError):
        ProbeBox(np.zeros(2), np.zeros(2))
    model = make_analytic2d()
    ds = gen_uniform_1d(100)
    one = Partition([np.arange(100)], np.array([1.0]))
    with pytest.raises(PreconditionError):
        estimate_constants(model, "non_saturating", ds, one, ProbeBox(np.zeros(2), np.ones(2)), n_probes=50)


# -- lemma checks -------------------------------------------------------------

def _small_run(B, K, N=31):
    model = make_analytic2d()
    ds = gen_uniform_1d(1000, seed=4)
    part = Partition([np.arange(1000)], np.array([1.0])) if B == 1 else partition_noniid(ds, B, "by_range")
    traj = run_fedgan(model, "non_saturating", ds, part, Schedule.equal(0.5, 50, 0.6, K), N, 32,
                      master_seed=2, init=analytic2d_params(0.5, 0.8))
    return model, ds, part, traj


def test_noise_free_single_agent_lemma_lhs_is_zero(tmp_path):
    model, ds, part, traj = _small_run(1, 5)
    exact = AgentFields(model, "non_saturating", ds, part, 4096, 0)
    for w in range(3):
        r1, r2 = check_lemmas(traj, model, "non_saturating", ONES, (5 * w, 5 * w + 5), 32, ds, part,
                              exact=exact, n_latent=4096)
        np.testing.assert_array_equal(r1.lhs, 0.0)
        np.testing.assert_array_equal(r2.lhs, 0.0)
        assert r1.satisfied and r2.satisfied
    write_lemma_csv(tmp_path / "l.csv", [(r1, r2)])
    lines = open(tmp_path / "l.csv").read().splitlines()
    assert lines[0] == "check,window_start,n,lhs,bound,ok"
    assert lines[-2].startswith("status,slack,L")


def test_lemma_window_start_is_zero_and_statuses():
    model, ds, part, traj = _small_run(3, 5)
    r1, r2 = check_lemmas(traj, model, "non_saturating", ONES, (10, 15), 32, ds, part, n_latent=4096)
    assert r1.lhs[0] == 0.0 and r1.bound[0] == 0.0
    assert list(r1.steps) == [10, 11, 12, 13, 14] and list(r2.steps) == [15]
    tiny = EstimatedConstants(L=1e-3, sigma_g=1e-9, sigma_h=1e-9, mu_g=1e-9)
    t1, _ = check_lemmas(traj, model, "non_saturating", tiny, (10, 15), 32, ds, part, n_latent=4096)
    assert t1.status == "violated"


def test_lemma_preconditions():
    model, ds, part, traj = _small_run(3, 5)
    with pytest.raises(PreconditionError):
        check_lemmas(traj, model, "non_saturating", ONES, (3, 8), 32, ds, part)
    with pytest.raises(PreconditionError):
        check_lemmas(traj, model, "non_saturating", ONES, (5, 10), 16, ds, part)
    with pytest.raises(PreconditionError):
        check_lemmas(traj, model, "non_saturating", None, (5, 10), 32, ds, part)
    with pytest.raises(PreconditionError):
        check_lemmas(traj, model, "non_saturating", ONES, (5, 10), 32, ds, Partition([np.arange(1000)], np.ones(1)))


# -- ODE ----------------------------------------------------------------------

def test_rk4_matches_fine_euler(field2d):
    z0 = np.array([0.8, 0.5])
    sol = integrate_ode(field2d, z0, 0.0, 1.0, 1e-8)
    ref = euler(field2d, z0, 0.0, 1.0, 1e-4)
    assert np.max(np.abs(sol.final - ref)) < 1e-5


def test_rk4_fourth_order(field2d):
    z0 = np.array([0.8, 0.5])
    # Richardson-extrapolated fine Euler: first-order error cancels, leaving O(h^2) ~ 1e-8
    ref = 2 * euler(field2d, z0, 0.0, 1.0, 1e-4) - euler(field2d, z0, 0.0, 1.0, 2e-4)
    errs = [np.max(np.abs(rk4(field2d, z0, 0.0, 1.0, round(1 / h)).final - ref)) for h in (0.25, 0.125, 0.0625)]
    for e1, e2 in zip(errs, errs[1:]):
        assert 4 <= e1 / e2 <= 64


def test_equilibrium_is_constant_solution():
    q = lambda z: np.zeros_like(z)
    sol = integrate_ode(q, np.array([0.0, 1.0]), 0.0, 3.0, 1e-9)
    np.testing.assert_array_equal(sol.z, np.tile([0.0, 1.0], (len(sol.z), 1)))


def test_backward_forward_round_trip(field2d):
    z0 = np.array([0.3, 0.7])
    tol = 1e-8
    back = integrate_ode(field2d, z0, 2.0, 1.0, tol)
    fwd = integrate_ode(field2d, back.final, 1.0, 2.0, tol)
    assert np.max(np.abs(fwd.final - z0)) < 10 * tol
    with pytest.raises(ValueError):
        integrate_ode(field2d, z0, 0, 1, 0.0)


def test_interpolated_path_exact_at_knots():
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.random(20) + 0.01)
    z = rng.normal(size=(20, 3))
    path = InterpolatedPath(t, z)
    for k in range(20):
        np.testing.assert_array_equal(path(t[k]), z[k])
    np.testing.assert_allclose(path(0.5 * (t[3] + t[4])), 0.5 * (z[3] + z[4]))
    with pytest.raises(ValueError):
        path(t[-1] + 1)
    with pytest.raises(ValueError):
        InterpolatedPath(np.array([0.0, 0.0]), np.zeros((2, 1)))


def test_noise_free_deviation_is_discretization_error(field2d):
    z0 = np.array([0.8, 0.5])

    def euler_path(h, T=1.0):
        n = round(T / h)
        z = [z0]
        for _ in range(n):
            z.append(z[-1] + h * field2d(z[-1]))
        return InterpolatedPath(h * np.arange(n + 1), np.array(z))

    d1, _ = deviation_at(euler_path(0.02), field2d, 0.0, 1.0, 1e-9)
    d2, _ = deviation_at(euler_path(0.01), field2d, 0.0, 1.0, 1e-9)
    assert 0.3 <= d2 / d1 <= 0.7


def test_theorem1_zero_horizon_and_preconditions(field2d):
    model, ds, part, traj = _small_run(3, 5, N=60)
    t_end = InterpolatedPath.from_trajectory(traj).t[-1]
    rep = theorem1_deviation(traj, field2d, [0.0, 0.5 * t_end, t_end], 0.0)
    np.testing.assert_array_equal(rep.deviations, 0.0)
    with pytest.raises(PreconditionError):
        theorem1_deviation(traj, field2d, [t_end - 0.5], 1.0)
    tts = run_fedgan(model, "non_saturating", ds, part, Schedule.two_timescale(0.5, 0.1, 50, 0.6, 0.9, 5),
                     20, 8, init=analytic2d_params(0.5, 0.8))
    with pytest.raises(PreconditionError):
        theorem1_deviation(tts, field2d, [0.0], 0.0)


# -- two time-scale -----------------------------------------------------------

def test_find_lambda_at_theta_one_matches_grid(field2d):
    model = make_analytic2d()
    oracle = field2d.oracle
    grid = np.linspace(-0.5, 0.5, 2001)
    objective = [oracle(*analytic2d_params(1.0, psi)).objective_d for psi in grid]
    best = grid[int(np.argmax(objective))]
    lam = find_lambda(field2d, np.array([1.0]), np.array([0.4]), 1e-8)
    assert lam.converged and lam.grad_norm < 1e-8
    assert abs(lam.w[0] - best) <= 1e-3
    assert abs(lam.w[0]) < 0.02
    # already at the attractor: no iterations
    again = find_lambda(field2d, np.array([1.0]), lam.w, 1e-8)
    assert again.iterations == 0 and np.array_equal(again.w, lam.w)
    # nearby starts land on the same attractor
    other = find_lambda(field2d, np.array([1.0]), np.array([0.45]), 1e-8)
    assert abs(other.w[0] - lam.w[0]) < 10 * 1e-8 / 0.1
    with pytest.raises(ValueError):
        find_lambda(field2d, np.array([1.0]), np.array([0.0]), 0.0)


def test_two_timescale_needs_tts_run(field2d):
    model, ds, part, traj = _small_run(3, 5)
    with pytest.raises(PreconditionError):
        check_two_timescale(traj, field2d, [5])
    tts = run_fedgan(model, "non_saturating", ds, part, Schedule.two_timescale(0.5, 0.1, 50, 0.6, 0.9, 5),
                     21, 8, init=analytic2d_params(0.5, 0.8))
    rep = check_two_timescale(tts, field2d, [0, 10, 20], tol=1e-7)
    assert rep.converged.all() and np.all(rep.gaps >= 0)
    assert list(rep.steps) == [0, 10, 20]


@pytest.mark.parametrize("sched,ok", [
    (Schedule.equal(0.1, 10, 0.6, 1), True),
    (Schedule.equal(0.1, 10, 0.5, 1), False),
    (Schedule.equal(0.1, 10, 1.0, 1), True),
    (Schedule.equal(0.1, 10, 1.1, 1), False),
    (Schedule.two_timescale(0.1, 0.05, 10, 0.6, 0.9, 1), True),
    (Schedule.two_timescale(0.1, 0.05, 10, 0.9, 0.6, 1), False),
    (Schedule.two_timescale(0.1, 0.05, 10, 0.6, 0.6, 1), False),
])
def test_validate_schedule(sched, ok):
    assert validate_schedule(sched) is ok


def test_validate_schedule_rejects_other_families():
    with pytest.raises(TypeError):
        validate_schedule({"a0": 0.1})
