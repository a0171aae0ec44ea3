import dataclasses
import math

import numpy as np
import pytest

from expstab import SystemModel
from expstab.scalar import ScalarGains
from expstab.scenarios import build_scalar, build_wing_rock
from expstab.sim import (
    Scenario,
    ScenarioError,
    build_grid,
    export_csv,
    export_npz,
    integrate_fixed,
    load_csv,
    load_npz,
    simulate,
)


def test_rk4_against_analytic_decay():
    grid = np.linspace(0.0, 1.0, 101)
    out = integrate_fixed(lambda t, y: (-y[0],), (1.0,), grid)
    assert abs(out[-1, 0] - math.exp(-1.0)) <= 1e-8


def test_rk4_fourth_order_convergence():
    def f(t, y):
        return (math.cos(t) * y[0],)

    exact = math.exp(math.sin(2.0))
    errs = []
    for npts in (21, 41):
        out = integrate_fixed(f, (1.0,), np.linspace(0.0, 2.0, npts))
        errs.append(abs(out[-1, 0] - exact))
    assert errs[1] < errs[0] / 12.0  # better than a factor 2^4 with slack


def test_grid_hits_breakpoints_exactly():
    bps = [math.pi / 3.0, 2.0 * math.pi / 3.0]
    segments, n_steps = build_grid(2.5, 1e-2, bps)
    nodes = np.concatenate(segments)
    for b in bps:
        assert b in nodes
    for seg in segments:
        assert np.all(np.diff(seg) > 0)
    assert segments[0][0] == 0.0 and segments[-1][-1] == 2.5


def test_wing_rock_trajectory_contains_breakpoints():
    traj = simulate(build_wing_rock("theorem1", horizon=1.5))
    for k in (1,):
        assert (k * math.pi / 3.0) in traj.t


def test_origin_is_a_fixed_point():
    scn = build_wing_rock("theorem1", horizon=0.2)
    scn = dataclasses.replace(scn, x0=np.zeros(2))
    traj = simulate(scn)
    assert traj.completed
    assert np.all(traj.x == 0.0)
    assert np.all(traj.u == 0.0)
    assert np.all(traj.theta_hat == 0.0)
    assert np.all(traj.aux == -0.3)  # the gain estimate never moves


def test_runs_are_deterministic():
    a = simulate(build_wing_rock("theorem1", horizon=0.5))
    b = simulate(build_wing_rock("theorem1", horizon=0.5))
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.theta_hat, b.theta_hat)
    assert np.array_equal(a.aux, b.aux)


def test_divergence_is_detected_and_stamped():
    # an understated deviation radius with a hot plant: the damping cannot
    # dominate and the loop blows up in finite time
    model = SystemModel(
        n=1, q=1,
        regressors=[lambda x: (x * x,)],
        theta_signal=lambda t: (6.0,),
        b_signal=lambda t: 1.0,
    )
    scn = Scenario(
        name="blowup",
        model=model,
        controller="scalar-A",
        gains=ScalarGains(k=0.1, lam=0.0, gamma_a=1e-9),
        x0=np.asarray([12.0]),
        horizon=5.0,
        step=1e-3,
    )
    traj = simulate(scn)
    assert traj.status == "diverged"
    assert traj.failure_time is not None and traj.failure_time < 5.0
    assert np.all(np.isfinite(traj.x))  # recorded part stays finite


def test_violent_blowup_still_reports_diverged():
    # odd damping makes the stage arithmetic cubic: from a huge initial
    # state the Runge-Kutta stages overflow to inf within one step, which
    # must come back as a diverged run, not an exception
    scn = build_scalar("scalar-B", a_nominal=8.0, a_deviation=3.0, x0=1e6,
                       k=0.5, horizon=1.0, step=1e-3)
    traj = simulate(scn)
    assert traj.status == "diverged"


def test_nussbaum_overflow_marks_run():
    from expstab.nussbaum import NussbaumSpec

    scn = build_scalar("scalar-C", a_nominal=2.0, x0=1.5, a_deviation=0.4,
                       b_value=1.5, horizon=12.0, step=5e-4,
                       nussbaum=NussbaumSpec(kind="cos-exp-square", xi_max=0.2))
    traj = simulate(scn)
    assert traj.status == "overflow"


def test_record_every_decimates_but_keeps_final():
    full = simulate(build_wing_rock("theorem1", horizon=0.3))
    thin = simulate(build_wing_rock("theorem1", horizon=0.3, record_every=7))
    assert len(thin.t) < len(full.t)
    assert thin.t[-1] == full.t[-1]
    assert np.array_equal(thin.x[-1], full.x[-1])


def test_scenario_validation_errors():
    scn = build_wing_rock("theorem1", horizon=1.0)
    with pytest.raises(ScenarioError):
        dataclasses.replace(scn, step=-1.0).validate()
    with pytest.raises(ScenarioError):
        dataclasses.replace(scn, controller="nope").validate()
    with pytest.raises(ScenarioError):
        dataclasses.replace(scn, rho_hat0=0.3).validate()  # wrong sign for b < 0
    with pytest.raises(ScenarioError):
        dataclasses.replace(scn, theta_hat0=np.asarray([-0.1, 0.0])).validate()
    t2 = build_wing_rock("theorem2", horizon=1.0)
    with pytest.raises(ScenarioError):
        dataclasses.replace(t2, xi0=-0.5).validate()


# -- persistence -------------------------------------------------------------


@pytest.fixture(scope="module")
def short_run():
    return simulate(build_wing_rock("theorem1", horizon=0.2, record_every=3))


def test_csv_round_trip_exact(tmp_path, short_run):
    path = tmp_path / "traj.csv"
    export_csv(short_run, path)
    data = load_csv(path)
    names = short_run.column_names()
    cols = short_run.column_data()
    assert list(data.keys()) == names
    for name, col in zip(names, cols):
        assert np.array_equal(data[name], col), name


def test_csv_column_count_schema(short_run):
    # t + x(n) + u + estimates(q) + aux + mu + diagnostics(n for s, rest)
    names = short_run.column_names()
    n, q = 2, 2
    n_diag = n + len(short_run.diag)
    assert len(names) == 1 + n + 1 + q + 1 + 1 + n_diag
    assert names[0] == "t" and "rho_hat" in names


def test_npz_round_trip_bit_exact(tmp_path, short_run):
    path = tmp_path / "traj.npz"
    export_npz(short_run, path)
    back = load_npz(path)
    assert back.status == short_run.status
    assert back.controller == short_run.controller
    assert np.array_equal(back.t, short_run.t)
    assert np.array_equal(back.x, short_run.x)
    assert np.array_equal(back.u, short_run.u)
    assert np.array_equal(back.theta_hat, short_run.theta_hat)
    assert np.array_equal(back.aux, short_run.aux)
    for k in short_run.diag:
        assert np.array_equal(back.diag[k], short_run.diag[k])
    assert back.meta["schema"] == "expstab-trajectory-v1"


def test_step_halving_short_horizon_consistency():
    a = simulate(build_wing_rock("theorem1", horizon=1.0))
    b = simulate(build_wing_rock("theorem1", horizon=1.0, step=5e-5))
    assert np.max(np.abs(a.x[-1] - b.x[-1])) <= 1e-6


def test_empty_trajectory_exports_header_only(tmp_path, short_run):
    import dataclasses

    empty = dataclasses.replace(
        short_run,
        t=short_run.t[:0],
        x=short_run.x[:0],
        u=short_run.u[:0],
        theta_hat=short_run.theta_hat[:0],
        aux=short_run.aux[:0],
        mu=short_run.mu[:0],
        s=short_run.s[:0],
        diag={k: v[:0] for k, v in short_run.diag.items()},
    )
    path = tmp_path / "empty.csv"
    export_csv(empty, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1  # header only
    assert lines[0].split(",")[0] == "t"
    data = load_csv(path)
    assert all(len(col) == 0 for col in data.values())
