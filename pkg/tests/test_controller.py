import mpmath as mp
import numpy as np
import pytest

import helpers as H
from clbfgp import config
from clbfgp.controller import (FULL, RELAXED, SwitchedController, Trajectory, check_spec,
                               decrease_violations, mode_select_full, simulate, verify_alpha)
from clbfgp.expr import const, eval_expr
from clbfgp.fitness import Candidate, FixedModes, SynthesisProblem
from clbfgp.interval import Box
from clbfgp.parse import parse_expr
from clbfgp.reach import SystemModel
from clbfgp.verify import Proved, Refuted


def toy(modes, gain=10.0):
    """``x' = gain * u`` on [-1, 1] with V = x^2 - 0.9."""
    sys = SystemModel([parse_expr(f"{gain}*u", ["x", "u"])], Box([-1], [1]), Box([-10], [10]))
    fm = FixedModes(tuple((parse_expr(m, ["x"]),) for m in modes))
    p = SynthesisProblem(sys, Box([-1], [1]), Box([-0.5], [0.5]), Box([-0.1], [0.1]), 0.001,
                         [200.0], fm)
    return p, parse_expr("x^2 - 0.9", ["x"])


def linear_controller(law=FULL, alpha=None):
    pf = config.load_problem("linear")
    V = parse_expr("x1^2 + x2^2 - 0.5", pf.state_names)
    c = SwitchedController.from_candidate(pf.problem, Candidate(V), law, alpha)
    return pf.problem, c


def test_single_mode_always_selected():
    p, V = toy(["-x"])
    c = SwitchedController(p, V, [list(g) for g in p.modes.modes])
    assert all(c.select([x]) == 0 for x in np.linspace(-1, 1, 11))


def test_identical_modes_pick_lowest_index():
    p, V = toy(["-x", "-x"])
    c = SwitchedController(p, V, [list(g) for g in p.modes.modes])
    assert c.select([0.7]) == 0 and c.select([-0.3]) == 0


def test_full_law_matches_sampled_worst_case():
    p, c = linear_controller()
    x = np.array([0.5, 0.5])
    bounds = c.vdot_bounds(x)
    rng = np.random.default_rng(0)
    worst = []
    for q, g in enumerate(c.modes):
        u = [eval_expr(e, list(x)) for e in g]
        fx = np.array([x[1], -x[0] + u[0]])
        vals = []
        for _ in range(2000):
            tau = rng.uniform(0, p.h)
            e = rng.uniform(-p.eps, p.eps)
            z = x + tau * fx + tau ** 2 * e
            vals.append(2 * z[0] * z[1] + 2 * z[1] * (-z[0] + u[0]))
        worst.append(max(vals))
    assert np.all(bounds >= np.array(worst) - 1e-12)
    assert mode_select_full(c, x) == int(np.argmin(worst)) == 0


def test_relaxed_law_uses_alpha():
    alpha = [const(100.0), const(100.0), const(-100.0)]
    _, c = linear_controller(RELAXED, alpha)
    assert c.select([0.5, 0.5]) == 2
    with pytest.raises(ValueError):
        linear_controller(RELAXED, alpha[:2])


def test_verify_alpha_single_mode_proved():
    p, V = toy(["-x"])
    c = SwitchedController(p, V, [list(g) for g in p.modes.modes], RELAXED, [const(0.0)])
    assert all(isinstance(o, Proved) for o in verify_alpha(p, c, budget=200_000))


def test_verify_alpha_bad_preference_refuted():
    p, V = toy(["-x", "x"])
    c = SwitchedController(p, V, [list(g) for g in p.modes.modes], RELAXED,
                           [const(0.0), const(-1000.0)])
    outs = verify_alpha(p, c, budget=200_000)
    assert isinstance(outs[1], Refuted)
    # mode 1 is never picked, so its claim holds vacuously
    assert isinstance(outs[0], Proved)


def test_zero_dynamics_trajectory_is_constant():
    sys = SystemModel([const(0.0), const(0.0)], Box([-1, -1], [1, 1]), Box([-1], [1]))
    p = SynthesisProblem(sys, Box([-1, -1], [1, 1]), Box([-0.5, -0.5], [0.5, 0.5]),
                         Box([-0.1, -0.1], [0.1, 0.1]), 0.01, [0.0, 0.0],
                         FixedModes(((const(0.0),),)))
    c = SwitchedController(p, parse_expr("x1", ["x1", "x2"]), [[const(0.0)]])
    tr = simulate(p, c, [0.3, -0.2], t_end=0.5)
    assert np.all(tr.states == [0.3, -0.2]) and len(tr.times) == 51


def test_substep_halving_converges():
    p, c = linear_controller()
    a = simulate(p, c, [0.6, -0.4], t_end=1.0, substeps=10)
    b = simulate(p, c, [0.6, -0.4], t_end=1.0, substeps=20)
    assert np.array_equal(a.modes, b.modes)
    assert np.max(np.abs(a.states[-1] - b.states[-1])) <= 1e-6


def test_trajectory_csv():
    p, c = linear_controller()
    text = simulate(p, c, [0.6, -0.4], t_end=0.05).to_csv(["x1", "x2"])
    lines = text.splitlines()
    assert lines[0] == "t,x1,x2,q,u" and len(lines) == 7


def _traj(points, left=False):
    pts = np.array(points, dtype=float)
    return Trajectory(np.arange(len(pts)) * 0.01, pts, np.zeros(len(pts) - 1, dtype=int),
                      np.zeros((len(pts) - 1, 1)), 0.01, left)


def test_check_spec_cases():
    p = config.load_problem("linear").problem
    r = check_spec(_traj([[0.5, 0.5], [0.2, 0.2], [0.05, 0.0], [0.0, 0.0]]), p)
    assert r.rws and r.rsws and r.reach_time == pytest.approx(0.02)
    assert r.settle_time == pytest.approx(0.02)
    r = check_spec(_traj([[0.5, 0.5], [0.05, 0.0], [0.5, 0.0]]), p)
    assert r.rws and not r.rsws
    r = check_spec(_traj([[0.5, 0.5], [1.5, 0.0], [0.0, 0.0]]), p)
    assert not r.rws
    assert not check_spec(_traj([[0.5, 0.5], [0.4, 0.4]]), p).rws


def test_decrease_violations_flags_increase():
    p, c = linear_controller()
    tr = _traj([[0.3, 0.3], [0.5, 0.5], [0.05, 0.0]])
    assert decrease_violations(tr, p, c) == [0]


def test_pendulum_V_against_high_precision():
    pf = config.load_problem("pendulum")
    V = pf.candidate().V
    for x in ([0.0, 1.0], [-0.75, 0.0], [1.3, -2.2]):
        with mp.workdps(50):
            ref = float(H.mp_eval(V, x))
        assert eval_expr(V, x) == pytest.approx(ref, rel=1e-12)
    assert eval_expr(V, [-0.75, 0.0]) == pytest.approx(-4015.83, abs=0.01)
