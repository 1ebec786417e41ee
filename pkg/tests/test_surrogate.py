"""Majorization, touching and derivative checks for the surrogate builders."""

import numpy as np
import pytest

from accsp.approx import IDENTITY_PAIR, ThetaPair, c_row_rlx, c_row_rst
from accsp.model import (AccProblem, DcMaxFunction, Polytope, RandomSource,
                         SmoothConvexPiece, affine_piece, eval_dc)
from accsp.oracles import hinge1d_row_rlx, hinge1d_row_rst
from accsp.surrogate import (build_surrogate_objective, build_surrogate_rlx,
                             build_surrogate_rst, check_surrogate_conditions,
                             true_row_dd, true_row_value)

PA_PAIR = ThetaPair(
    ("pa", {"knots": [(0.0, 0.0), (0.5, 0.25), (1.0, 1.0)]}),
    ("pa", {"knots": [(0.0, 0.0), (0.5, 0.75), (1.0, 1.0)]}))

BUILDERS = {"rst": build_surrogate_rst, "rlx": build_surrogate_rlx}


def one_d_problem(functional, e=1.0, lo=-2.0, hi=2.0):
    return AccProblem(
        domain=Polytope(lo=[lo], hi=[hi]),
        objective=affine_piece([0.0], 1.0),
        functionals=[functional],
        row_coeffs=[[e]],
        thresholds=[0.5],
        source=RandomSource("uniform", lo=[-1.0], hi=[1.0]),
    )


def hinge_functional():
    # Z(x, z) = z - max(2x, 1 - 2x)
    return DcMaxFunction(
        [SmoothConvexPiece([0.0], 0.0, b_z=[1.0])],
        [affine_piece([2.0], 0.0), affine_piece([-2.0], 1.0)])


def absx_functional():
    # Z(x, z) = |x|, no sample dependence
    return DcMaxFunction([affine_piece([1.0]), affine_piece([-1.0])])


GRID_1D = [np.array([t]) for t in np.linspace(-1.0, 1.0, 41)]
DIRS_1D = [np.array([1.0]), np.array([-1.0])]


# ---------------------------------------------------------------------------
# exact and touching behaviour on hand-solvable instances


def test_affine_functional_surrogate_is_exact():
    # single affine piece per side: every candidate equals the subtracted
    # max, so the surrogate coincides with the row everywhere
    f = DcMaxFunction([affine_piece([1.0], 0.0)])
    prob = one_d_problem(f)
    z = np.array([0.0])
    for variant, build in BUILDERS.items():
        row = build(prob, 0, z, 0.5, np.array([0.3]))
        for x in np.linspace(-2.0, 2.0, 81):
            xv = np.array([x])
            assert row.value(xv) == pytest.approx(row.true_value(xv), abs=1e-12)
        for v in DIRS_1D:
            assert row.dd(np.array([0.3]), v) == pytest.approx(
                row.true_dd(np.array([0.3]), v), abs=1e-12)


def test_absx_touches_and_majorizes():
    prob = one_d_problem(absx_functional())
    z = np.zeros(1)
    xbar = np.array([0.5])
    row = build_surrogate_rst(prob, 0, z, 1.0, xbar)
    assert row.value(xbar) == pytest.approx(row.true_value(xbar), abs=1e-12)
    other = np.array([-0.5])
    assert row.value(other) >= row.true_value(other) - 1e-12
    rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
    assert rep["touching_ok"] and rep["majorization_ok"] and rep["dd_ok"]


@pytest.mark.parametrize("variant", ["rst", "rlx"])
@pytest.mark.parametrize("policy", ["eps-argmax", "single", "subgradient"])
def test_hinge_conditions_away_from_ties(variant, policy):
    prob = one_d_problem(hinge_functional())
    z = np.array([0.3])
    row = BUILDERS[variant](prob, 0, z, 0.2, np.array([0.3]), policy=policy)
    rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
    assert rep["touching_ok"], rep
    assert rep["majorization_ok"], rep
    # 0.3 is not a kink of the functional, so even one-candidate policies
    # reproduce the directional derivatives
    assert rep["dd_ok"], rep


def test_negative_coefficient_row():
    prob = one_d_problem(hinge_functional(), e=-1.0)
    z = np.array([-0.1])
    for variant in ("rst", "rlx"):
        row = BUILDERS[variant](prob, 0, z, 0.3, np.array([0.1]))
        rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
        assert rep["touching_ok"] and rep["majorization_ok"] and rep["dd_ok"]


def test_true_row_matches_ramp_row_evaluator():
    # the per-sample row must agree with the independent ramp evaluator
    prob = one_d_problem(hinge_functional(), e=-0.7)
    z = np.array([0.45])
    for x in np.linspace(-1.0, 1.0, 17):
        t = prob.functionals[0].value(np.array([x]), z)
        for variant, fn in (("rst", c_row_rst), ("rlx", c_row_rlx)):
            direct = true_row_value(prob, 0, np.array([x]), z, 0.25, variant)
            assert direct == pytest.approx(
                float(fn(np.array([t]), prob.E[0], 0.25)), abs=1e-12)


def test_true_row_mean_matches_hinge_oracle():
    # averaging the per-sample row over a fine z grid reproduces the
    # closed-form smoothed expectation
    prob = one_d_problem(hinge_functional())
    gamma = 0.2
    zs = np.linspace(-1.0, 1.0, 4001)[:-1] + 1.0 / 4000.0   # midpoints
    for x in (-0.05, 0.1, 0.3, 0.45):
        vals = [true_row_value(prob, 0, np.array([x]), np.array([zz]), gamma,
                               "rst") for zz in zs]
        assert np.mean(vals) == pytest.approx(hinge1d_row_rst(x, gamma),
                                              abs=2e-4)
        vals = [true_row_value(prob, 0, np.array([x]), np.array([zz]), gamma,
                               "rlx") for zz in zs]
        assert np.mean(vals) == pytest.approx(hinge1d_row_rlx(x, gamma),
                                              abs=2e-4)


# ---------------------------------------------------------------------------
# index policies at ties


def test_single_policy_misses_derivative_at_tie():
    # at the kink of |x| the one-candidate surrogate still touches and
    # majorizes but its derivative along -1 overshoots; the report says so
    prob = one_d_problem(absx_functional())
    row = build_surrogate_rst(prob, 0, np.zeros(1), 1.0, np.zeros(1),
                              policy="single")
    rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
    assert rep["touching_ok"] and rep["majorization_ok"]
    assert not rep["dd_ok"]
    assert rep["dd_max_gap"] >= 0.5


def test_eps_policy_restores_derivative_near_tie():
    prob = one_d_problem(absx_functional())
    xbar = np.array([0.05])
    row = build_surrogate_rst(prob, 0, np.zeros(1), 1.0, xbar,
                              policy=("eps-argmax", 0.1))
    rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
    assert rep["touching_ok"] and rep["majorization_ok"] and rep["dd_ok"]
    # the tight default eps keeps only the winning piece and fails there
    narrow = build_surrogate_rst(prob, 0, np.zeros(1), 1.0, np.zeros(1),
                                 policy=("eps-argmax", 0.0))
    rep = check_surrogate_conditions(narrow, GRID_1D, DIRS_1D)
    assert rep["touching_ok"] and rep["majorization_ok"]


def test_eps_family_upper_semicontinuous_along_sequence():
    # rows built at reference points converging to the kink converge to the
    # row built at the kink when eps dominates the offsets
    prob = one_d_problem(absx_functional())
    limit = build_surrogate_rst(prob, 0, np.zeros(1), 1.0, np.zeros(1),
                                policy=("eps-argmax", 0.1))
    probe = np.array([-0.2])
    vals = []
    # 2 * xbar <= eps from k = 5 on, so the family is stable along the tail
    for k in range(5, 12):
        xbar = np.array([1.0 / 2 ** k])
        row = build_surrogate_rst(prob, 0, np.zeros(1), 1.0, xbar,
                                  policy=("eps-argmax", 0.1))
        assert row.branch_counts == limit.branch_counts
        vals.append(row.value(probe))
    assert abs(vals[-1] - limit.value(probe)) < 1e-9


def test_subgradient_policy_single_atom():
    prob = one_d_problem(hinge_functional(), e=-0.5)
    z = np.array([0.2])
    for variant in ("rst", "rlx"):
        row = BUILDERS[variant](prob, 0, z, 0.2, np.array([0.3]),
                                policy="subgradient")
        assert row.form == "single-atom"
        rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
        assert rep["touching_ok"] and rep["majorization_ok"]


# ---------------------------------------------------------------------------
# the fully-linearized constructions


def test_full_policy_exact_for_affine_pieces():
    # with affine pieces the linearizations reproduce the pieces, so the
    # branch decomposition must equal the row everywhere
    prob = one_d_problem(hinge_functional())
    z = np.array([0.1])
    for variant, build in BUILDERS.items():
        row = build(prob, 0, z, 0.2, np.array([0.3]), policy="full")
        for x in np.linspace(-1.0, 1.0, 101):
            xv = np.array([x])
            assert row.value(xv) == pytest.approx(row.true_value(xv),
                                                  abs=1e-10)


def test_full_policy_pa_generators_exact():
    prob = one_d_problem(hinge_functional(), e=-0.8)
    z = np.array([-0.2])
    for variant, build in BUILDERS.items():
        row = build(prob, 0, z, 0.15, np.array([0.2]), policy="full",
                    theta=PA_PAIR)
        for x in np.linspace(-1.0, 1.0, 101):
            xv = np.array([x])
            assert row.value(xv) == pytest.approx(row.true_value(xv),
                                                  abs=1e-10)


def test_full_policy_small_gamma_approaches_step():
    prob = one_d_problem(hinge_functional())
    z = np.array([0.6])
    row = build_surrogate_rst(prob, 0, z, 1e-3, np.array([0.1]),
                              policy="full")
    f = prob.functionals[0]
    for x in (-0.5, 0.0, 0.1, 0.2, 0.6):
        xv = np.array([x])
        t = f.value(xv, z)
        if abs(t) > 0.1:
            step = 1.0 if t >= 0 else 0.0
            assert row.value(xv) == pytest.approx(step, abs=1e-6)


def test_full_policy_rejects_quadratic_pieces():
    f = DcMaxFunction([SmoothConvexPiece([1.0], 0.0, Q=[[1.0]])])
    prob = one_d_problem(f)
    with pytest.raises(ValueError, match="affine"):
        build_surrogate_rst(prob, 0, np.zeros(1), 0.5, np.zeros(1),
                            policy="full")


def test_linearized_bounds_bracket_quadratic_functional():
    # the one-sided linearizations used by the full construction bracket the
    # functional: max g - max Lh >= Z >= max Lg - max h, equality at xbar
    rng = np.random.default_rng(7)
    Q1 = np.array([[0.8]])
    f = DcMaxFunction(
        [SmoothConvexPiece([1.0], 0.0, Q=Q1), affine_piece([-0.5], 0.2)],
        [SmoothConvexPiece([0.3], 0.1, Q=np.array([[0.4]])),
         affine_piece([0.9], -0.3)])
    z = np.zeros(1)
    xbar = np.array([0.4])

    def tangent(p, x):
        g = p.grad(xbar, z)
        return p.value(xbar, z) + float(g @ (x - xbar))

    for x in np.linspace(-2.0, 2.0, 101):
        xv = np.array([x])
        val = f.value(xv, z)
        lz_h = max(p.value(xv, z) for p in f.g_pieces) - max(
            tangent(p, xv) for p in f.h_pieces)
        lz_g = max(tangent(p, xv) for p in f.g_pieces) - max(
            p.value(xv, z) for p in f.h_pieces)
        assert lz_g <= val + 1e-10
        assert val <= lz_h + 1e-10
    assert f.value(xbar, z) == pytest.approx(
        max(tangent(p, xbar) for p in f.g_pieces) - max(
            p.value(xbar, z) for p in f.h_pieces), abs=1e-12)


# ---------------------------------------------------------------------------
# randomized condition sweep


def random_functional(rng, n, quadratic=True):
    def piece():
        a = rng.normal(size=n)
        b = float(rng.normal())
        if quadratic and rng.random() < 0.5:
            M = rng.normal(size=(n, n)) * 0.4
            return SmoothConvexPiece(a, b, Q=M @ M.T)
        return SmoothConvexPiece(a, b)
    return DcMaxFunction([piece() for _ in range(rng.integers(1, 4))],
                         [piece() for _ in range(rng.integers(1, 4))])


@pytest.mark.parametrize("variant", ["rst", "rlx"])
@pytest.mark.parametrize("theta", [IDENTITY_PAIR, PA_PAIR],
                         ids=["identity", "pa"])
def test_random_rows_satisfy_conditions(variant, theta):
    rng = np.random.default_rng(42 if variant == "rst" else 43)
    for trial in range(20):
        n = int(rng.integers(1, 3))
        f = random_functional(rng, n)
        e = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.0))
        prob = one_d_problem_nd(f, n, e)
        gamma = float(rng.uniform(0.1, 1.0))
        xbar = rng.uniform(-1.0, 1.0, size=n)
        z = rng.uniform(-1.0, 1.0, size=1)
        row = BUILDERS[variant](prob, 0, z, gamma, xbar, theta=theta)
        probes = [rng.uniform(-2.0, 2.0, size=n) for _ in range(60)]
        dirs = unit_directions(rng, n)
        rep = check_surrogate_conditions(row, probes, dirs)
        assert rep["touching_gap"] <= 1e-10, (trial, rep)
        assert rep["majorization_violations"] == 0, (trial, rep)
        assert rep["dd_max_gap"] <= 1e-8, (trial, rep)


def one_d_problem_nd(functional, n, e):
    return AccProblem(
        domain=Polytope(lo=[-2.0] * n, hi=[2.0] * n),
        objective=affine_piece([0.0] * n, 1.0),
        functionals=[functional],
        row_coeffs=[[e]],
        thresholds=[0.5],
        source=RandomSource("uniform", lo=[-1.0], hi=[1.0]),
    )


def unit_directions(rng, n):
    dirs = []
    for d in range(n):
        e = np.zeros(n)
        e[d] = 1.0
        dirs.extend([e, -e])
    v = rng.normal(size=n)
    dirs.append(v / np.linalg.norm(v))
    return dirs


def test_row_derivative_matches_finite_differences():
    rng = np.random.default_rng(11)
    f = random_functional(rng, 2)
    prob = one_d_problem_nd(f, 2, -1.3)
    xbar = np.array([0.3, -0.2])
    z = np.array([0.25])
    for variant in ("rst", "rlx"):
        row = BUILDERS[variant](prob, 0, z, 0.4, xbar)
        for v in unit_directions(rng, 2):
            tau = 1e-7
            fd = (row.value(xbar + tau * v) - row.value(xbar)) / tau
            assert row.dd(xbar, v) == pytest.approx(fd, abs=1e-5)


def test_multi_functional_row_sums_groups():
    # two functionals with opposite signs in one row
    f1 = hinge_functional()
    f2 = absx_functional()
    prob = AccProblem(
        domain=Polytope(lo=[-2.0], hi=[2.0]),
        objective=affine_piece([0.0], 1.0),
        functionals=[f1, f2],
        row_coeffs=[[1.0, -0.5]],
        thresholds=[0.5],
        source=RandomSource("uniform", lo=[-1.0], hi=[1.0]),
    )
    z = np.array([0.15])
    for variant in ("rst", "rlx"):
        row = BUILDERS[variant](prob, 0, z, 0.3, np.array([0.4]))
        rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
        assert rep["touching_ok"] and rep["majorization_ok"] and rep["dd_ok"]
    # a zero coefficient contributes no group
    prob0 = AccProblem(
        domain=Polytope(lo=[-2.0], hi=[2.0]),
        objective=affine_piece([0.0], 1.0),
        functionals=[f1, f2],
        row_coeffs=[[1.0, 0.0]],
        thresholds=[0.5],
        source=RandomSource("uniform", lo=[-1.0], hi=[1.0]),
    )
    row0 = build_surrogate_rst(prob0, 0, z, 0.3, np.array([0.4]))
    only = build_surrogate_rst(prob, 0, z, 0.3, np.array([0.4]))
    assert len(row0.groups) < len(only.groups)


# ---------------------------------------------------------------------------
# objective surrogates


def test_objective_convex_case_exact():
    obj = DcMaxFunction([affine_piece([1.0], 0.0),
                         SmoothConvexPiece([0.0], 0.5, Q=[[2.0]])])
    prob = AccProblem(
        domain=Polytope(lo=[-1.0], hi=[1.0]),
        objective=obj,
        functionals=[absx_functional()],
        row_coeffs=[[1.0]],
        thresholds=[0.5],
        source=RandomSource("uniform", lo=[-1.0], hi=[1.0]),
    )
    row = build_surrogate_objective(prob, np.zeros(1), np.array([0.2]))
    for x in np.linspace(-1.0, 1.0, 41):
        xv = np.array([x])
        assert row.value(xv) == pytest.approx(row.true_value(xv), abs=1e-12)


def test_objective_dc_case_majorizes():
    # 2 - |x - 3/8| written as a difference of maxima
    obj = DcMaxFunction(
        [affine_piece([0.0], 2.0)],
        [affine_piece([1.0], -0.375), affine_piece([-1.0], 0.375)])
    prob = AccProblem(
        domain=Polytope(lo=[-1.0], hi=[1.0]),
        objective=obj,
        functionals=[absx_functional()],
        row_coeffs=[[1.0]],
        thresholds=[0.5],
        source=RandomSource("uniform", lo=[-1.0], hi=[1.0]),
    )
    row = build_surrogate_objective(prob, np.zeros(1), np.array([0.7]))
    rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
    assert rep["touching_ok"] and rep["majorization_ok"] and rep["dd_ok"]
    sub = build_surrogate_objective(prob, np.zeros(1), np.array([0.7]),
                                    policy="subgradient")
    assert sub.form == "single-atom"


# ---------------------------------------------------------------------------
# flattening into the solver normal form


def flattened_value(atom, x):
    a, b, max_terms = atom.flatten()
    val = float(a @ x) + b
    for w, pieces in max_terms:
        inner = max(float(p.a @ x) + p.b +
                    (0.5 * float(x @ p.Q @ x) if p.Q is not None else 0.0)
                    for p in pieces)
        val += w * inner
    return val


@pytest.mark.parametrize("theta", [IDENTITY_PAIR, PA_PAIR],
                         ids=["identity", "pa"])
def test_flatten_preserves_atom_values(theta):
    prob = one_d_problem(hinge_functional(), e=-0.6)
    z = np.array([0.3])
    for variant in ("rst", "rlx"):
        row = BUILDERS[variant](prob, 0, z, 0.2, np.array([0.35]),
                                theta=theta)
        for g in row.groups:
            for atom in g.atoms:
                for x in np.linspace(-1.0, 1.0, 21):
                    xv = np.array([x])
                    assert flattened_value(atom, xv) == pytest.approx(
                        atom.value(xv), abs=1e-10)


def test_flatten_rejects_smooth_generator():
    smooth = ThetaPair(("smooth-power", {"p": 2.0}), "identity")
    prob = one_d_problem(hinge_functional())
    row = build_surrogate_rst(prob, 0, np.array([0.2]), 0.2, np.array([0.3]),
                              theta=smooth)
    with pytest.raises(ValueError, match="flattening"):
        for g in row.groups:
            for atom in g.atoms:
                atom.flatten()


def test_rlx_atoms_flatten_for_smooth_generator():
    # the relaxed path linearizes the generators, so flattening succeeds
    # even for smooth theta
    smooth = ThetaPair(("smooth-power", {"p": 2.0}),
                       ("smooth-root", {"p": 2.0}))
    prob = one_d_problem(hinge_functional(), e=-0.4)
    row = build_surrogate_rlx(prob, 0, np.array([0.2]), 0.2, np.array([0.3]),
                              theta=smooth)
    for g in row.groups:
        for atom in g.atoms:
            for x in np.linspace(-1.0, 1.0, 11):
                xv = np.array([x])
                assert flattened_value(atom, xv) == pytest.approx(
                    atom.value(xv), abs=1e-10)
    rep = check_surrogate_conditions(row, GRID_1D, DIRS_1D)
    assert rep["touching_ok"] and rep["majorization_ok"]


# ---------------------------------------------------------------------------
# validation


def test_gamma_must_be_positive():
    prob = one_d_problem(absx_functional())
    for build in BUILDERS.values():
        with pytest.raises(ValueError, match="gamma"):
            build(prob, 0, np.zeros(1), 0.0, np.zeros(1))


def test_unknown_policy_rejected():
    prob = one_d_problem(absx_functional())
    with pytest.raises(ValueError, match="policy"):
        build_surrogate_rst(prob, 0, np.zeros(1), 0.5, np.zeros(1),
                            policy="argmax")


def test_true_row_dd_matches_finite_differences():
    prob = one_d_problem(hinge_functional(), e=-0.9)
    z = np.array([0.4])
    gamma = 0.3
    for x in (-0.3, 0.1, 0.45):
        for v in DIRS_1D:
            xv = np.array([x])
            tau = 1e-7
            fd = (true_row_value(prob, 0, xv + tau * v, z, gamma, "rst")
                  - true_row_value(prob, 0, xv, z, gamma, "rst")) / tau
            assert true_row_dd(prob, 0, xv, z, gamma, "rst", v) == \
                pytest.approx(fd, abs=1e-5)
