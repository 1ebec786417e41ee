import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from accsp.model import (
    AccProblem,
    DcMaxFunction,
    Polytope,
    RandomSource,
    SmoothConvexPiece,
    affine_piece,
    audit_gradient_bound,
    build_logical_event,
    dc_compose,
    dir_deriv_dc,
    eval_dc,
    zero_piece,
)


def coord(n, d, scale=1.0, offset=0.0):
    a = np.zeros(n)
    a[d] = scale
    return affine_piece(a, offset)


class TestPieces:
    def test_affine_value_grad(self):
        p = affine_piece([2.0, -1.0], 0.5)
        x = np.array([1.0, 3.0])
        assert p.value(x, []) == pytest.approx(2 - 3 + 0.5)
        np.testing.assert_allclose(p.grad(x, []), [2.0, -1.0])
        assert p.kind == "affine"

    def test_quadratic_value_grad(self):
        Q = np.array([[2.0, 0.0], [0.0, 4.0]])
        p = SmoothConvexPiece([1.0, 0.0], 1.0, Q=Q)
        x = np.array([1.0, -1.0])
        assert p.value(x, []) == pytest.approx(0.5 * (2 + 4) + 1 + 1)
        np.testing.assert_allclose(p.grad(x, []), Q @ x + [1.0, 0.0])
        assert p.kind == "convex-quadratic"

    def test_psd_enforced(self):
        with pytest.raises(ValueError):
            SmoothConvexPiece([0.0], 0.0, Q=[[-1.0]])
        with pytest.raises(ValueError):
            SmoothConvexPiece([0.0, 0.0], 0.0, Q=[[1.0, 2.0], [0.0, 1.0]])

    def test_linear_in_z(self):
        # value x*z1 + z2 at scalar x
        p = SmoothConvexPiece([0.0], 0.0, a_z=[[1.0, 0.0]], b_z=[0.0, 1.0])
        assert p.value([2.0], [3.0, -1.0]) == pytest.approx(6.0 - 1.0)
        Z = np.array([[3.0, -1.0], [0.5, 2.0]])
        np.testing.assert_allclose(p.value_batch([2.0], Z), [5.0, 3.0])

    def test_table_indexed(self):
        p = SmoothConvexPiece([0.0], 0.0,
                              a_table=[[1.0], [-1.0]], b_table=[0.0, 10.0])
        assert p.value([3.0], [0]) == pytest.approx(3.0)
        assert p.value([3.0], [1]) == pytest.approx(7.0)
        np.testing.assert_allclose(p.value_batch([3.0], np.array([[0.0], [1.0]])),
                                   [3.0, 7.0])

    def test_batch_matches_loop(self):
        rng = np.random.default_rng(0)
        p = SmoothConvexPiece(rng.normal(size=3), 0.7,
                              Q=np.eye(3) * 0.5,
                              a_z=rng.normal(size=(3, 2)),
                              b_z=rng.normal(size=2))
        x = rng.normal(size=3)
        Z = rng.normal(size=(11, 2))
        expect = [p.value(x, z) for z in Z]
        np.testing.assert_allclose(p.value_batch(x, Z), expect, rtol=1e-13)


class TestDcMax:
    def make_hinge(self):
        # z - max(2x, 1-2x) in one variable
        g = [SmoothConvexPiece([0.0], 0.0, b_z=[1.0])]
        h = [affine_piece([2.0], 0.0), affine_piece([-2.0], 1.0)]
        return DcMaxFunction(g, h)

    def test_value_and_active_sets(self):
        f = self.make_hinge()
        rec = eval_dc(f, [0.4], [0.3])
        assert rec.value == pytest.approx(0.3 - 0.8)
        assert rec.g_argmax == [0] and rec.h_argmax == [0]
        rec = eval_dc(f, [0.25], [0.0])
        assert rec.h_argmax == [0, 1]   # kink of the hinge
        rec = eval_dc(f, [0.25 + 1e-10], [0.0], eps=1e-6)
        assert rec.h_argmax == [0] and rec.h_eps == [0, 1]

    def test_batch(self):
        f = self.make_hinge()
        Z = np.linspace(-1, 1, 7)[:, None]
        vals = f.value_batch([0.1], Z)
        expect = [f.value([0.1], z) for z in Z]
        np.testing.assert_allclose(vals, expect, rtol=1e-14)

    def test_dir_deriv_at_kink(self):
        f = self.make_hinge()
        # at x = 1/4 the h max has slope set {2, -2}; dd(v) = -max(2v, -2v)
        assert dir_deriv_dc(f, [0.25], [0.0], [1.0]) == pytest.approx(-2.0)
        assert dir_deriv_dc(f, [0.25], [0.0], [-1.0]) == pytest.approx(-2.0)
        assert dir_deriv_dc(f, [0.4], [0.0], [1.0]) == pytest.approx(-2.0)
        assert dir_deriv_dc(f, [0.4], [0.0], [-1.0]) == pytest.approx(2.0)

    @given(st.floats(-2, 2), st.floats(-3, 3), st.floats(0.01, 10))
    @settings(max_examples=60, deadline=None)
    def test_dir_deriv_positively_homogeneous(self, x, v, alpha):
        f = self.make_hinge()
        d1 = dir_deriv_dc(f, [x], [0.2], [v])
        d2 = dir_deriv_dc(f, [x], [0.2], [alpha * v])
        assert d2 == pytest.approx(alpha * d1, rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("tau", [1e-4, 1e-6])
    def test_dir_deriv_richardson(self, tau):
        # curvature included so the extrapolation actually does something
        Q = np.array([[1.0, 0.2], [0.2, 2.0]])
        g = [SmoothConvexPiece([1.0, 0.0], 0.0, Q=Q), affine_piece([0.0, 1.0], 0.3)]
        h = [affine_piece([1.0, 1.0], 0.0)]
        f = DcMaxFunction(g, h)
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.normal(size=2)
            v = rng.normal(size=2)
            d0 = dir_deriv_dc(f, x, [0.0], v)

            def fd(t):
                return (f.value(x + t * v, [0.0]) - f.value(x, [0.0])) / t

            # tolerance: extrapolation residual plus the roundoff floor of
            # first-order differences at this tau
            rich = 2 * fd(tau / 2) - fd(tau)
            assert rich == pytest.approx(d0, abs=200 * tau ** 2 + 1e-8)


class TestCompose:
    def test_box_disjunction_identity(self):
        # event: t in [a1,b1] x ... or-combined per coordinate
        a1, b1, a2, b2 = -0.3, 0.7, 0.1, 1.2
        fb1 = DcMaxFunction([affine_piece([-1.0, 0.0], b1)])
        fa1 = DcMaxFunction([affine_piece([1.0, 0.0], -a1)])
        fb2 = DcMaxFunction([affine_piece([0.0, -1.0], b2)])
        fa2 = DcMaxFunction([affine_piece([0.0, 1.0], -a2)])
        tree = {"op": "or", "children": [
            {"op": "and", "children": [fb1, fa1]},
            {"op": "and", "children": [fb2, fa2]}]}
        composed = build_logical_event(tree)

        def direct(t):
            return max(min(b1 - t[0], t[0] - a1), min(b2 - t[1], t[1] - a2))

        def closed_form(t):
            p = max(-b1 + t[0], a1 - t[0], -b2 + t[1], a2 - t[1])
            q = max((-b1 + t[0]) + (-b2 + t[1]), (-b1 + t[0]) + (a2 - t[1]),
                    (a1 - t[0]) + (-b2 + t[1]), (a1 - t[0]) + (a2 - t[1]))
            return p - q

        rng = np.random.default_rng(42)
        for _ in range(100):
            t = rng.uniform(-2, 2, size=2)
            v = composed.value(t, [])
            assert v == pytest.approx(direct(t), abs=1e-12)
            assert v == pytest.approx(closed_form(t), abs=1e-12)

    def test_compose_general_outer(self):
        rng = np.random.default_rng(7)
        n, L = 2, 3
        inner = []
        for _ in range(L):
            g = [affine_piece(rng.normal(size=n), rng.normal()) for _ in range(2)]
            h = [affine_piece(rng.normal(size=n), rng.normal()) for _ in range(2)]
            inner.append(DcMaxFunction(g, h))
        A = rng.normal(size=(2, L))
        alph = rng.normal(size=2)
        B = rng.normal(size=(2, L))
        beta = rng.normal(size=2)
        comp = dc_compose(A, alph, B, beta, inner)

        def direct(x):
            y = np.array([f.value(x, []) for f in inner])
            return (A @ y + alph).max() - (B @ y + beta).max()

        for _ in range(100):
            x = rng.uniform(-3, 3, size=n)
            v = comp.value(x, [])
            ref = direct(x)
            assert v == pytest.approx(ref, rel=1e-10, abs=1e-10)

    def test_three_way_and(self):
        fs = [DcMaxFunction([coord(3, d)]) for d in range(3)]
        tree = {"op": "and", "children": fs}
        comp = build_logical_event(tree)
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.normal(size=3)
            assert comp.value(x, []) == pytest.approx(x.min(), abs=1e-12)

    def test_piece_cap(self):
        # twenty binary hinges blow past the cross-sum cap
        fs = [DcMaxFunction([coord(1, 0, float(i + 1)), coord(1, 0, -1.0, float(i))])
              for i in range(20)]
        with pytest.raises(ValueError, match="cap"):
            tree = {"op": "and", "children": fs}
            build_logical_event(tree)


class TestPolytope:
    def test_box(self):
        P = Polytope(lo=[-1.0, 0.0], hi=[1.0, 2.0])
        assert P.contains([0.0, 1.0])
        assert not P.contains([0.0, 3.0])
        lo, hi = P.bounding_box()
        np.testing.assert_allclose(lo, [-1, 0])
        np.testing.assert_allclose(hi, [1, 2])

    def test_rows_and_bounds(self):
        P = Polytope(A=[[1.0, 1.0]], b=[1.0], lo=[0.0, 0.0], hi=[1.0, 1.0])
        assert P.contains([0.5, 0.5])
        assert not P.contains([0.9, 0.9])
        G, h = P.as_inequalities()
        assert G.shape == (5, 2)
        x = np.array([0.5, 0.5])
        M = P.tangent_rows(x)
        assert M.shape == (1, 2)          # only the diagonal row is tight
        M = P.tangent_rows([0.0, 0.0])
        assert M.shape == (2, 2)

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="empty"):
            Polytope(A=[[1.0], [-1.0]], b=[-2.0, 1.0])

    def test_unbounded_raises(self):
        with pytest.raises(ValueError, match="unbounded"):
            Polytope(A=[[1.0, 0.0]], b=[1.0])

    def test_halfspace_box_intersection_ok(self):
        P = Polytope(A=[[-1.0, -1.0]], b=[-0.5], lo=[0, 0], hi=[1, 1])
        assert P.contains([0.5, 0.25])
        assert not P.contains([0.1, 0.1])


class TestRandomSource:
    def test_uniform(self):
        s = RandomSource("uniform", lo=[-1.0], hi=[1.0])
        rng = np.random.default_rng(0)
        z = s.draw(rng, 1000)
        assert z.shape == (1000, 1)
        assert -1 <= z.min() and z.max() <= 1

    def test_finite(self):
        s = RandomSource("finite", values=[[1.0], [-1.0]])
        np.testing.assert_allclose(s.probs, [0.5, 0.5])
        rng = np.random.default_rng(0)
        z = s.draw(rng, 500)
        assert set(np.unique(z)) <= {1.0, -1.0}

    def test_finite_bad_probs(self):
        with pytest.raises(ValueError):
            RandomSource("finite", values=[[1.0], [2.0]], probs=[0.7, 0.7])

    def test_external(self, tmp_path):
        f = tmp_path / "samples.txt"
        np.savetxt(f, np.arange(12.0).reshape(6, 2))
        s = RandomSource("external", path=str(f))
        np.testing.assert_allclose(s.slice(2, 4), [[4.0, 5.0], [6.0, 7.0]])
        with pytest.raises(ValueError, match="exhausted"):
            s.slice(0, 7)


class TestAccProblem:
    def make(self, objective=None, strict=False):
        dom = Polytope(lo=[-1.0], hi=[1.0])
        if objective is None:
            objective = affine_piece([1.0], 1.0)   # 1 + x >= 0 on the domain
        g = [SmoothConvexPiece([0.0], 0.0, b_z=[1.0])]
        h = [affine_piece([2.0], 0.0), affine_piece([-2.0], 1.0)]
        fn = DcMaxFunction(g, h)
        src = RandomSource("uniform", lo=[-1.0], hi=[1.0])
        return AccProblem(dom, objective, [fn], [[1.0]], [0.25], src,
                          strict=strict)

    def test_shapes(self):
        p = self.make()
        assert (p.n, p.K, p.L) == (1, 1, 1)
        np.testing.assert_allclose(p.E_pos, [[1.0]])
        np.testing.assert_allclose(p.E_neg, [[0.0]])

    def test_signed_split(self):
        dom = Polytope(lo=[-1.0], hi=[1.0])
        fn = DcMaxFunction([affine_piece([1.0], 0.0)])
        src = RandomSource("uniform", lo=[-1.0], hi=[1.0])
        p = AccProblem(dom, affine_piece([0.0], 1.0), [fn, fn],
                       [[1.5, -2.0]], [0.1], src)
        np.testing.assert_allclose(p.E_pos, [[1.5, 0.0]])
        np.testing.assert_allclose(p.E_neg, [[0.0, 2.0]])

    def test_negative_objective_warns(self):
        with pytest.warns(UserWarning, match="negative"):
            self.make(objective=affine_piece([1.0], 0.0))   # x < 0 possible

    def test_negative_objective_strict_raises(self):
        with pytest.raises(ValueError, match="negative"):
            self.make(objective=affine_piece([1.0], 0.0), strict=True)

    def test_dimension_mismatch(self):
        dom = Polytope(lo=[-1.0, -1.0], hi=[1.0, 1.0])
        fn = DcMaxFunction([affine_piece([1.0], 0.0)])
        src = RandomSource("uniform", lo=[-1.0], hi=[1.0])
        with pytest.raises(ValueError, match="dimension"):
            AccProblem(dom, affine_piece([0.0, 0.0], 1.0), [fn], [[1.0]],
                       [0.1], src)


def test_gradient_audit():
    f = DcMaxFunction([affine_piece([3.0], 0.0)], [affine_piece([-4.0], 0.0)])
    P = Polytope(lo=[-1.0], hi=[1.0])
    est = audit_gradient_bound(f, P, np.zeros((1, 1)), bound=None)
    assert est == pytest.approx(4.0)
    with pytest.raises(ValueError, match="bound"):
        audit_gradient_bound(f, P, np.zeros((1, 1)), bound=3.5)
