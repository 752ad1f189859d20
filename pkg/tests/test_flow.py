import numpy as np
import pytest
from scipy.linalg import expm

from dtireg.basis import band_limited_field
from dtireg.errors import LeftDomain, NoConvergence
from dtireg.fields import GridSpec, VelocityField
from dtireg.flow import (
    FlowResult,
    build_h_and_inverse,
    compose,
    det_identity_report,
    flow_map,
    integrate_trajectory,
    inverse_consistency_error,
    picard_trajectory,
)

from conftest import interior_field, unit_cube

A = np.array([[0.10, -0.30, 0.05], [0.25, -0.05, 0.10], [0.00, 0.15, 0.20]])


def linear_field(n=21, nt=2):
    g = GridSpec((n,) * 3, nt=nt)
    centre = 0.5 * (g.lower + g.upper)
    return interior_field(g, lambda x: (x - centre) @ A.T), centre


class TestIntegrateTrajectory:
    def test_zero_field(self):
        v = VelocityField.zeros(unit_cube(6))
        x = np.array([[0.3, 0.4, 0.5], [0.9, 0.1, 0.0]])
        tr = integrate_trajectory(v, 0.0, x, 1.0, 8)
        assert np.array_equal(tr.positions, np.broadcast_to(x, tr.positions.shape))

    def test_constant_interior(self):
        g = GridSpec((12, 12, 12), nt=3, tau=2.0)
        c = np.array([0.4, -0.3, 0.2])
        v = interior_field(g, lambda x: c)
        x = np.array([5.5, 5.0, 6.2])
        tr = integrate_trajectory(v, 0.5, x, 2.0, 10)
        expect = x + (tr.times[:, None] - 0.5) * c
        assert np.allclose(tr.positions, expect, atol=1e-13)

    def test_linear_matches_expm(self):
        v, centre = linear_field()
        x = centre + np.array([1.0, -2.0, 1.5])
        tr = integrate_trajectory(v, 0.0, x, 1.0, 64)
        expect = centre + expm(A) @ (x - centre)
        assert np.abs(tr.endpoint - expect).max() <= 1e-6

    def test_fourth_order(self):
        v, centre = linear_field()
        x = centre + np.array([2.0, 1.0, -1.0])
        expect = centre + expm(A) @ (x - centre)
        errs = [np.abs(integrate_trajectory(v, 0.0, x, 1.0, n).endpoint - expect).max()
                for n in (4, 8)]
        assert errs[0] / errs[1] > 12.0

    def test_backward_inverts_forward(self):
        v, centre = linear_field(nt=3)
        x = centre + np.array([1.0, 0.5, -2.0])
        fwd = integrate_trajectory(v, 0.0, x, 1.0, 32).endpoint
        back = integrate_trajectory(v, 1.0, fwd, 0.0, 32).endpoint
        assert np.abs(back - x).max() < 1e-7

    def test_left_domain(self):
        g = GridSpec((8, 8, 8))
        v = interior_field(g, lambda x: np.array([30.0, 0.0, 0.0]))
        with pytest.raises(LeftDomain):
            integrate_trajectory(v, 0.0, np.array([3.0, 3.0, 3.0]), 1.0, 1)


class TestPicard:
    def test_zero_one_iteration(self):
        v = VelocityField.zeros(unit_cube(6))
        tr = picard_trajectory(v, 0.0, np.array([0.2, 0.3, 0.4]), 1.0, tol=1e-10, max_iter=5)
        assert tr.iterations == 1
        assert np.array_equal(tr.endpoint, [0.2, 0.3, 0.4])

    def test_agrees_with_rk4(self):
        v = band_limited_field(unit_cube(16, nt=5), 3, 0.005, seed=1)
        rng = np.random.default_rng(0)
        x = rng.random((100, 3))
        t0, t1 = rng.random(100), rng.random(100)
        pc = picard_trajectory(v, t0, x, t1, tol=1e-7, max_iter=30)
        rk = integrate_trajectory(v, t0, x, t1, 64)
        assert np.abs(pc.endpoint - rk.endpoint).max() <= 10 * 1e-7

    def test_geometric_decrease(self, smooth_field):
        x = np.array([[0.4, 0.5, 0.6]])
        pc = picard_trajectory(smooth_field, 0.0, x, 1.0, tol=1e-12, max_iter=40)
        d = np.array([r[0] for r in pc.residuals])
        d = d[d > 1e-14]
        assert len(d) >= 3
        assert np.all(d[1:] / d[:-1] < 1.0)

    def test_no_convergence(self, smooth_field):
        with pytest.raises(NoConvergence):
            picard_trajectory(smooth_field, 0.0, np.array([0.5, 0.5, 0.5]), 1.0, tol=1e-14, max_iter=2)


class TestFlowMap:
    def test_zero_field_identity(self):
        g = unit_cube(7)
        fr = flow_map(VelocityField.zeros(g), 0.0, 1.0, 16)
        assert np.array_equal(fr.endpoints, g.nodes())
        assert np.array_equal(fr.jacobian, np.broadcast_to(np.eye(3), g.dims + (3, 3)))
        assert np.array_equal(fr.det_theta, np.ones(g.dims))
        assert np.array_equal(fr.exp_div, np.ones(g.dims))
        assert det_identity_report(fr) == (0.0, 0.0)

    def test_linear_jacobian(self):
        v, centre = linear_field(n=25)
        fr = flow_map(v, 0.0, 1.0, 64)
        # nodes whose whole trajectory stays where the field is exactly linear
        near = np.all(np.abs(v.grid.nodes() - centre) <= 4.0, axis=-1)
        assert np.abs(fr.jacobian[near] - expm(A)).max() <= 1e-6
        assert np.abs(fr.det_theta[near] - np.exp(np.trace(A))).max() <= 1e-6
        assert np.abs(fr.exp_div[near] - np.exp(np.trace(A))).max() <= 1e-9

    def test_det_identity_smooth(self, smooth_field):
        worst, mean = det_identity_report(flow_map(smooth_field, 0.0, 1.0, 64))
        assert worst <= 1e-3
        assert mean <= worst

    def test_divergence_free(self):
        g = unit_cube(33, nt=2)

        def curl_field(x):
            u, w, z = x[..., 0], x[..., 1], x[..., 2]
            s = np.sin(np.pi * u) ** 2
            t = np.sin(np.pi * w) ** 2
            ds = np.pi * np.sin(2 * np.pi * u)
            dt = np.pi * np.sin(2 * np.pi * w)
            g_ = np.sin(np.pi * z)
            # curl of (0, 0, s t g): (d_y, -d_x, 0)
            return 0.05 * np.stack([s * dt * g_, -ds * t * g_, 0 * u], axis=-1)

        v = interior_field(g, curl_field)
        fr = flow_map(v, 0.0, 1.0, 32)
        # boundary nodes see a one-sided half step into the zero extension
        assert np.abs(fr.det_theta - 1.0)[g.interior_mask()].max() <= 1e-3
        assert np.allclose(fr.det_theta, fr.exp_div, rtol=1e-9)

    def test_forward_backward(self, smooth_field):
        fwd = flow_map(smooth_field, 0.0, 1.0, 64)
        back = flow_map(smooth_field, 1.0, 0.0, 64)
        err = (compose(back, fwd) - smooth_field.grid.nodes()) / smooth_field.grid.spacing
        assert np.linalg.norm(err, axis=-1)[smooth_field.grid.interior_mask()].max() <= 1e-2

    def test_endpoint_only_matches(self, smooth_field):
        a = flow_map(smooth_field, 1.0, 0.0, 16)
        b = flow_map(smooth_field, 1.0, 0.0, 16, jacobian=False)
        assert b.jacobian is None
        assert np.allclose(a.endpoints, b.endpoints, atol=1e-14)

    def test_matches_trajectories(self, smooth_field):
        g = smooth_field.grid
        fr = flow_map(smooth_field, 0.2, 0.9, 16)
        tr = integrate_trajectory(smooth_field, 0.2, g.nodes(), 0.9, 16)
        assert np.allclose(fr.endpoints, tr.endpoint, atol=1e-13)


class TestBuildH:
    def test_zero(self):
        g = unit_cube(6)
        h, hi = build_h_and_inverse(VelocityField.zeros(g), 8)
        ident = FlowResult.identity(g)
        for fr in (h, hi):
            assert np.array_equal(fr.endpoints, ident.endpoints)
            assert np.array_equal(fr.jacobian, ident.jacobian)

    def test_translation(self):
        # h = eta(0; tau, .) runs the flow backwards, so it moves against v
        g = GridSpec((14, 14, 14), nt=3, tau=1.5)
        c = np.array([0.6, -0.4, 0.3])
        v = interior_field(g, lambda x: c)
        h, hi = build_h_and_inverse(v, 8)
        deep = g.interior_mask(margin=3)
        shift = c * g.tau
        assert np.allclose(h.displacement()[deep], -shift, atol=1e-12)
        assert np.allclose(hi.displacement()[deep], shift, atol=1e-12)

    def test_inverse_consistency(self):
        v = band_limited_field(GridSpec((16, 16, 16), nt=3), 3, 1.0, seed=5)
        h, hi = build_h_and_inverse(v, 32)
        err = inverse_consistency_error(h, hi)[v.grid.interior_mask()]
        assert err.max() <= 1e-2
