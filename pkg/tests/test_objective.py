import numpy as np
import pytest

from dtireg.basis import SineBasis
from dtireg.errors import BadConfig
from dtireg.fields import GridSpec, VelocityField, f_norm_sq
from dtireg.flow import build_h_and_inverse, flow_map
from dtireg.objective import (
    ObjectiveConfig,
    Problem,
    fd_gradient,
    grad_check,
    minimize,
    objective,
    regularizer_gram,
)
from dtireg.phantom import make_phantom
from dtireg.reorient import fs_transform, ssd

GRID = GridSpec((10, 10, 10))


@pytest.fixture(scope="module")
def ball():
    return make_phantom(GRID, "two-compartment")


def shifted_target(T, coeff, modes=1, nsteps=32):
    b = SineBasis(T.grid, modes)
    c = b.zeros()
    c[:, 0, 0, 0, 0] = coeff
    v = b.velocity(c)
    h, hi = build_h_and_inverse(v, nsteps)
    return fs_transform(T, h, hi).to_image(), v, h


class TestConfig:
    def test_defaults(self):
        cfg = ObjectiveConfig()
        assert cfg.reg_weight == 1.0
        assert cfg.grad_eps == 1e-4 and cfg.armijo_c1 == 1e-4 and cfg.backtrack == 0.5
        assert cfg.stop_tol is None

    def test_unknown_key(self):
        with pytest.raises(BadConfig, match="nstep"):
            ObjectiveConfig.from_dict({"nstep": 3})

    @pytest.mark.parametrize("bad", [{"nsteps_flow": 0}, {"armijo_c1": 1.5}, {"backtrack": 0.0},
                                     {"grad_eps": -1.0}, {"nt": 1}, {"max_iter": 2.5}])
    def test_invalid_values(self, bad):
        with pytest.raises(BadConfig):
            ObjectiveConfig.from_dict(bad)

    def test_modes_limit(self, ball):
        with pytest.raises(BadConfig):
            Problem(ball, ball, ObjectiveConfig(modes=6))

    def test_roundtrip(self):
        cfg = ObjectiveConfig(modes=2, max_iter=3)
        assert ObjectiveConfig.from_dict(cfg.to_dict()) == cfg


class TestObjective:
    def test_zero_same(self, ball):
        r = objective(VelocityField.zeros(GRID), ball, ball)
        assert r.total == 0.0 and r.reg == 0.0

    def test_zero_is_ssd(self, ball):
        D = make_phantom(GRID, "fiber-bundle", direction=(0, 1, 1))
        r = objective(VelocityField.zeros(GRID), ball, D)
        assert r.reg == 0.0
        assert r.total == ssd(ball, D)

    def test_recomposition(self, ball):
        D, v, _ = shifted_target(ball, 1.5)
        cfg = ObjectiveConfig(nsteps_flow=6)
        b = SineBasis(GRID, 2)
        w = b.velocity(np.random.default_rng(0).normal(size=b.coeff_shape) * 0.3)
        r = objective(w, ball, D, cfg)
        h, hi = build_h_and_inverse(w, 6)
        reg = f_norm_sq(w)
        data = ssd(fs_transform(ball, h, hi), D)
        assert r.total == r.reg + r.data
        assert r.total == pytest.approx(reg + data, rel=1e-12)

    def test_fast_path_matches(self, ball):
        D, _, _ = shifted_target(ball, 1.5)
        cfg = ObjectiveConfig(modes=2, nsteps_flow=5)
        prob = Problem(ball, D, cfg)
        c = np.random.default_rng(1).normal(size=prob.basis.coeff_shape) * 0.3
        fast = prob.evaluate(c)
        slow = objective(prob.velocity(c), ball, D, cfg)
        assert fast["reg"] == pytest.approx(slow.reg, rel=1e-12)
        assert fast["data"] == pytest.approx(slow.data, rel=1e-12)

    def test_gram(self):
        g = GridSpec((9, 8, 10), spacing=(1.0, 0.5, 2.0), nt=3)
        b = SineBasis(g, 3)
        gram = regularizer_gram(b)
        c = np.random.default_rng(2).normal(size=b.coeff_shape)
        assert c.ravel() @ gram @ c.ravel() == pytest.approx(f_norm_sq(b.velocity(c)), rel=1e-12)


class TestGradient:
    def test_quadratic_regularizer(self):
        iso = make_phantom(GRID, "uniform", axial=0.8, radial=0.8)
        cfg = ObjectiveConfig(modes=2)
        prob = Problem(iso, iso, cfg)
        c = np.random.default_rng(3).normal(size=prob.basis.coeff_shape) * 0.2
        assert prob.evaluate(c)["data"] == pytest.approx(0.0, abs=1e-20)
        g = fd_gradient(prob, c, cfg.grad_eps).ravel()
        exact = 2.0 * prob.gram @ c.ravel()
        assert np.abs(g - exact).max() <= 1e-6 * np.abs(exact).max()

    def test_zero_at_minimum(self, ball):
        cfg = ObjectiveConfig(modes=1)
        prob = Problem(ball, ball, cfg)
        g = fd_gradient(prob, prob.basis.zeros(), cfg.grad_eps)
        assert np.abs(g).max() <= 1e-6

    def test_richardson_ratio(self, ball):
        D, _, _ = shifted_target(ball, 1.5)
        cfg = ObjectiveConfig(modes=1)
        prob = Problem(ball, D, cfg)
        c = prob.basis.zeros()
        c[:, 0, 0, 0, 0] = 0.4
        gs = [fd_gradient(prob, c, e) for e in (0.2, 0.1, 0.05)]
        d1 = np.abs(gs[0] - gs[1]).max()
        d2 = np.abs(gs[1] - gs[2]).max()
        assert 3.0 <= d1 / d2 <= 5.0

    def test_grad_check(self, ball):
        D, _, _ = shifted_target(ball, 1.5)
        cfg = ObjectiveConfig(modes=1)
        assert grad_check(None, ball, D, cfg) <= 1e-4
        v = SineBasis(GRID, 1).velocity(np.full((2, 3, 1, 1, 1), 0.2))
        assert grad_check(v, ball, D, cfg) <= 1e-4


class TestMinimize:
    def test_identical_images(self, ball):
        v, rep = minimize(ball, ball, ObjectiveConfig(modes=1))
        assert rep.total == 0.0 and rep.status == "converged" and rep.iterations == 0
        assert not v.samples.any()

    def test_recovers_translation(self, ball):
        D, v_true, h_true = shifted_target(ball, 1.5)
        cfg = ObjectiveConfig(modes=1, max_iter=15)
        v, rep = minimize(ball, D, cfg)
        totals = [t["total"] for t in rep.trace]
        assert all(b < a for a, b in zip(totals, totals[1:]))
        assert rep.total <= 0.1 * totals[0]
        assert rep.total == rep.reg + rep.data
        assert all(t["min_det"] > 0 for t in rep.trace)
        h = flow_map(v, GRID.tau, 0.0, 32, jacobian=False)
        err = np.linalg.norm(h.endpoints - h_true.endpoints, axis=-1)
        assert err.mean() <= 0.5
        assert np.isfinite([rep.lipschitz, rep.holder]).all()

    def test_budget_status(self, ball):
        D, _, _ = shifted_target(ball, 1.5)
        _, rep = minimize(ball, D, ObjectiveConfig(modes=1, max_iter=1))
        assert rep.status == "budget" and rep.iterations == 1
