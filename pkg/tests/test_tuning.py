import numpy as np
import pytest

from regtyler.errors import DomainError, NoFeasiblePointError
from regtyler.estimators import SolverOptions, Status
from regtyler.portfolio import min_variance_weights
from regtyler.sampling import EllipticalSpec, ar1_scatter, draw_samples, trial_rng
from regtyler.tuning import (
    RhoGrid,
    fit_at_rho,
    is_feasible,
    oracle_grid_search,
    shrinkage_config,
    validation_select,
)

COARSE = RhoGrid(tuple(np.round(np.arange(1, 21) / 20, 2)))


class TestGrid:
    def test_default(self):
        g = RhoGrid()
        assert len(g) == 100 and g.values[0] == 0.01 and g.values[-1] == 1.0

    def test_uniform_and_conversions(self):
        assert RhoGrid.uniform(0.25).values == (0.25, 0.5, 0.75, 1.0)
        assert RhoGrid.to_alpha(0.8) == pytest.approx(0.25)
        assert RhoGrid.to_rho(0.25) == pytest.approx(0.8)

    @pytest.mark.parametrize("values", [(0.0, 0.5), (0.5, 1.2), (0.5, 0.4), ()])
    def test_validation(self, values):
        with pytest.raises(ValueError):
            RhoGrid(values)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            shrinkage_config("ledoit", 0.5)


class TestOracleSearch:
    def test_infeasible_above_boundary(self):
        X = trial_rng(1, 0).standard_normal((8, 10))
        g = oracle_grid_search("kl", X, None, np.eye(10), RhoGrid.uniform(0.05))
        for rho, status in zip(g.grid.values, g.statuses):
            assert (status == "infeasible") == (rho >= 0.8)
            assert is_feasible(8, 10, rho) == (rho < 0.8)
        assert g.rho_star < 0.8

    def test_exact_target_prefers_heavy_shrinkage(self):
        S0 = ar1_scatter(6, 0.7)
        X = draw_samples(EllipticalSpec("gaussian", S0), 4, 3)
        for kind in ("wiesel", "kl", "chen"):
            g = oracle_grid_search(kind, X, S0, S0, COARSE)
            assert g.rho_star == COARSE.values[0]
            assert g.nmse_star < 1e-3

    def test_deterministic(self):
        X = draw_samples(EllipticalSpec("student_t", ar1_scatter(5, 0.5), 3.0), 12, 2)
        a = oracle_grid_search("wiesel", X, None, ar1_scatter(5, 0.5), COARSE)
        b = oracle_grid_search("wiesel", X, None, ar1_scatter(5, 0.5), COARSE)
        assert np.array_equal(a.curve, b.curve) and a.rho_star == b.rho_star

    def test_scale_invariance(self):
        X = draw_samples(EllipticalSpec("student_t", ar1_scatter(5, 0.5), 3.0), 12, 2).rows
        a = oracle_grid_search("kl", X, None, ar1_scatter(5, 0.5), COARSE)
        b = oracle_grid_search("kl", 37.0 * X, None, ar1_scatter(5, 0.5), COARSE)
        assert a.rho_star == b.rho_star
        assert np.allclose(a.curve, b.curve, rtol=1e-8)

    def test_no_feasible_point(self):
        X = trial_rng(1, 0).standard_normal((3, 10))
        with pytest.raises(NoFeasiblePointError):
            oracle_grid_search("kl", X, None, np.eye(10), RhoGrid((0.5, 1.0)))

    def test_star_is_feasible(self):
        X = trial_rng(2, 0).standard_normal((6, 8))
        g = oracle_grid_search("wiesel", X, None, np.eye(8), COARSE)
        assert is_feasible(6, 8, g.rho_star)


class TestValidationSelect:
    def setup_method(self):
        self.R = draw_samples(EllipticalSpec("gaussian", np.diag(np.arange(1.0, 6.0))), 60, 5).rows

    def test_single_point(self):
        g = validation_select(self.R, range(0, 40), range(40, 60), RhoGrid((0.3,)), "kl")
        assert g.rho_star == 0.3

    def test_monotone_instance(self):
        # in-sample variance with a far-off target: less shrinkage always helps
        R = draw_samples(EllipticalSpec("gaussian", np.diag([1.0, 4.0, 16.0, 64.0])), 400, 6).rows
        T = np.diag([64.0, 16.0, 4.0, 1.0])
        g = validation_select(R, range(400), range(400), COARSE, "kl", T)
        assert np.all(np.diff(g.curve) < 0)
        assert g.rho_star == 1.0

    def test_matches_exhaustive_oracle(self):
        opts = SolverOptions(tol=1e-10)
        g = validation_select(self.R, range(60), range(60), COARSE, "wiesel", None, opts)
        scores = []
        for rho in COARSE:
            res = fit_at_rho("wiesel", self.R, rho, None, opts)
            assert res.status is Status.CONVERGED
            scores.append(np.var(self.R @ min_variance_weights(res.sigma)))
        assert g.rho_star == COARSE.values[int(np.argmin(scores))]
        assert np.allclose(g.curve, scores, rtol=1e-6)

    def test_errors(self):
        with pytest.raises(DomainError):
            validation_select(self.R, range(0, 40), range(40, 40), COARSE)
        with pytest.raises(DomainError):
            validation_select(self.R, range(0, 40), range(30, 50), COARSE)
        R = self.R.copy()
        R[40:] = 1.0
        with pytest.raises(DomainError):
            validation_select(R, range(0, 40), range(40, 60), COARSE)

    def test_custom_objective(self):
        calls = []

        def obj(w, V):
            calls.append(w.sum())
            return -float(np.var(V @ w))

        validation_select(self.R, range(0, 40), range(40, 60), COARSE, "kl", objective=obj)
        assert len(calls) == len(COARSE) and np.allclose(calls, 1.0)
