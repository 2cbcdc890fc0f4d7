import numpy as np
import pytest
from scipy.stats import ortho_group

from regtyler.errors import CapacityError
from regtyler.estimators import ShrinkageConfig
from regtyler.existence import existence_verdict, subset_budget, subspace_proportions
from regtyler.sampling import trial_rng

from oracles import brute_force_max_in_subspace


class TestSubspaceProportions:
    def test_duplicates(self):
        X = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        w = subspace_proportions(X)
        assert w[1].count == 2 and w[1].proportion == 0.5
        assert w[1].witness == (0,)

    def test_general_position(self, rng):
        w = subspace_proportions(rng.standard_normal((3, 3)))
        assert w[1].proportion == pytest.approx(1 / 3)
        assert w[2].proportion == pytest.approx(2 / 3)

    def test_planted(self):
        rng = trial_rng(41)
        basis = np.linalg.qr(rng.standard_normal((4, 2)))[0]
        inside = rng.standard_normal((5, 2)) @ basis.T
        X = np.vstack([inside, rng.standard_normal((3, 4))])
        X = X[rng.permutation(8)]
        w = subspace_proportions(X)
        assert w[2].count == 5
        # independent count against the planted span
        assert brute_force_max_in_subspace(X, basis) == 5
        wit = X[list(w[2].witness)].T
        assert brute_force_max_in_subspace(X, wit) == 5

    def test_bounds(self, rng):
        X = rng.standard_normal((7, 4))
        for d, w in subspace_proportions(X).items():
            assert 1 / 7 <= w.proportion <= 1.0

    def test_capacity(self, rng):
        assert subset_budget(40, 10) > 10**6
        with pytest.raises(CapacityError):
            subspace_proportions(rng.standard_normal((40, 10)))
        with pytest.raises(CapacityError):
            subspace_proportions(rng.standard_normal((6, 4)), cap=5)

    def test_rotation_and_scale_invariance(self):
        rng = trial_rng(5)
        basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        X = np.vstack([rng.standard_normal((4, 2)) @ basis.T, rng.standard_normal((4, 5))])
        base = {d: w.count for d, w in subspace_proportions(X).items()}
        Q = ortho_group.rvs(5, random_state=3)
        c = rng.uniform(0.01, 100, size=(8, 1)) * rng.choice([-1, 1], size=(8, 1))
        for Y in (X @ Q.T, X * c):
            assert {d: w.count for d, w in subspace_proportions(Y).items()} == base


class TestVerdict:
    def test_alpha_floor(self, rng):
        r = existence_verdict(rng.standard_normal((8, 10)), ShrinkageConfig.kl(0.26))
        assert r.alpha_floor == pytest.approx(0.25)
        assert r.sufficient_ok is True and r.simplified_ok is True
        assert r.necessary_ok is True

    def test_below_floor(self, rng):
        r = existence_verdict(rng.standard_normal((8, 10)), ShrinkageConfig.wiesel(0.24))
        assert r.sufficient_ok is False and r.simplified_ok is False
        assert not r.indeterminate

    def test_tyler_condition(self, rng):
        r = existence_verdict(rng.standard_normal((12, 10)), ShrinkageConfig.tyler())
        assert r.sufficient_ok is True
        assert r.necessary_ok is None
        assert all(r.per_dim_worst[d].proportion < d / 10 for d in range(1, 10))

    def test_boundary_indeterminate(self):
        # K=2, N=2 orthogonal samples, alpha0=0: P(span e1) = 1/2 = threshold
        r = existence_verdict(np.eye(2), ShrinkageConfig.tyler())
        assert r.boundary_dims == (1,)
        assert r.indeterminate and r.sufficient_ok is False

    def test_capacity_report(self, rng):
        r = existence_verdict(rng.standard_normal((40, 10)), ShrinkageConfig.kl(0.5), on_capacity="report")
        assert r.sufficient_ok is None
        assert "sufficient_ok=unknown" in r.summary_lines()
        with pytest.raises(CapacityError):
            existence_verdict(rng.standard_normal((40, 10)), ShrinkageConfig.kl(0.5))

    def test_summary_lines(self, rng):
        lines = existence_verdict(rng.standard_normal((8, 10)), ShrinkageConfig.kl(0.26)).summary_lines()
        assert "sufficient_ok=true" in lines and "alpha_floor=0.25" in lines

    def test_sufficient_not_implied_by_simplified(self):
        # N=6 > K/(1+a) holds but 4 samples share a line in K=3
        X = np.array([[1.0, 0, 0]] * 4 + [[0, 1.0, 0], [0, 0, 1.0]])
        r = existence_verdict(X, ShrinkageConfig.kl(0.5))
        assert r.simplified_ok is True and r.sufficient_ok is False
