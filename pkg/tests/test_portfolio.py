import io
import math

import numpy as np
import pytest

from regtyler.errors import DefinitenessError, DomainError, OrderingError, PriceParseError
from regtyler.portfolio import (
    BacktestConfig,
    ReturnPanel,
    fixture_manifest,
    fixture_path,
    load_prices,
    make_synthetic_prices,
    min_variance_weights,
    rebalance_points,
    rolling_backtest,
)
from regtyler.sampling import EllipticalSpec, draw_samples
from regtyler.spd import random_spd
from regtyler.tuning import RhoGrid

from oracles import kkt_min_variance

COARSE = RhoGrid((0.2, 0.4, 0.6, 0.8, 1.0))


def csv_text(rows):
    return io.StringIO("\n".join(rows) + "\n")


class TestLoader:
    def test_flat_row_discarded(self):
        p = load_prices(csv_text(["date,A,B", "2020-01-01,100,100", "2020-01-02,100,100"]))
        assert p.length == 0 and p.discarded == 1 and p.assets == ("A", "B")

    def test_log_return(self):
        p = load_prices(csv_text(["date,A", "2020-01-01,100", "2020-01-02,110"]))
        assert p.returns[0, 0] == pytest.approx(0.0953101798, abs=1e-9)
        assert abs(p.returns[0, 0] - math.log(1.1)) < 1e-15

    def test_fixture(self):
        p = load_prices(fixture_path())
        m = fixture_manifest()
        assert p.dim == 45 and p.discarded == m["discarded"] == 10
        assert p.length == m["return_rows_kept"] == 709

    def test_fixture_regenerates(self):
        dates, assets, prices, planted = make_synthetic_prices()
        assert planted == fixture_manifest()["planted_return_rows"]
        assert len(dates) == 720 and len(assets) == 45

    def test_missing_value(self):
        with pytest.raises(PriceParseError) as exc:
            load_prices(csv_text(["date,A,B", "2020-01-01,100,", "2020-01-02,1,2"]))
        assert exc.value.row == 2 and exc.value.column == "B"

    @pytest.mark.parametrize("row", ["2020-01-02,abc", "2020-01-02,-3", "2020-13-02,4", "2020-01-02"])
    def test_bad_cells(self, row):
        with pytest.raises(PriceParseError):
            load_prices(csv_text(["date,A", "2020-01-01,100", row]))

    def test_bad_header(self):
        with pytest.raises(PriceParseError):
            load_prices(csv_text(["time,A", "2020-01-01,100", "2020-01-02,101"]))

    def test_ordering(self):
        with pytest.raises(OrderingError):
            load_prices(csv_text(["date,A", "2020-01-02,100", "2020-01-01,101"]))
        with pytest.raises(OrderingError):
            load_prices(csv_text(["date,A", "2020-01-02,100", "2020-01-02,101"]))


class TestWeights:
    def test_examples(self):
        assert np.allclose(min_variance_weights(np.eye(5)), 0.2, atol=1e-15)
        assert np.allclose(min_variance_weights(np.diag([1.0, 4.0])), [0.8, 0.2], atol=1e-15)

    def test_matches_kkt_oracle(self, rng):
        for _ in range(10):
            S = random_spd(6, rng).entries
            assert np.max(np.abs(min_variance_weights(S) - kkt_min_variance(S))) < 1e-8

    def test_sum_and_scale_invariance(self, rng):
        for _ in range(10):
            S = random_spd(7, rng).entries
            w = min_variance_weights(S)
            assert abs(w.sum() - 1.0) <= 1e-12
            for c in (1e-3, 2.0, 1e4):
                assert np.max(np.abs(min_variance_weights(c * S) - w)) <= 1e-12

    def test_non_pd(self):
        with pytest.raises(DefinitenessError):
            min_variance_weights(np.ones((2, 2)))


def small_panel(seed=3, rows=90, k=4, scatter=None):
    scatter = np.eye(k) if scatter is None else scatter
    R = draw_samples(EllipticalSpec("student_t", scatter, 4.0), rows, seed).rows * 0.01
    return ReturnPanel(tuple(range(rows)), tuple(f"A{j}" for j in range(k)), R)


CONFIG = BacktestConfig(n_train=20, n_val=10, n_test=10, estimators=("sample_cov", "tyler", "wiesel", "kl"),
                        grid=COARSE)


class TestBacktest:
    def test_rebalance_points(self):
        assert rebalance_points(90, CONFIG) == [30, 40, 50, 60, 70, 80]

    def test_weights_sum_to_one(self):
        res = rolling_backtest(small_panel(), CONFIG)
        for name, hist in res.weights.items():
            for _, w in hist:
                assert abs(w.sum() - 1.0) <= 1e-12
        assert {r.estimator for r in res.rows} == set(CONFIG.estimators) | {"equal_weight"}
        assert all(r.rebalances == 6 for r in res.rows)

    def test_constant_panel(self):
        R = np.tile([0.01, -0.02, 0.03, 0.005], (70, 1))
        panel = ReturnPanel(tuple(range(70)), ("a", "b", "c", "d"), R)
        with pytest.warns(RuntimeWarning):
            res = rolling_backtest(panel, CONFIG)
        for r in res.rows:
            assert r.realized_variance == pytest.approx(0.0, abs=1e-30)

    def test_min_variance_beats_equal_weight(self):
        k = 5
        S0 = np.diag([1.0, 9.0, 25.0, 49.0, 81.0])
        assert 1 / np.sum(1 / np.diag(S0)) < np.mean(np.diag(S0)) / k
        R = draw_samples(EllipticalSpec("gaussian", S0), 200, 8).rows
        panel = ReturnPanel(tuple(range(200)), tuple("abcde"), R)
        res = rolling_backtest(panel, BacktestConfig(60, 10, 10, ("sample_cov", "kl"), grid=COARSE))
        eq = res.get("equal_weight").realized_variance
        assert res.get("sample_cov").realized_variance < eq
        assert res.get("kl").realized_variance < eq

    def test_deterministic_on_fixture(self):
        full = load_prices(fixture_path())
        panel = ReturnPanel(full.dates[:80], full.assets[:6], full.returns[:80, :6])
        a = rolling_backtest(panel, CONFIG).to_csv()
        assert a == rolling_backtest(panel, CONFIG).to_csv()
        assert a == rolling_backtest(panel, CONFIG, workers=2).to_csv()

    def test_no_look_ahead(self):
        panel = small_panel(seed=5)
        base = rolling_backtest(panel, CONFIG)
        rng = np.random.default_rng(0)
        for t in (40, 60):
            R = panel.returns.copy()
            R[t:] = rng.standard_normal(R[t:].shape) * 0.5
            mutated = rolling_backtest(ReturnPanel(panel.dates, panel.assets, R), CONFIG)
            for name in CONFIG.estimators:
                for (ta, wa), (tb, wb) in zip(base.weights[name], mutated.weights[name]):
                    if ta <= t:
                        assert ta == tb and np.array_equal(wa, wb)

    def test_insufficient_data(self):
        with pytest.raises(DomainError):
            rolling_backtest(small_panel(rows=35), CONFIG)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            BacktestConfig(n_train=0)
        with pytest.raises(ValueError):
            BacktestConfig(n_train=10, estimators=("nope",))
