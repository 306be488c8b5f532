"""
Tests for fixed-effect absorption, weighted least squares and the two-way clustered covariance
"""
import numpy as np
import pytest

from core.exceptions import ClusterError, ConvergenceError, RankDeficiencyError
from models.design import ClusterAssignment, DesignMatrix, FixedEffectGroups, WeightVector
from models.schemas import KernelSpec
from services.fe_wls import absorb, twoway_cluster_vcov, wls_fit
from services.kernel import distance_weights


def _dataset(seed: int, n: int = 200):
    rng = np.random.default_rng(seed)
    first = rng.permutation(np.arange(n) % 10)
    second = rng.integers(0, 7, size=n)
    x = rng.normal(size=(n, 2))
    y = x @ np.array([0.7, -1.3]) + 0.5 * first - 0.2 * second + rng.normal(scale=0.3, size=n)
    weights = rng.uniform(0.5, 2.0, size=n)
    return x, y, weights, first, second


def _gaussian_dataset(seed: int):
    """Two crossed dimensions (15 x 8 groups), 100-500 rows, Gaussian kernel weights"""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(100, 501))
    first = rng.permutation(np.arange(n) % 15)
    second = rng.integers(0, 8, size=n)
    x = rng.normal(size=(n, 2))
    y = x @ np.array([0.7, -1.3]) + 0.5 * first - 0.2 * second + rng.normal(scale=0.3, size=n)
    weights = distance_weights(rng.uniform(-0.1, 0.1, size=n), KernelSpec(bandwidth=0.05))
    return x, y, weights, first, second


def _dense_coefficients(x, y, w, first, second):
    """Slopes of a WLS regression on x plus explicit dummies for both dimensions"""
    dummies = np.column_stack([np.eye(first.max() + 1)[first], np.eye(second.max() + 1)[second][:, 1:]])
    dense = np.column_stack([x, dummies])
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(dense * sw[:, None], y * sw, rcond=None)
    return beta[:x.shape[1]]


def _brute_vcov(x, e, w, codes_a, codes_b, bread=None):
    if bread is None:
        bread = np.linalg.inv(x.T @ (x * w[:, None]))
    scores = x * (w * e)[:, None]

    def meat(codes):
        total = np.zeros((x.shape[1], x.shape[1]))
        for g in np.unique(codes):
            s = scores[codes == g].sum(axis=0)
            total += np.outer(s, s)
        return total

    pairs = codes_a * (codes_b.max() + 1) + codes_b
    return bread @ (meat(codes_a) + meat(codes_b) - meat(pairs)) @ bread


class TestAbsorb:
    """Test cases for absorb"""

    def test_single_dimension_demeans(self):
        """Test that one dimension is removed exactly by weighted group demeaning"""
        codes = np.array([0, 0, 1, 1, 1])
        w = np.array([1.0, 3.0, 1.0, 1.0, 2.0])
        x = np.array([1.0, 5.0, 2.0, 4.0, 6.0])
        design = DesignMatrix(("x", "const"), np.column_stack([x, np.ones(5)]))

        result = absorb(design, x, FixedEffectGroups.from_keys({"g": codes}), WeightVector(w))

        expected = x - np.array([4.0, 4.0, 4.5, 4.5, 4.5])
        np.testing.assert_allclose(result.design.column("x"), expected)
        np.testing.assert_allclose(result.outcome, expected)
        assert result.dropped == ("const",)
        assert result.sweeps == 1

    def test_no_groups_is_identity(self):
        """Test that an empty FixedEffectGroups leaves the data untouched"""
        x, y, w, _, _ = _dataset(1)
        design = DesignMatrix(("a", "b"), x)

        result = absorb(design, y, FixedEffectGroups(), WeightVector(w))

        np.testing.assert_array_equal(result.design.values, x)
        np.testing.assert_array_equal(result.outcome, y)
        assert result.sweeps == 0

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_dense_dummies(self, seed):
        """Test absorption plus WLS against a regression on explicit dummies at the default settings"""
        x, y, w, first, second = _gaussian_dataset(seed)
        groups = FixedEffectGroups.from_keys({"first": first, "second": second})

        absorbed = absorb(DesignMatrix(("a", "b"), x), y, groups, w)
        fit = wls_fit(absorbed.design, absorbed.outcome, w)

        np.testing.assert_allclose(fit.coefficients, _dense_coefficients(x, y, w.weights, first, second),
                                   rtol=0, atol=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_accelerated_matches_plain_by_default(self, seed):
        """Test that the accelerated and plain sweeps give the same coefficients at the default tolerance"""
        x, y, w, first, second = _gaussian_dataset(100 + seed)
        groups = FixedEffectGroups.from_keys({"first": first, "second": second})
        design = DesignMatrix(("a", "b"), x)

        fast = absorb(design, y, groups, w, acceleration="gk")
        plain = absorb(design, y, groups, w, acceleration="none")

        fast_fit = wls_fit(fast.design, fast.outcome, w)
        plain_fit = wls_fit(plain.design, plain.outcome, w)
        np.testing.assert_allclose(fast_fit.coefficients, plain_fit.coefficients, rtol=0, atol=1e-8)

    def test_converged_input_settles(self):
        """Test that absorbing an already absorbed matrix stops at once instead of extrapolating rounding noise"""
        x, y, w, first, second = _gaussian_dataset(200)
        groups = FixedEffectGroups.from_keys({"first": first, "second": second})
        once = absorb(DesignMatrix(("a", "b"), x), y, groups, w)

        again = absorb(once.design, once.outcome, groups, w, acceleration="gk")

        assert again.sweeps <= 5
        np.testing.assert_allclose(again.design.values, once.design.values, atol=1e-8)
        np.testing.assert_allclose(again.outcome, once.outcome, atol=1e-8)

    def test_non_convergence(self):
        """Test that the sweep budget is enforced"""
        x, y, w, first, second = _dataset(4)
        groups = FixedEffectGroups.from_keys({"first": first, "second": second})

        with pytest.raises(ConvergenceError) as excinfo:
            absorb(DesignMatrix(("a", "b"), x), y, groups, WeightVector(w), tol=1e-14, max_sweeps=1)

        assert excinfo.value.sweeps == 1

    def test_unknown_acceleration(self):
        """Test that an unknown acceleration name is rejected"""
        x, y, w, first, _ = _dataset(5)

        with pytest.raises(ValueError):
            absorb(DesignMatrix(("a", "b"), x), y, FixedEffectGroups.from_keys({"g": first}),
                   WeightVector(w), acceleration="aitken")

    def test_acceleration_agrees(self):
        """Test that the accelerated and plain sweeps reach the same projection"""
        x, y, w, first, second = _dataset(6)
        groups = FixedEffectGroups.from_keys({"first": first, "second": second})
        design = DesignMatrix(("a", "b"), x)

        fast = absorb(design, y, groups, WeightVector(w), tol=1e-12, acceleration="gk")
        plain = absorb(design, y, groups, WeightVector(w), tol=1e-12, acceleration="none")

        np.testing.assert_allclose(fast.design.values, plain.design.values, atol=1e-8)


class TestWlsFit:
    """Test cases for wls_fit"""

    def test_exact_fit(self):
        """Test that an exactly linear outcome is recovered with zero residuals"""
        rng = np.random.default_rng(10)
        x = rng.normal(size=(30, 3))
        y = x @ np.array([1.0, -2.0, 0.5])

        fit = wls_fit(DesignMatrix(("a", "b", "c"), x), y, WeightVector(rng.uniform(0.1, 1.0, 30)))

        np.testing.assert_allclose(fit.coefficients, [1.0, -2.0, 0.5], atol=1e-12)
        np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-12)

    def test_weighted_mean(self):
        """Test that an intercept-only fit returns the weighted mean"""
        y = np.array([1.0, 2.0, 6.0])
        w = np.array([1.0, 1.0, 2.0])

        fit = wls_fit(DesignMatrix(("intercept",), np.ones(3)), y, WeightVector(w))

        assert fit.as_dict()["intercept"] == pytest.approx(15.0 / 4.0)

    def test_normal_equations(self):
        """Test that the solution satisfies X'WX b = X'Wy"""
        rng = np.random.default_rng(11)
        x = rng.normal(size=(50, 3))
        y = rng.normal(size=50)
        w = rng.uniform(0.2, 3.0, size=50)

        fit = wls_fit(DesignMatrix(("a", "b", "c"), x), y, WeightVector(w))

        np.testing.assert_allclose(x.T @ (w * (x @ fit.coefficients)), x.T @ (w * y), atol=1e-10)
        np.testing.assert_allclose(fit.bread, np.linalg.inv(x.T @ (x * w[:, None])), rtol=1e-10)

    def test_residuals_orthogonal(self):
        """Test that weighted residuals are orthogonal to the absorbed design"""
        x, y, w, first, second = _dataset(12)
        groups = FixedEffectGroups.from_keys({"first": first, "second": second})
        absorbed = absorb(DesignMatrix(("a", "b"), x), y, groups, WeightVector(w), tol=1e-13)

        fit = wls_fit(absorbed.design, absorbed.outcome, WeightVector(w))

        np.testing.assert_allclose(absorbed.design.values.T @ (w * fit.residuals), 0.0, atol=1e-9)

    def test_duplicated_rows(self):
        """Test that stacking the sample twice leaves the estimates unchanged"""
        rng = np.random.default_rng(13)
        x = rng.normal(size=(40, 2))
        y = rng.normal(size=40)
        w = rng.uniform(0.5, 1.5, size=40)

        once = wls_fit(DesignMatrix(("a", "b"), x), y, WeightVector(w))
        twice = wls_fit(DesignMatrix(("a", "b"), np.vstack([x, x])), np.concatenate([y, y]),
                        WeightVector(np.concatenate([w, w])))

        np.testing.assert_allclose(once.coefficients, twice.coefficients, rtol=1e-10)

    def test_collinear_columns_dropped_in_order(self):
        """Test that the later of two collinear columns is dropped"""
        rng = np.random.default_rng(14)
        a = rng.normal(size=25)
        b = rng.normal(size=25)
        design = DesignMatrix(("b", "a", "twice_a"), np.column_stack([b, a, 2 * a]))

        fit = wls_fit(design, a + b, WeightVector.unit(25))

        assert fit.names == ("b", "a")
        assert fit.dropped == ("twice_a",)
        np.testing.assert_allclose(fit.coefficients, [1.0, 1.0], atol=1e-12)

    def test_nothing_identified(self):
        """Test that an all-zero design raises"""
        with pytest.raises(RankDeficiencyError):
            wls_fit(DesignMatrix(("a",), np.zeros(5)), np.ones(5), WeightVector.unit(5))


class TestTwoWayClusterVcov:
    """Test cases for twoway_cluster_vcov"""

    def setup_method(self):
        rng = np.random.default_rng(20)
        self.n = 120
        self.x = np.column_stack([np.ones(self.n), rng.normal(size=self.n)])
        self.y = self.x @ np.array([0.3, 0.8]) + rng.normal(size=self.n)
        self.w = rng.uniform(0.5, 2.0, size=self.n)
        self.units = rng.integers(0, 15, size=self.n)
        self.years = rng.integers(0, 6, size=self.n)
        self.design = DesignMatrix(("intercept", "x"), self.x)

    def _vcov(self, units, years, weights=None):
        weights = WeightVector(self.w if weights is None else weights)
        fit = wls_fit(self.design, self.y, weights)
        clusters = ClusterAssignment.from_keys("unit", units, "year", years)
        return fit, twoway_cluster_vcov(self.design, fit.residuals, weights, clusters, fit.bread)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_brute_force(self, seed):
        """Test the sandwich against an explicit loop over clusters on random instances"""
        rng = np.random.default_rng(300 + seed)
        n = int(rng.integers(40, 201))
        x = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = x @ np.array([0.3, 0.8, -0.4]) + rng.normal(size=n)
        w = distance_weights(rng.uniform(-0.1, 0.1, size=n), KernelSpec(bandwidth=0.05))
        clusters = ClusterAssignment.from_keys(
            "unit", rng.integers(0, int(rng.integers(5, 30)), size=n), "year", rng.integers(0, 8, size=n)
        )
        design = DesignMatrix(("intercept", "x1", "x2"), x)
        fit = wls_fit(design, y, w)

        vcov = twoway_cluster_vcov(design, fit.residuals, w, clusters, fit.bread)

        expected = _brute_vcov(x, fit.residuals, w.weights, clusters.codes_a, clusters.codes_b, fit.bread)
        np.testing.assert_allclose(vcov.matrix, expected, rtol=0, atol=1e-12)
        assert vcov.counts["unit"] == len(np.unique(clusters.codes_a))
        assert vcov.counts["year"] == len(np.unique(clusters.codes_b))

    def test_small_sample_correction(self):
        """Test that the corrected matrix scales each meat by G/(G-1)"""
        units = np.arange(self.n) % 4
        years = np.arange(self.n) % 3
        _, vcov = self._vcov(units, years)

        assert vcov.counts == {"unit": 4, "year": 3, "intersection": 12}
        assert not np.allclose(vcov.matrix, vcov.corrected)

    def test_singleton_clusters_give_hc0(self):
        """Test that one record per cluster in both dimensions reduces to HC0"""
        fit, vcov = self._vcov(np.arange(self.n), np.arange(self.n))

        scores = self.x * (self.w * fit.residuals)[:, None]
        hc0 = fit.bread @ (scores.T @ scores) @ fit.bread
        np.testing.assert_allclose(vcov.matrix, hc0, rtol=1e-10)

    @pytest.mark.parametrize("factor", [1e-3, 1.0, 1e3])
    def test_weight_scale_invariance(self, factor):
        """Test that rescaling kernel weights leaves absorbed coefficients and clustered errors unchanged"""
        rng = np.random.default_rng(21)
        units = rng.integers(0, 25, size=self.n)
        x = rng.normal(size=(self.n, 2))
        y = x @ np.array([0.5, -0.2]) + 0.3 * units + rng.normal(size=self.n)
        kernel = distance_weights(rng.uniform(-0.1, 0.1, size=self.n), KernelSpec(bandwidth=0.05))
        groups = FixedEffectGroups.from_keys({"unit": units})
        clusters = ClusterAssignment.from_keys("unit", units, "year", self.years)
        design = DesignMatrix(("a", "b"), x)

        def estimate(weights):
            absorbed = absorb(design, y, groups, weights)
            fit = wls_fit(absorbed.design, absorbed.outcome, weights)
            vcov = twoway_cluster_vcov(absorbed.design, fit.residuals, weights, clusters, fit.bread)
            return fit.coefficients, np.sqrt(np.diag(vcov.matrix))

        base_coefficients, base_errors = estimate(kernel)
        coefficients, errors = estimate(WeightVector(kernel.weights * factor))

        np.testing.assert_allclose(coefficients, base_coefficients, rtol=0, atol=1e-10)
        np.testing.assert_allclose(errors, base_errors, rtol=0, atol=1e-10)

    def test_bread_computed_when_missing(self):
        """Test that omitting the bread gives the same covariance"""
        fit, vcov = self._vcov(self.units, self.years)
        clusters = ClusterAssignment.from_keys("unit", self.units, "year", self.years)

        again = twoway_cluster_vcov(self.design, fit.residuals, WeightVector(self.w), clusters)

        np.testing.assert_allclose(again.matrix, vcov.matrix, rtol=1e-9)

    def test_single_cluster(self):
        """Test that a dimension with one cluster is rejected"""
        with pytest.raises(ClusterError):
            self._vcov(self.units, np.zeros(self.n, dtype=int))
