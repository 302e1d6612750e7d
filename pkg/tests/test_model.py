import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from conftest import flat_hyper, make_state
from sae_misclass.errors import (
    CategoryDomainError,
    DatasetValidationError,
    ParameterDomainError,
    ShapeError,
)
from sae_misclass.model import (
    HyperParams,
    Mode,
    build_design_matrix,
    check_transition_matrix,
    dirichlet_prior_pattern,
    linear_predictor,
    log_complete_likelihood,
    unit_means,
    validate_dataset,
)


class TestValidateDataset:
    def test_centering_records_offset(self):
        d = validate_dataset([1, 2, 3], ["a", "a", "b"], [0, 1, 0], 2, s=[2.0, 3.0, 4.0])
        assert abs(d.S.mean()) < 1e-15
        assert d.s_offset.tolist() == [3.0]
        assert np.allclose(d.uncentered_S()[:, 0], [2, 3, 4])

    def test_category_out_of_range_names_record(self):
        with pytest.raises(DatasetValidationError) as err:
            validate_dataset([1, 2], ["a", "b"], [0, 3], 3)
        (v,) = err.value.violations
        assert v[0] == "category" and v[1] == "b" and v[2] == 1
        assert "unit 1" in str(err.value)

    def test_twenty_areas_of_three_to_fifty(self):
        g = np.random.default_rng(0)
        n_i = g.integers(3, 51, size=20)
        area = np.repeat(np.arange(20), n_i)
        N = area.size
        d = validate_dataset(g.normal(size=N), area, g.integers(0, 3, N), 3)
        assert d.m == 20 and d.N == N
        assert d.n_i.min() >= 3 and d.n_i.max() <= 50

    def test_collects_all_violations(self):
        with pytest.raises(DatasetValidationError) as err:
            validate_dataset([1.0, np.nan, 3.0], [0, 1, 1], [0, 0, 5], 2, t=[[1.0], [1.0], [np.inf]])
        kinds = sorted(v[0] for v in err.value.violations)
        assert kinds == ["category", "nonfinite", "nonfinite"]

    def test_empty_area_reported(self):
        with pytest.raises(DatasetValidationError) as err:
            validate_dataset([1.0], ["a"], [0], 2, area_labels=("a", "b"))
        assert err.value.violations[0][:2] == ("empty_area", "b")

    def test_single_unit_area_accepted(self):
        d = validate_dataset([1.0, 2.0, 3.0], [0, 1, 1], [0, 1, 1], 2)
        assert d.n_i.tolist() == [1, 2]

    def test_read_only(self):
        d = validate_dataset([1.0, 2.0], [0, 0], [0, 1], 2)
        with pytest.raises(ValueError):
            d.y[0] = 5.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            validate_dataset([1.0, 2.0], [0], [0, 1], 2)


class TestHyperParams:
    def test_prior_pattern(self):
        a = dirichlet_prior_pattern(3)
        assert a.tolist() == [[0.5, 0.2, 0.2], [0.2, 0.5, 0.2], [0.2, 0.2, 0.5]]
        assert dirichlet_prior_pattern(4, far=0.1)[0].tolist() == [0.5, 0.2, 0.1, 0.1]

    def test_defaults_are_diffuse(self):
        h = HyperParams.default(3, 1, 2)
        assert h.a_e == h.b_u == 0.001
        assert h.sigma2_beta.tolist() == [1e6] * 3
        assert (h.K, h.p, h.q) == (3, 1, 2)

    @pytest.mark.parametrize("field,value", [("a_e", 0.0), ("sigma2_w", -1.0), ("b_s", math.nan)])
    def test_positivity(self, field, value):
        kw = dict(vars(HyperParams.default(2)))
        kw[field] = value
        with pytest.raises(ParameterDomainError):
            HyperParams(**kw)

    def test_alpha_entries_positive(self):
        with pytest.raises(ParameterDomainError):
            HyperParams.default(2, alpha=np.array([[1.0, 0.0], [1.0, 1.0]]))

    def test_alpha_shape(self):
        with pytest.raises(ShapeError):
            HyperParams.default(2, alpha=np.ones((3, 3)))


def test_transition_matrix_checks():
    check_transition_matrix(np.array([[0.8, 0.2], [0.3, 0.7]]))
    with pytest.raises(ParameterDomainError):
        check_transition_matrix(np.array([[0.8, 0.3], [0.3, 0.7]]))
    with pytest.raises(ParameterDomainError):
        check_transition_matrix(np.array([[1.2, -0.2], [0.3, 0.7]]))


def test_mode_flags():
    assert Mode.PROPOSED.categorical_latent and Mode.PROPOSED.continuous_latent
    for m in (Mode.NAIVE, Mode.TRUE_X):
        assert not m.categorical_latent and not m.continuous_latent
    assert Mode.parse("naive") is Mode.NAIVE


class TestDesignMatrix:
    def test_identity(self):
        assert np.array_equal(build_design_matrix([0, 1, 2], 3), np.eye(3))

    def test_repeated(self):
        assert build_design_matrix([1, 1], 3).tolist() == [[0, 1, 0], [0, 1, 0]]

    def test_out_of_range(self):
        with pytest.raises(CategoryDomainError):
            build_design_matrix([0, 3], 3)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6).flatmap(lambda K: st.tuples(st.just(K), st.lists(st.integers(0, K - 1), min_size=1, max_size=40))))
    def test_counts_and_orthogonality(self, args):
        K, x = args
        X = build_design_matrix(x, K)
        counts = np.bincount(x, minlength=K)
        assert X.sum() == len(x)
        assert np.array_equal(X.sum(axis=0), counts)
        assert np.array_equal(X.T @ X, np.diag(counts))


def _one_unit(t=None, s=None, z=0, K=3, y=0.0):
    return validate_dataset([y], [0], [z], K, t=t, s=s, center=False)


class TestLinearPredictor:
    def test_zero(self):
        d = _one_unit()
        assert linear_predictor(make_state(d), d, 0) == 0.0

    def test_third_category(self):
        d = _one_unit(z=2)
        assert linear_predictor(make_state(d, beta=[50, 5, -10]), d, 0) == -10.0

    def test_hand_arithmetic(self):
        d = _one_unit(t=[[1.0, 2.0]], s=[[0.5]], z=0)
        st_ = make_state(d, beta=[3, 0, 0], delta=[1, 1], gamma=[2], u=[0.5], w=[[0.5]])
        assert linear_predictor(st_, d, 0) == 7.5

    def test_shape_mismatch(self):
        d = _one_unit(t=[[1.0, 2.0]])
        with pytest.raises(ShapeError):
            linear_predictor(make_state(d, delta=[1.0]), d, 0)

    def test_superposition(self):
        g = np.random.default_rng(3)
        N, K, p, q = 12, 3, 2, 2
        d = validate_dataset(g.normal(size=N), g.integers(0, 3, N), g.integers(0, K, N), K,
                             t=g.normal(size=(N, p)), s=g.normal(size=(N, q)))
        base = make_state(d, beta=g.normal(size=K), delta=g.normal(size=p), gamma=g.normal(size=q),
                          u=g.normal(size=d.m))
        f0 = unit_means(base, d)
        for block, size in (("beta", K), ("delta", p), ("gamma", q), ("u", d.m)):
            a, b = g.normal(size=size), g.normal(size=size)
            c1, c2 = 1.7, -0.4

            def at(v):
                s = base.copy()
                setattr(s, block, v)
                return unit_means(s, d)

            # f(c1 a + c2 b) - f(0) = c1 (f(a) - f(0)) + c2 (f(b) - f(0)) for an affine f
            zero = at(np.zeros(size))
            lhs = at(c1 * a + c2 * b) - zero
            rhs = c1 * (at(a) - zero) + c2 * (at(b) - zero)
            assert np.allclose(lhs, rhs, atol=1e-12), block
        assert np.allclose(f0, [linear_predictor(base, d, j) for j in range(N)], atol=1e-12)


class TestLogLikelihood:
    def test_zero_residual_is_normalizers(self):
        d = _one_unit(s=[[1.5]], z=1, y=4.0)
        h = flat_hyper(3, 0, 1, sigma2_w=2.0)
        st_ = make_state(d, beta=[0, 4.0, 0], w=[[0.0]], gamma=[0.0], sigma2_e=0.5, sigma2_s=0.3, sigma2_u=2.5)
        st_.w = np.array([[1.5]])  # s = w exactly
        # w is not zero so the w-prior term has a quadratic part
        expected = (
            -0.5 * math.log(2 * math.pi * 0.5)
            - 0.5 * math.log(2 * math.pi * 0.3)
            + norm.logpdf(1.5, 0, math.sqrt(2.0))
            + math.log(1.0)
            - math.log(3)
            - 0.5 * math.log(2 * math.pi * 2.5)
        )
        assert log_complete_likelihood(st_, d, h) == pytest.approx(expected, abs=1e-12)

    def test_doubling_error_variance(self):
        g = np.random.default_rng(4)
        N = 7
        d = validate_dataset(np.zeros(N), g.integers(0, 2, N), g.integers(0, 2, N), 2)
        h = flat_hyper(2)
        st_ = make_state(d, sigma2_e=1.3)
        a = log_complete_likelihood(st_, d, h)
        st_.sigma2_e = 2.6
        b = log_complete_likelihood(st_, d, h)
        assert a - b == pytest.approx(N / 2 * math.log(2), abs=1e-12)

    def test_two_unit_brute_force(self):
        y = [1.2, -0.7]
        t = [[0.5], [2.0]]
        s = [[0.3], [-0.1]]
        d = validate_dataset(y, ["a", "b"], [0, 1], 2, t=t, s=s, center=False)
        h = flat_hyper(2, 1, 1, sigma2_w=0.8)
        P = np.array([[0.7, 0.3], [0.4, 0.6]])
        st_ = make_state(d, beta=[0.4, -0.2], delta=[0.9], gamma=[1.1], u=[0.15, -0.25], P=P,
                         sigma2_e=0.6, sigma2_u=1.4, sigma2_s=0.2)
        st_.x = np.array([1, 1])
        st_.w = np.array([[0.25], [0.05]])
        total = 0.0
        for j in range(2):
            theta = st_.beta[1] + t[j][0] * 0.9 + st_.w[j, 0] * 1.1 + st_.u[j]
            total += norm.logpdf(y[j], theta, math.sqrt(0.6))
            total += norm.logpdf(s[j][0], st_.w[j, 0], math.sqrt(0.2))
            total += norm.logpdf(st_.w[j, 0], 0, math.sqrt(0.8))
            total += math.log(P[1, d.z[j]]) - math.log(2)
        total += norm.logpdf(0.15, 0, math.sqrt(1.4)) + norm.logpdf(-0.25, 0, math.sqrt(1.4))
        assert log_complete_likelihood(st_, d, h) == pytest.approx(total, abs=1e-12)

    def test_nonpositive_variance(self):
        d = _one_unit()
        with pytest.raises(ParameterDomainError):
            log_complete_likelihood(make_state(d, sigma2_e=0.0), d, flat_hyper(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.permutations(range(6)))
    def test_unit_permutation_within_areas(self, seed, perm):
        g = np.random.default_rng(seed)
        N = 6
        area = np.zeros(N, dtype=int)  # one area so any permutation stays within it
        y, z, s = g.normal(size=N), g.integers(0, 3, N), g.normal(size=(N, 1))
        P = g.dirichlet(np.ones(3), size=3)
        x = g.integers(0, 3, N)
        w = g.normal(size=(N, 1))
        h = flat_hyper(3, 0, 1)
        perm = np.array(perm)

        def value(idx):
            d = validate_dataset(y[idx], area, z[idx], 3, s=s[idx], center=False)
            st_ = make_state(d, beta=[1.0, -2.0, 0.5], gamma=[0.7], u=[0.3], P=P)
            st_.x, st_.w = x[idx], w[idx]
            return log_complete_likelihood(st_, d, h)

        assert value(np.arange(N)) == pytest.approx(value(perm), abs=1e-10)
