import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from robustlens.advi import AdviConfig, fit_advi
from robustlens.analysis import (
    AnalysisError,
    ConfidenceEntry,
    ConfidenceSummary,
    CoverageError,
    confidence_summary,
    expected_cell_probs,
    gamma_effect_summary,
    ks_one_tailed_test,
    ks_statistic,
    posterior_predictive_sample,
    separability_curve,
    simpsons_report,
)
from robustlens.model import LatentParams, ModelSpec, dense_design, sample_dataset

FAST = AdviConfig(mc_samples=5, max_iters=400, window=100, seed=0)


def _spec(R=2, S=3, N=6, G=2):
    rng = np.random.default_rng(0)
    return ModelSpec(
        n_severities=S,
        n_subgroups=G,
        n_readers=R,
        n_cases=N,
        subgroup_of=rng.integers(0, G, size=N),
        design=dense_design(R, S, N),
    )


def _fitted(spec, seed=0):
    rng = np.random.default_rng(seed)
    truth = LatentParams(
        b=rng.standard_normal(spec.n_subgroups),
        mu=rng.standard_normal(spec.n_cases),
        gamma=rng.standard_normal((spec.n_severities, spec.n_subgroups)),
        nu=rng.standard_normal((spec.n_readers, spec.n_subgroups)),
    )
    data = sample_dataset(truth, spec, seed=seed + 1)
    return fit_advi(spec, data, FAST)


def _brute_force_ks(a, b):
    grid = np.concatenate([a, b])
    best = 0.0
    for t in grid:
        fa = np.mean(a <= t)
        fb = np.mean(b <= t)
        best = max(best, abs(fa - fb))
    return best


class TestKsStatistic:
    def test_identical_samples(self):
        x = np.array([0.1, 0.5, 0.5, 0.9])
        assert ks_statistic(x, x) == 0.0

    def test_disjoint_samples(self):
        assert ks_statistic([1, 2, 3], [10, 11]) == 1.0

    def test_binary_samples_exact(self):
        a = np.array([0, 0, 1, 1])  # ECDF at 0: 0.5
        b = np.array([0, 1, 1, 1])  # ECDF at 0: 0.25
        assert ks_statistic(a, b) == pytest.approx(0.25)

    def test_empty_rejected(self):
        with pytest.raises(AnalysisError):
            ks_statistic([], [1.0])

    @settings(deadline=None, max_examples=50)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.choice([0.0, 0.25, 0.5, 1.0], size=rng.integers(1, 30))
        b = rng.standard_normal(rng.integers(1, 30))
        assert ks_statistic(a, b) == pytest.approx(_brute_force_ks(a, b), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.random(20), rng.random(30)
        assert ks_statistic(a, b) == ks_statistic(b, a)


class TestKsOneTailed:
    def test_shifted_down_is_significant(self):
        rng = np.random.default_rng(0)
        low = rng.random(100)
        high = low + 2.0
        assert ks_one_tailed_test(low, high) < 1e-6

    def test_wrong_direction_is_one(self):
        rng = np.random.default_rng(0)
        low = rng.random(100)
        assert ks_one_tailed_test(low + 2.0, low) == 1.0

    def test_needs_two_per_side(self):
        with pytest.raises(AnalysisError):
            ks_one_tailed_test([1.0], [1.0, 2.0])

    def test_null_p_values_conservative(self):
        rng = np.random.default_rng(1)
        rejections = sum(
            ks_one_tailed_test(rng.standard_normal(40), rng.standard_normal(40)) < 0.05
            for _ in range(500)
        )
        assert rejections / 500 <= 0.07


class TestConfidence:
    def test_reference_severity_convention(self):
        post = _fitted(_spec())
        entry = gamma_effect_summary(post, 0, 0)
        assert (entry.mean, entry.std, entry.prob_positive) == (0.0, 0.0, 0.5)

    def test_closed_form_prob_positive(self):
        post = _fitted(_spec())
        entry = gamma_effect_summary(post, 1, 0)
        i = post.coord("gamma", (1, 0))
        assert entry.prob_positive == pytest.approx(norm.cdf(post.means[i] / post.stds[i]))

    def test_mc_path_agrees_with_closed_form(self):
        post = _fitted(_spec())
        exact = gamma_effect_summary(post, 1, 1)
        mc = gamma_effect_summary(post, 1, 1, mc_draws=200_000, seed=0)
        assert mc.prob_positive == pytest.approx(exact.prob_positive, abs=0.01)

    def test_summary_covers_every_severity(self):
        spec = _spec()
        post = _fitted(spec)
        cs = confidence_summary(post, spec, g=1)
        assert [e.severity for e in cs.entries] == list(range(spec.n_severities))

    def test_unknown_coordinate_raises(self):
        post = _fitted(_spec())
        with pytest.raises(IndexError):
            gamma_effect_summary(post, 99, 0)


class TestPosteriorPredictive:
    def test_shapes_and_binary_values(self):
        spec = _spec()
        post = _fitted(spec)
        rep = posterior_predictive_sample(post, spec, replicates=20, seed=0)
        assert rep.samples.shape == (20, spec.design.shape[0])
        assert set(np.unique(rep.samples)) <= {0, 1}

    def test_deterministic_per_seed(self):
        spec = _spec()
        post = _fitted(spec)
        a = posterior_predictive_sample(post, spec, replicates=5, seed=3)
        b = posterior_predictive_sample(post, spec, replicates=5, seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_replicates_must_be_positive(self):
        spec = _spec()
        with pytest.raises(AnalysisError):
            posterior_predictive_sample(_fitted(spec), spec, replicates=0)

    def test_expected_probs_match_tight_posterior(self):
        spec = _spec()
        post = _fitted(spec)
        post.log_stds[:] = -12.0  # collapse q to a point mass
        from robustlens.model import ParamLayout, effective_params

        layout = ParamLayout(spec)
        eff = effective_params(layout.unpack(post.means), spec)
        r, s, n = spec.design.T
        g = spec.subgroup_of[n]
        eta = eff.b[g] + eff.mu[n] + eff.gamma[s, g] + eff.nu[r, g]
        probs = expected_cell_probs(post, spec, spec.design, mc_draws=50, seed=0)
        assert np.allclose(probs, 1 / (1 + np.exp(-eta)), atol=1e-4)


class TestSeparability:
    def test_curve_shapes(self):
        spec = _spec(N=10)
        post = _fitted(spec)
        rep = posterior_predictive_sample(post, spec, replicates=30, seed=0)
        malignant = np.zeros(spec.n_cases, dtype=bool)
        malignant[np.flatnonzero(spec.subgroup_of == 0)[0]] = True
        curve = separability_curve(rep, malignant, g=0)
        assert curve.ks.shape == (spec.n_severities, 30)
        assert np.isnan(curve.p_values[0])
        assert np.all((curve.p_values[1:] >= 0) & (curve.p_values[1:] <= 1))

    def test_missing_class_raises_coverage_error(self):
        spec = _spec(N=6)
        post = _fitted(spec)
        rep = posterior_predictive_sample(post, spec, replicates=5, seed=0)
        with pytest.raises(CoverageError):
            separability_curve(rep, np.ones(spec.n_cases, dtype=bool), g=0)


def _summary(g, prob_by_severity, mean=1.0):
    entries = [
        ConfidenceEntry(severity=s, subgroup=g, mean=mean if s else 0.0, std=0.1, prob_positive=p)
        for s, p in enumerate(prob_by_severity)
    ]
    return ConfidenceSummary(subgroup=g, entries=entries)


class TestSimpsonsReport:
    def test_significance_disagreement_flagged(self):
        pooled = _summary(0, [0.5, 0.4])  # not significant
        sub = {0: _summary(0, [0.5, 0.01]), 1: _summary(1, [0.5, 0.5])}
        report = simpsons_report(sub, pooled)
        assert len(report.flags) == 1
        flag = report.flags[0]
        assert (flag.subgroup, flag.severity, flag.axis) == (0, 1, "confidence")
        assert flag.subgroup_significant and not flag.pooled_significant

    def test_sign_disagreement_flagged(self):
        pooled = _summary(0, [0.5, 0.01], mean=-1.0)
        sub = {0: _summary(0, [0.5, 0.01], mean=1.0)}
        report = simpsons_report(sub, pooled)
        assert len(report.flags) == 1
        assert report.flags[0].detail == "effect signs disagree"

    def test_agreement_produces_no_flags(self):
        pooled = _summary(0, [0.5, 0.01], mean=-1.0)
        sub = {0: _summary(0, [0.5, 0.02], mean=-1.0)}
        assert simpsons_report(sub, pooled).flags == []

    def test_reference_severity_never_flagged(self):
        pooled = _summary(0, [0.01, 0.5])
        sub = {0: _summary(0, [0.9, 0.5])}
        assert simpsons_report(sub, pooled).flags == []

    def test_mismatched_ladders_rejected(self):
        pooled = _summary(0, [0.5, 0.4])
        sub = {0: _summary(0, [0.5, 0.4, 0.3])}
        with pytest.raises(AnalysisError):
            simpsons_report(sub, pooled)

    def test_json_dict_is_serializable(self):
        import json

        pooled = _summary(0, [0.5, 0.4])
        sub = {0: _summary(0, [0.5, 0.01])}
        report = simpsons_report(sub, pooled)
        json.dumps(report.to_json_dict())
