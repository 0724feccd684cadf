import numpy as np
import pytest

from robustlens.advi import (
    AdviConfig,
    PosteriorApprox,
    _elbo_and_grads,
    compare_models,
    elbo_estimate,
    fit_advi,
)
from robustlens.model import (
    LatentParams,
    ModelSpec,
    ParamLayout,
    dense_design,
    sample_dataset,
    scores_for_design,
)

FAST = AdviConfig(mc_samples=5, max_iters=400, window=100, seed=0)


def _spec(R=2, S=3, N=5, G=2, variant="full", design=None):
    rng = np.random.default_rng(0)
    return ModelSpec(
        n_severities=S,
        n_subgroups=G,
        n_readers=R,
        n_cases=N,
        subgroup_of=rng.integers(0, G, size=N),
        design=dense_design(R, S, N) if design is None else design,
        variant=variant,
    )


def _dataset(spec, seed=0):
    rng = np.random.default_rng(seed)
    truth = LatentParams(
        b=rng.standard_normal(spec.n_subgroups),
        mu=rng.standard_normal(spec.n_cases),
        gamma=rng.standard_normal((spec.n_severities, spec.n_subgroups)),
        nu=rng.standard_normal((spec.n_readers, spec.n_subgroups)),
    )
    return sample_dataset(truth, spec, seed=seed + 1)


class TestPosteriorApprox:
    def _post(self):
        spec = _spec()
        return fit_advi(spec, _dataset(spec), FAST)

    def test_json_round_trip(self, tmp_path):
        post = self._post()
        path = str(tmp_path / "post.json")
        post.save(path)
        back = PosteriorApprox.load(path)
        assert np.allclose(back.means, post.means)
        assert np.allclose(back.log_stds, post.log_stds)
        assert back.index_map == post.index_map
        assert back.config == post.config

    def test_coord_lookup(self):
        post = self._post()
        i = post.coord("b", (0,))
        assert post.index_map[i] == ("b", (0,))
        with pytest.raises(IndexError):
            post.coord("gamma", (0, 0))  # fixed by the constraint, not free

    def test_entropy_formula(self):
        post = self._post()
        d = post.means.size
        expected = np.sum(post.log_stds) + 0.5 * d * (1 + np.log(2 * np.pi))
        assert post.entropy() == pytest.approx(expected)

    def test_sample_shape_and_spread(self):
        post = self._post()
        draws = post.sample(np.random.default_rng(0), size=4000)
        assert draws.shape == (4000, post.means.size)
        assert np.allclose(draws.mean(axis=0), post.means, atol=0.1)

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(ValueError):
            PosteriorApprox(means=np.zeros(3), log_stds=np.zeros(2), index_map=[])


class TestGradients:
    def test_reparameterized_gradient_matches_finite_differences(self):
        spec = _spec(R=2, S=2, N=3)
        data = _dataset(spec)
        layout = ParamLayout(spec)
        z = scores_for_design(data, spec)
        rng = np.random.default_rng(0)
        d = layout.dim
        means = 0.3 * rng.standard_normal(d)
        log_stds = 0.1 * rng.standard_normal(d)
        eps = rng.standard_normal((4, d))  # common random numbers

        _, g_m, g_ls = _elbo_and_grads(layout, z, means, log_stds, eps)

        def elbo(m, ls):
            return _elbo_and_grads(layout, z, m, ls, eps)[0]

        h = 1e-6
        for i in range(d):
            dm = np.zeros(d)
            dm[i] = h
            fd = (elbo(means + dm, log_stds) - elbo(means - dm, log_stds)) / (2 * h)
            assert g_m[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)
            fd = (elbo(means, log_stds + dm) - elbo(means, log_stds - dm)) / (2 * h)
            assert g_ls[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


class TestFit:
    def test_deterministic_per_seed(self):
        spec = _spec()
        data = _dataset(spec)
        a = fit_advi(spec, data, FAST)
        b = fit_advi(spec, data, FAST)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.log_stds, b.log_stds)
        assert a.elbo_trace == b.elbo_trace

    def test_no_data_recovers_prior(self):
        spec = _spec(R=2, S=2, N=3, design=np.empty((0, 3)))
        data = sample_dataset(LatentParams.zeros(spec), spec, seed=0)
        post = fit_advi(spec, data, AdviConfig(mc_samples=10, max_iters=3000, seed=0))
        assert np.abs(post.means).max() < 0.1
        assert np.abs(post.stds - 1.0).max() < 0.1

    def test_elbo_trace_improves(self):
        spec = _spec()
        post = fit_advi(spec, _dataset(spec), FAST)
        first = np.mean([v for _, v in post.elbo_trace[:20]])
        last = np.mean([v for _, v in post.elbo_trace[-20:]])
        assert last > first

    def test_strong_signal_moves_posterior(self):
        spec = _spec(R=4, S=1, N=1, G=1, design=dense_design(4, 1, 1))
        truth = LatentParams(
            b=np.array([3.0]), mu=np.zeros(1), gamma=np.zeros((1, 1)), nu=np.zeros((4, 1))
        )
        data = sample_dataset(truth, spec, seed=2)  # all-positive at p=0.95
        post = fit_advi(spec, data, AdviConfig(mc_samples=5, max_iters=1500, seed=0))
        assert post.means[post.coord("b", (0,))] > 0.5


class TestElboEstimate:
    def test_se_shrinks_with_samples(self):
        spec = _spec()
        data = _dataset(spec)
        post = fit_advi(spec, data, FAST)
        _, se_small = elbo_estimate(post, spec, data, mc_samples=50, seed=0)
        _, se_big = elbo_estimate(post, spec, data, mc_samples=5000, seed=0)
        assert se_big < se_small

    def test_single_sample_has_infinite_se(self):
        spec = _spec()
        data = _dataset(spec)
        post = fit_advi(spec, data, FAST)
        _, se = elbo_estimate(post, spec, data, mc_samples=1, seed=0)
        assert se == float("inf")

    def test_zero_samples_rejected(self):
        spec = _spec()
        data = _dataset(spec)
        post = fit_advi(spec, data, FAST)
        with pytest.raises(ValueError):
            elbo_estimate(post, spec, data, mc_samples=0, seed=0)


class TestCompareModels:
    def test_filter_variant_wins_on_filtered_data(self):
        # strong severity effect, no case or reader effects: the filter
        # variant should beat the case-only variant on ELBO
        base = _spec(R=4, S=3, N=30, G=1)
        truth = LatentParams(
            b=np.zeros(1),
            mu=np.zeros(30),
            gamma=np.array([[0.0], [-2.0], [-4.0]]),
            nu=np.zeros((4, 1)),
        )
        data = sample_dataset(truth, base, seed=3)
        cfg = AdviConfig(mc_samples=5, max_iters=1000, seed=0)
        candidates = []
        for variant in ("case", "filter"):
            spec = _spec(R=4, S=3, N=30, G=1, variant=variant)
            candidates.append((spec, fit_advi(spec, data, cfg)))
        ranking = compare_models(candidates, data, mc_samples=500, seed=0)
        assert ranking[0]["variant"] == "filter"
        assert [row["rank"] for row in ranking] == [0, 1]
        assert all(row["se"] > 0 for row in ranking)
