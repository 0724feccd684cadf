"""Downstream comparison analyses on a fitted posterior.

Two axes: predictive confidence, summarized by the posterior of the filter
effect gamma (reported as P(gamma > 0 | D)); and class separability, the
two-sample KS statistic between posterior-predictive predictions on positive
and negative cases, with a one-tailed KS test against the unfiltered
severity. The aggregate-vs-subgroup report surfaces Simpson's-paradox
disagreements between pooled and per-subgroup conclusions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .advi import PosteriorApprox
from .model import LatentParams, ModelSpec, ParamLayout, _sigmoid


class AnalysisError(Exception):
    pass


class CoverageError(AnalysisError):
    pass


DEFAULT_REPLICATES = 1000
SIGNIFICANCE_ALPHA = 0.05


# ---------------------------------------------------------------------------
# Predictive confidence


@dataclass
class ConfidenceEntry:
    severity: int
    subgroup: int
    mean: float
    std: float
    prob_positive: float


@dataclass
class ConfidenceSummary:
    subgroup: int
    entries: list[ConfidenceEntry]

    def entry(self, severity: int) -> ConfidenceEntry:
        for e in self.entries:
            if e.severity == severity:
                return e
        raise IndexError(f"no severity {severity} in summary")


def gamma_effect_summary(
    post: PosteriorApprox, s: int, g: int, mc_draws: int | None = None, seed: int = 0
) -> ConfidenceEntry:
    """Posterior mean/std of gamma_{s,g} and P(gamma_{s,g} > 0 | D).

    At the constrained reference severity (gamma fixed at 0) the probability
    is reported as 0.5 by convention. prob_positive uses the Gaussian closed
    form Phi(mean/std); pass mc_draws for the Monte Carlo path instead.
    """
    try:
        i = post.coord("gamma", (s, g))
    except IndexError:
        if s == 0 and post.constrained:
            return ConfidenceEntry(severity=s, subgroup=g, mean=0.0, std=0.0, prob_positive=0.5)
        raise
    mean = float(post.means[i])
    std = float(post.stds[i])
    if mc_draws:
        rng = np.random.default_rng(seed)
        prob = float(np.mean(mean + std * rng.standard_normal(mc_draws) > 0))
    else:
        prob = float(norm.cdf(mean / std)) if std > 0 else float(mean > 0)
    return ConfidenceEntry(severity=s, subgroup=g, mean=mean, std=std, prob_positive=prob)


def confidence_summary(post: PosteriorApprox, spec: ModelSpec, g: int) -> ConfidenceSummary:
    entries = [gamma_effect_summary(post, s, g) for s in range(spec.n_severities)]
    return ConfidenceSummary(subgroup=g, entries=entries)


# ---------------------------------------------------------------------------
# Posterior predictive sampling


@dataclass
class ReplicatedPredictions:
    """Binary posterior-predictive draws over a fixed design.

    samples[k, i] is replicate k's prediction for design row i (r, s, n).
    """

    design: np.ndarray  # (M, 3)
    samples: np.ndarray  # (replicates, M) in {0, 1}
    spec: ModelSpec

    @property
    def replicates(self) -> int:
        return self.samples.shape[0]


def posterior_predictive_sample(
    post: PosteriorApprox,
    spec: ModelSpec,
    design: np.ndarray | None = None,
    replicates: int = DEFAULT_REPLICATES,
    seed: int = 0,
) -> ReplicatedPredictions:
    """Draw latents from q, then one Bernoulli prediction per design row.

    The design defaults to the spec's observed design but may be the dense
    grid, filling in triples missing from a sparse reader study.
    """
    if replicates < 1:
        raise AnalysisError("replicates must be >= 1")
    if design is None:
        design = spec.design
    design = np.asarray(design, dtype=np.intp).reshape(-1, 3)
    layout = ParamLayout(spec)
    rng = np.random.default_rng(seed)
    r, s, n = design.T
    g = spec.subgroup_of[n]
    out = np.empty((replicates, design.shape[0]), dtype=np.uint8)
    for k in range(replicates):
        theta = post.means + post.stds * rng.standard_normal(post.means.size)
        p = _cell_probs(layout, theta, r, s, n, g)
        out[k] = rng.random(p.shape) < p
    return ReplicatedPredictions(design=design, samples=out, spec=spec)


def _cell_probs(layout: ParamLayout, theta, r, s, n, g) -> np.ndarray:
    from .model import effective_params

    params = layout.unpack(theta)
    eff = effective_params(params, layout.spec)
    eta = eff.b[g] + eff.mu[n] + eff.gamma[s, g] + eff.nu[r, g]
    return _sigmoid(eta)


def expected_cell_probs(
    post: PosteriorApprox, spec: ModelSpec, design: np.ndarray, mc_draws: int = 2000, seed: int = 0
) -> np.ndarray:
    """E_q[predict_prob] per design row, by Monte Carlo over the posterior."""
    layout = ParamLayout(spec)
    rng = np.random.default_rng(seed)
    r, s, n = np.asarray(design, dtype=np.intp).reshape(-1, 3).T
    g = spec.subgroup_of[n]
    acc = np.zeros(len(r))
    for _ in range(mc_draws):
        theta = post.means + post.stds * rng.standard_normal(post.means.size)
        acc += _cell_probs(layout, theta, r, s, n, g)
    return acc / mc_draws


# ---------------------------------------------------------------------------
# KS statistics


def ks_statistic(a, b) -> float:
    """Exact two-sample KS statistic, sup_t |ECDF_a(t) - ECDF_b(t)|.

    Exact over tied values (right-continuous ECDFs evaluated at every
    distinct observed value), which matters for binary-valued samples.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise AnalysisError("KS statistic undefined for an empty sample")
    grid = np.union1d(a, b)
    fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
    fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    return float(np.abs(fa - fb).max())


def ks_one_tailed_test(stats_s, stats_0) -> float:
    """One-sided two-sample KS test, alternative: stats_s stochastically smaller.

    Uses D+ = sup_t (ECDF_s(t) - ECDF_0(t)) and the asymptotic tail
    probability exp(-2 m D+^2), m = n1 n2 / (n1 + n2).
    """
    a = np.asarray(stats_s, dtype=np.float64)
    b = np.asarray(stats_0, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise AnalysisError("one-tailed KS test needs >= 2 values per side")
    grid = np.union1d(a, b)
    fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
    fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    d_plus = float((fa - fb).max())
    if d_plus <= 0:
        return 1.0
    m = a.size * b.size / (a.size + b.size)
    return float(min(1.0, np.exp(-2.0 * m * d_plus**2)))


# ---------------------------------------------------------------------------
# Separability curves


@dataclass
class SeparabilityCurve:
    subgroup: int
    ks: np.ndarray  # (S, replicates)
    p_values: np.ndarray  # (S,) one-tailed test vs severity 0; index 0 is NaN

    @property
    def n_severities(self) -> int:
        return self.ks.shape[0]


def separability_curve(
    samples: ReplicatedPredictions, malignant: np.ndarray, g: int
) -> SeparabilityCurve:
    """Per-severity KS between predictions on malignant-in-g and nonmalignant cases.

    The negative pool is every nonmalignant case (benign plus nonbiopsied),
    across all subgroups. Predictions pool across readers within a replicate.
    """
    spec = samples.spec
    malignant = np.asarray(malignant, dtype=bool)
    r, s, n = samples.design.T
    case_g = spec.subgroup_of[n]
    pos_rows = malignant[n] & (case_g == g)
    neg_rows = ~malignant[n]
    S = spec.n_severities
    ks = np.empty((S, samples.replicates))
    for sev in range(S):
        at_sev = s == sev
        pos = at_sev & pos_rows
        neg = at_sev & neg_rows
        if not pos.any() or not neg.any():
            raise CoverageError(f"severity {sev}: missing a class for subgroup {g}")
        for k in range(samples.replicates):
            ks[sev, k] = ks_statistic(samples.samples[k, pos], samples.samples[k, neg])
    p_values = np.full(S, np.nan)
    for sev in range(1, S):
        p_values[sev] = ks_one_tailed_test(ks[sev], ks[0])
    return SeparabilityCurve(subgroup=g, ks=ks, p_values=p_values)


# ---------------------------------------------------------------------------
# Simpson's-paradox report


@dataclass
class SimpsonsFlag:
    severity: int
    subgroup: int
    axis: str  # "confidence" | "separability"
    pooled_significant: bool
    subgroup_significant: bool
    detail: str


@dataclass
class SimpsonsReport:
    confidence_pooled: ConfidenceSummary
    confidence_by_subgroup: dict[int, ConfidenceSummary]
    separability_pooled: SeparabilityCurve | None
    separability_by_subgroup: dict[int, SeparabilityCurve]
    alpha: float
    flags: list[SimpsonsFlag] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        def conf(cs: ConfidenceSummary):
            return [
                {
                    "severity": e.severity,
                    "mean": e.mean,
                    "std": e.std,
                    "prob_positive": e.prob_positive,
                }
                for e in cs.entries
            ]

        def sep(sc: SeparabilityCurve | None):
            if sc is None:
                return None
            return {
                "ks_median": np.median(sc.ks, axis=1).tolist(),
                "p_values": [None if np.isnan(p) else float(p) for p in sc.p_values],
            }

        return {
            "alpha": self.alpha,
            "pooled": {"confidence": conf(self.confidence_pooled), "separability": sep(self.separability_pooled)},
            "subgroups": {
                str(g): {
                    "confidence": conf(cs),
                    "separability": sep(self.separability_by_subgroup.get(g)),
                }
                for g, cs in self.confidence_by_subgroup.items()
            },
            "flags": [
                {
                    "severity": f.severity,
                    "subgroup": f.subgroup,
                    "axis": f.axis,
                    "pooled_significant": f.pooled_significant,
                    "subgroup_significant": f.subgroup_significant,
                    "detail": f.detail,
                }
                for f in self.flags
            ],
        }


def simpsons_report(
    confidence_by_subgroup: dict[int, ConfidenceSummary],
    confidence_pooled: ConfidenceSummary,
    separability_by_subgroup: dict[int, SeparabilityCurve] | None = None,
    separability_pooled: SeparabilityCurve | None = None,
    alpha: float = SIGNIFICANCE_ALPHA,
) -> SimpsonsReport:
    """Flag severities where pooled and subgroup conclusions disagree.

    "Significant" on the confidence axis means prob_positive < alpha (a
    credibly negative filter effect); on the separability axis, the
    one-tailed p-value < alpha. A flag is raised when significance status
    or effect sign differs between the pooled fit and any subgroup.
    """
    severities = [e.severity for e in confidence_pooled.entries]
    for cs in confidence_by_subgroup.values():
        if [e.severity for e in cs.entries] != severities:
            raise AnalysisError("mismatched severity ladders between pooled and subgroup fits")

    report = SimpsonsReport(
        confidence_pooled=confidence_pooled,
        confidence_by_subgroup=confidence_by_subgroup,
        separability_pooled=separability_pooled,
        separability_by_subgroup=separability_by_subgroup or {},
        alpha=alpha,
    )
    for s in severities:
        if s == 0:
            continue
        pooled = confidence_pooled.entry(s)
        pooled_sig = pooled.prob_positive < alpha
        for g, cs in confidence_by_subgroup.items():
            sub = cs.entry(s)
            sub_sig = sub.prob_positive < alpha
            if pooled_sig != sub_sig:
                report.flags.append(
                    SimpsonsFlag(
                        severity=s,
                        subgroup=g,
                        axis="confidence",
                        pooled_significant=pooled_sig,
                        subgroup_significant=sub_sig,
                        detail=(
                            f"pooled prob_positive={pooled.prob_positive:.4f}, "
                            f"subgroup prob_positive={sub.prob_positive:.4f}"
                        ),
                    )
                )
            elif pooled_sig and sub_sig and np.sign(pooled.mean) != np.sign(sub.mean):
                report.flags.append(
                    SimpsonsFlag(
                        severity=s,
                        subgroup=g,
                        axis="confidence",
                        pooled_significant=pooled_sig,
                        subgroup_significant=sub_sig,
                        detail="effect signs disagree",
                    )
                )
    if separability_pooled is not None and separability_by_subgroup:
        for s in severities:
            if s == 0:
                continue
            pooled_sig = bool(separability_pooled.p_values[s] < alpha)
            for g, sc in separability_by_subgroup.items():
                sub_sig = bool(sc.p_values[s] < alpha)
                if pooled_sig != sub_sig:
                    report.flags.append(
                        SimpsonsFlag(
                            severity=s,
                            subgroup=g,
                            axis="separability",
                            pooled_significant=pooled_sig,
                            subgroup_significant=sub_sig,
                            detail=(
                                f"pooled p={separability_pooled.p_values[s]:.4f}, "
                                f"subgroup p={sc.p_values[s]:.4f}"
                            ),
                        )
                    )
    return report
