"""Mean-field Gaussian variational inference for the latent prediction model.

The variational family is a diagonal Gaussian over the flat free-coordinate
vector. Gradients of the Monte Carlo ELBO come from the reparameterization
theta = mean + exp(log_std) * eps and reverse-mode differentiation of the
log joint; optimization is Adam with a running-average convergence check.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node
from .data import PredictionSet, atomic_write_text
from .model import LOG_2PI, ModelSpec, ParamLayout, scores_for_design


class FitFailure(Exception):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class AdviConfig:
    mc_samples: int = 10
    max_iters: int = 20000
    step_size: float = 0.05
    seed: int = 0
    tolerance: float = 1e-4
    window: int = 500

    def to_json_dict(self) -> dict:
        return {
            "mc_samples": self.mc_samples,
            "max_iters": self.max_iters,
            "step_size": self.step_size,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "window": self.window,
        }


@dataclass
class PosteriorApprox:
    means: np.ndarray
    log_stds: np.ndarray
    index_map: list[tuple[str, tuple[int, ...]]]
    elbo_trace: list[tuple[int, float]] = field(default_factory=list)
    variant: str = "full"
    constrained: bool = True
    config: AdviConfig | None = None

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.log_stds = np.asarray(self.log_stds, dtype=np.float64)
        if self.means.shape != self.log_stds.shape:
            raise ValueError("means and log_stds must have equal length")

    @property
    def stds(self) -> np.ndarray:
        return np.exp(self.log_stds)

    def coord(self, name: str, idx: tuple[int, ...]) -> int:
        try:
            return self.index_map.index((name, tuple(idx)))
        except ValueError:
            raise IndexError(f"no posterior coordinate {name}{tuple(idx)}") from None

    def entropy(self) -> float:
        d = self.means.size
        return float(np.sum(self.log_stds) + 0.5 * d * (1.0 + LOG_2PI))

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        eps = rng.standard_normal((size, self.means.size))
        return self.means[None, :] + self.stds[None, :] * eps

    def to_json_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "log_stds": self.log_stds.tolist(),
            "index_map": [[name, list(idx)] for name, idx in self.index_map],
            "elbo_trace": [[int(i), float(v)] for i, v in self.elbo_trace],
            "variant": self.variant,
            "constrained": self.constrained,
            "config": self.config.to_json_dict() if self.config else None,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PosteriorApprox":
        cfg = AdviConfig(**d["config"]) if d.get("config") else None
        return cls(
            means=np.asarray(d["means"]),
            log_stds=np.asarray(d["log_stds"]),
            index_map=[(name, tuple(idx)) for name, idx in d["index_map"]],
            elbo_trace=[(int(i), float(v)) for i, v in d["elbo_trace"]],
            variant=d["variant"],
            constrained=d["constrained"],
            config=cfg,
        )

    def save(self, path: str) -> None:
        atomic_write_text(path, json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path: str) -> "PosteriorApprox":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def _elbo_and_grads(layout: ParamLayout, z: np.ndarray, means, log_stds, eps):
    """ELBO estimate and its gradients w.r.t. means and log_stds.

    eps has shape (K, dim); the same draws must be reused for common-random-
    number comparisons.
    """
    K, d = eps.shape
    stds = np.exp(log_stds)
    theta = Node(means[None, :] + stds[None, :] * eps)
    logp = layout.log_joint_node(theta, z)  # (K,)
    total = logp.sum()
    total.backward(seed=1.0 / K)
    g_theta = theta.grad  # (K, d), already averaged via the seed
    entropy = float(np.sum(log_stds) + 0.5 * d * (1.0 + LOG_2PI))
    elbo = float(logp.value.mean() + entropy)
    grad_means = g_theta.sum(axis=0)
    grad_log_stds = (g_theta * eps).sum(axis=0) * stds + 1.0
    return elbo, grad_means, grad_log_stds


def elbo_value(layout: ParamLayout, z: np.ndarray, means, log_stds, eps) -> np.ndarray:
    """Per-sample ELBO contributions logp(theta_k) + entropy, shape (K,)."""
    d = means.size
    theta = Node(means[None, :] + np.exp(log_stds)[None, :] * eps)
    logp = layout.log_joint_node(theta, z)
    entropy = np.sum(log_stds) + 0.5 * d * (1.0 + LOG_2PI)
    return logp.value + entropy


def fit_advi(spec: ModelSpec, data: PredictionSet, config: AdviConfig | None = None) -> PosteriorApprox:
    """Maximize the ELBO by stochastic gradient ascent; deterministic per seed."""
    config = config or AdviConfig()
    layout = ParamLayout(spec)
    z = scores_for_design(data, spec)
    d = layout.dim
    rng = np.random.default_rng(config.seed)

    means = np.zeros(d)
    log_stds = np.zeros(d)  # prior-matched start
    m1 = np.zeros(2 * d)
    m2 = np.zeros(2 * d)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    trace: list[tuple[int, float]] = []
    prev_window_mean = None
    tail: deque[np.ndarray] = deque(maxlen=config.window)
    for it in range(1, config.max_iters + 1):
        eps = rng.standard_normal((config.mc_samples, d))
        elbo, g_m, g_ls = _elbo_and_grads(layout, z, means, log_stds, eps)
        if not np.isfinite(elbo) or not np.all(np.isfinite(g_m)) or not np.all(np.isfinite(g_ls)):
            raise FitFailure(f"non-finite ELBO or gradient at iteration {it}", trace)
        trace.append((it, elbo))

        g = np.concatenate([g_m, g_ls])
        m1 = beta1 * m1 + (1 - beta1) * g
        m2 = beta2 * m2 + (1 - beta2) * g**2
        m1_hat = m1 / (1 - beta1**it)
        m2_hat = m2 / (1 - beta2**it)
        step = config.step_size * m1_hat / (np.sqrt(m2_hat) + adam_eps)
        means = means + step[:d]
        log_stds = log_stds + step[d:]
        tail.append(np.concatenate([means, log_stds]))

        if it % config.window == 0:
            window_mean = float(np.mean([v for _, v in trace[-config.window :]]))
            if prev_window_mean is not None:
                denom = max(abs(prev_window_mean), 1.0)
                if abs(window_mean - prev_window_mean) / denom < config.tolerance:
                    break
            prev_window_mean = window_mean

    # tail iterate averaging smooths stochastic-gradient jitter
    avg = np.mean(tail, axis=0) if tail else np.concatenate([means, log_stds])
    return PosteriorApprox(
        means=avg[:d],
        log_stds=avg[d:],
        index_map=list(layout.index_map),
        elbo_trace=trace,
        variant=spec.variant,
        constrained=spec.constrained,
        config=config,
    )


def elbo_estimate(
    q: PosteriorApprox, spec: ModelSpec, data: PredictionSet, mc_samples: int, seed: int
) -> tuple[float, float]:
    """Monte Carlo ELBO estimate and its standard error."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    layout = ParamLayout(spec)
    z = scores_for_design(data, spec)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((mc_samples, layout.dim))
    vals = elbo_value(layout, z, q.means, q.log_stds, eps)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise FitFailure(f"non-finite log joint for MC sample {bad}")
    se = float(vals.std(ddof=1) / np.sqrt(mc_samples)) if mc_samples > 1 else float("inf")
    return float(vals.mean()), se


def compare_models(
    candidates: list[tuple[ModelSpec, PosteriorApprox]],
    data: PredictionSet,
    mc_samples: int = 1000,
    seed: int = 0,
) -> list[dict]:
    """Rank fitted variants by ELBO (a lower bound on the marginal likelihood)."""
    rows = []
    for spec, post in candidates:
        if post is None:
            raise FitFailure("unfitted candidate passed to compare_models")
        est, se = elbo_estimate(post, spec, data, mc_samples, seed)
        rows.append({"variant": spec.variant, "elbo": est, "se": se})
    rows.sort(key=lambda r: r["elbo"], reverse=True)
    for rank, row in enumerate(rows):
        row["rank"] = rank
    return rows
