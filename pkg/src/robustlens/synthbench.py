"""Synthetic phantoms and end-to-end recovery experiments.

Phantoms stand in for the two lesion archetypes: speck clusters concentrate
spectral energy at high spatial frequency, soft blobs at low frequency.
Recovery experiments close the loop sample_dataset -> fit_advi -> gamma
summaries against known ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .advi import AdviConfig, PosteriorApprox, fit_advi
from .analysis import gamma_effect_summary
from .data import BreastCase
from .freqfilter import GrayImage
from .model import (
    LatentParams,
    ModelSpec,
    ParamLayout,
    dense_design,
    sample_dataset,
    sparse_reader_design,
)


class PhantomError(Exception):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    kind: str  # "speck_cluster" | "soft_blob" | "mixed"
    count: int = 12
    size_px: int = 2
    contrast: float = 1000.0
    background_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("speck_cluster", "soft_blob", "mixed"):
            raise PhantomError(f"unknown phantom kind {self.kind!r}")
        if self.size_px < 1:
            raise PhantomError("phantom size must be >= 1 px")
        if self.contrast <= 0:
            raise PhantomError("contrast must be > 0")


def _background(h: int, w: int, seed: int) -> np.ndarray:
    """Smoothed white noise, so phantom spectra dominate the high band."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((h, w))
    spectrum = np.fft.fftshift(np.fft.fft2(noise))
    cy, cx = h // 2, w // 2
    u = np.arange(h) - cy
    v = np.arange(w) - cx
    d2 = (u[:, None] / h) ** 2 + (v[None, :] / w) ** 2
    smooth = np.fft.ifft2(np.fft.ifftshift(spectrum * np.exp(-d2 / (2 * 0.02**2)))).real
    smooth = (smooth - smooth.min()) / max(np.ptp(smooth), 1e-12)
    return 20000.0 + 5000.0 * smooth


def _stamp_blob(img: np.ndarray, cy: int, cx: int, radius: float, amplitude: float) -> None:
    h, w = img.shape
    y = np.arange(h) - cy
    x = np.arange(w) - cx
    img += amplitude * np.exp(-(y[:, None] ** 2 + x[None, :] ** 2) / (2 * radius**2))


def synth_lesion_image(
    spec: PhantomSpec, height: int, width: int, mm_per_pixel: float, seed: int
) -> GrayImage:
    """Deterministic phantom image for filter validation."""
    if spec.size_px >= min(height, width):
        raise PhantomError("phantom larger than image")
    img = _background(height, width, spec.background_seed)
    rng = np.random.default_rng(seed)
    kinds = []
    if spec.kind in ("speck_cluster", "mixed"):
        kinds.append("speck")
    if spec.kind in ("soft_blob", "mixed"):
        kinds.append("blob")
    margin = max(spec.size_px * 10, 16)
    for i in range(spec.count):
        cy = int(rng.integers(margin, height - margin))
        cx = int(rng.integers(margin, width - margin))
        kind = kinds[i % len(kinds)]
        if kind == "speck":
            half = spec.size_px
            img[cy - half : cy + half, cx - half : cx + half] += spec.contrast
        else:
            _stamp_blob(img, cy, cx, radius=spec.size_px * 8.0, amplitude=spec.contrast)
    return GrayImage(img, mm_per_pixel)


# ---------------------------------------------------------------------------
# Recovery experiments


@dataclass
class RecoveryConfig:
    n_readers: int = 10
    n_cases: int = 200
    n_severities: int = 9
    n_subgroups: int = 2
    design: str = "dense"  # "dense" | "sparse"
    variant: str = "full"
    gamma_scale: float = 1.0
    seed: int = 0
    advi: AdviConfig = field(default_factory=lambda: AdviConfig(mc_samples=5, max_iters=6000))

    def to_json_dict(self) -> dict:
        d = self.__dict__.copy()
        d["advi"] = self.advi.to_json_dict()
        return d


def true_params_from_prior(spec: ModelSpec, seed: int, gamma_scale: float = 1.0) -> LatentParams:
    """Ground truth drawn from the prior, respecting the constrained variant."""
    rng = np.random.default_rng(seed)
    p = LatentParams(
        b=rng.standard_normal(spec.n_subgroups),
        mu=rng.standard_normal(spec.n_cases),
        gamma=gamma_scale * rng.standard_normal((spec.n_severities, spec.n_subgroups)),
        nu=rng.standard_normal((spec.n_readers, spec.n_subgroups)),
    )
    if spec.constrained:
        p.gamma[0, :] = 0.0
        p.nu -= p.nu.mean(axis=0, keepdims=True)
    return p


def make_recovery_spec(config: RecoveryConfig) -> ModelSpec:
    if config.design == "dense":
        design = dense_design(config.n_readers, config.n_severities, config.n_cases)
    elif config.design == "sparse":
        design = sparse_reader_design(
            config.n_readers, config.n_severities, config.n_cases, seed=config.seed + 1
        )
    else:
        raise ValueError(f"unknown design {config.design!r}")
    rng = np.random.default_rng(config.seed + 2)
    subgroup_of = rng.integers(0, config.n_subgroups, size=config.n_cases)
    return ModelSpec(
        n_severities=config.n_severities,
        n_subgroups=config.n_subgroups,
        n_readers=config.n_readers,
        n_cases=config.n_cases,
        subgroup_of=subgroup_of,
        design=design,
        variant=config.variant,
    )


@dataclass
class RecoveryReport:
    config: RecoveryConfig
    coverage: float  # fraction of free latents with truth within 2 posterior stds
    gamma_sign_recovery: float
    gamma_prob_positive: list[float]
    elbo_final: float

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "coverage": self.coverage,
            "gamma_sign_recovery": self.gamma_sign_recovery,
            "gamma_prob_positive": self.gamma_prob_positive,
            "elbo_final": self.elbo_final,
        }


def recovery_experiment(config: RecoveryConfig) -> tuple[RecoveryReport, PosteriorApprox]:
    """Simulate from known latents, fit, and score recovery."""
    spec = make_recovery_spec(config)
    truth = true_params_from_prior(spec, seed=config.seed + 3, gamma_scale=config.gamma_scale)
    data = sample_dataset(truth, spec, seed=config.seed + 4)
    post = fit_advi(spec, data, config.advi)

    layout = ParamLayout(spec)
    truth_flat = layout.pack(truth)
    within = np.abs(truth_flat - post.means) <= 2.0 * post.stds
    coverage = float(within.mean())

    signs_ok = 0
    total = 0
    probs = []
    for s in range(1, spec.n_severities):
        for g in range(spec.n_subgroups):
            entry = gamma_effect_summary(post, s, g)
            probs.append(entry.prob_positive)
            if np.sign(entry.mean) == np.sign(truth.gamma[s, g]) or truth.gamma[s, g] == 0:
                signs_ok += 1
            total += 1
    report = RecoveryReport(
        config=config,
        coverage=coverage,
        gamma_sign_recovery=signs_ok / total if total else 1.0,
        gamma_prob_positive=probs,
        elbo_final=post.elbo_trace[-1][1] if post.elbo_trace else float("nan"),
    )
    return report, post


def synthetic_cases(spec: ModelSpec, malignant_fraction: float, seed: int) -> list[BreastCase]:
    """Cases whose taxonomy matches the spec's subgroup indices 0/1.

    Subgroup 0 maps to microcalcifications, subgroup 1 to soft tissue; a
    seeded fraction of each subgroup is marked malignant, the rest benign.
    """
    rng = np.random.default_rng(seed)
    tags = {0: frozenset({"microcalcification"}), 1: frozenset({"mass"})}
    cases = []
    for n, cid in enumerate(spec.case_ids):
        g = int(spec.subgroup_of[n])
        label = "malignant" if rng.random() < malignant_fraction else "benign"
        cases.append(
            BreastCase(
                case_id=cid,
                exam_id=f"exam{n}",
                side="left",
                label=label,
                lesion_tags=tags.get(g, frozenset({"mass"})),
            )
        )
    return cases
