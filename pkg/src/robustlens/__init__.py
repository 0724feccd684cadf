"""Toolkit for comparing human and machine readers via subgroup-specific
perturbation robustness: frequency-domain filtering, reader-study protocols,
calibration, hierarchical Bernoulli modeling with variational inference, and
KS-based separability analysis."""

__version__ = "0.1.0"
