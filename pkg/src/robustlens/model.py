"""Four-latent-variable Bernoulli model of reader predictions.

Each observed score for (reader r, severity s, case n) is modeled as
Bernoulli(sigmoid(b_g + mu_n + gamma_{s,g} + nu_{r,g})) with g the case's
subgroup. Soft scores enter the likelihood directly as
z*log(theta) + (1-z)*log(1-theta). Every latent coordinate carries a
standard-normal prior.

Nested variants of increasing complexity:
  bias_only     b_g
  case          b_g + mu_n
  filter        b_g + mu_n + gamma_{s,g}
  reader_shared b_g + mu_n + gamma_{s,g} + nu_r          (shared across g)
  full          b_g + mu_n + gamma_{s,g} + nu_{r,g}

With constrained=True (the default), gamma at severity 0 is fixed to 0
(severity 0 is the unperturbed reference) and nu is centered to mean zero
within each subgroup, which keeps the gamma posterior directly readable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, _sigmoid
from .data import BreastCase, PredictionRecord, PredictionSet, Subgroup

VARIANTS = ("bias_only", "case", "filter", "reader_shared", "full")

LOG_2PI = float(np.log(2.0 * np.pi))
THETA_EPS = 1e-12  # clamp inside logs


class ModelError(Exception):
    pass


@dataclass
class ModelSpec:
    n_severities: int
    n_subgroups: int
    n_readers: int
    n_cases: int
    subgroup_of: np.ndarray  # (N,) int
    design: np.ndarray  # (M, 3) int rows (r, s, n)
    variant: str = "full"
    constrained: bool = True
    reader_ids: list[str] = field(default_factory=list)
    case_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.subgroup_of = np.asarray(self.subgroup_of, dtype=np.intp)
        self.design = np.asarray(self.design, dtype=np.intp).reshape(-1, 3)
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if self.subgroup_of.shape != (self.n_cases,):
            raise ModelError("subgroup_of must have one entry per case")
        if self.subgroup_of.size and not (
            self.subgroup_of.min() >= 0 and self.subgroup_of.max() < self.n_subgroups
        ):
            raise ModelError("subgroup index out of range")
        if self.design.size:
            r, s, n = self.design.T
            if r.min() < 0 or r.max() >= self.n_readers:
                raise ModelError("reader index out of range in design")
            if s.min() < 0 or s.max() >= self.n_severities:
                raise ModelError("severity index out of range in design")
            if n.min() < 0 or n.max() >= self.n_cases:
                raise ModelError("case index out of range in design")
        if not self.reader_ids:
            self.reader_ids = [f"reader{r}" for r in range(self.n_readers)]
        if not self.case_ids:
            self.case_ids = [f"case{n}" for n in range(self.n_cases)]

    def to_json_dict(self) -> dict:
        return {
            "n_severities": self.n_severities,
            "n_subgroups": self.n_subgroups,
            "n_readers": self.n_readers,
            "n_cases": self.n_cases,
            "subgroup_of": self.subgroup_of.tolist(),
            "design": self.design.tolist(),
            "variant": self.variant,
            "constrained": self.constrained,
            "reader_ids": self.reader_ids,
            "case_ids": self.case_ids,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            n_severities=d["n_severities"],
            n_subgroups=d["n_subgroups"],
            n_readers=d["n_readers"],
            n_cases=d["n_cases"],
            subgroup_of=np.asarray(d["subgroup_of"]),
            design=np.asarray(d["design"]).reshape(-1, 3),
            variant=d["variant"],
            constrained=d["constrained"],
            reader_ids=list(d["reader_ids"]),
            case_ids=list(d["case_ids"]),
        )


@dataclass
class LatentParams:
    b: np.ndarray  # (G,)
    mu: np.ndarray  # (N,)
    gamma: np.ndarray  # (S, G)
    nu: np.ndarray  # (R, G)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.nu = np.asarray(self.nu, dtype=np.float64)
        for a in (self.b, self.mu, self.gamma, self.nu):
            if not np.all(np.isfinite(a)):
                raise ModelError("latent values must be finite")

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "LatentParams":
        return cls(
            b=np.zeros(spec.n_subgroups),
            mu=np.zeros(spec.n_cases),
            gamma=np.zeros((spec.n_severities, spec.n_subgroups)),
            nu=np.zeros((spec.n_readers, spec.n_subgroups)),
        )


def effective_params(params: LatentParams, spec: ModelSpec) -> LatentParams:
    """Apply variant masking and identifiability constraints."""
    b = params.b.copy()
    mu = params.mu.copy()
    gamma = params.gamma.copy()
    nu = params.nu.copy()
    if spec.variant == "bias_only":
        mu[:] = 0.0
    if spec.variant in ("bias_only", "case"):
        gamma[:] = 0.0
    if spec.variant in ("bias_only", "case", "filter"):
        nu[:] = 0.0
    if spec.variant == "reader_shared":
        # one idiosyncrasy per reader, copied across subgroups
        nu = np.tile(nu[:, :1], (1, spec.n_subgroups))
    if spec.constrained:
        if spec.variant in ("filter", "reader_shared", "full"):
            gamma[0, :] = 0.0
        if spec.variant in ("reader_shared", "full") and spec.n_readers > 0:
            nu = nu - nu.mean(axis=0, keepdims=True)
    return LatentParams(b=b, mu=mu, gamma=gamma, nu=nu)


def linear_predictor(params: LatentParams, spec: ModelSpec, r, s, n) -> np.ndarray:
    eff = effective_params(params, spec)
    g = spec.subgroup_of[n]
    return eff.b[g] + eff.mu[n] + eff.gamma[s, g] + eff.nu[r, g]


def predict_prob(params: LatentParams, spec: ModelSpec, r, s, n) -> np.ndarray:
    """P(positive prediction) for reader r, severity s, case n."""
    return _sigmoid(np.asarray(linear_predictor(params, spec, r, s, n), dtype=np.float64))


def _observed_arrays(data: PredictionSet, spec: ModelSpec):
    reader_index = {rid: i for i, rid in enumerate(spec.reader_ids)}
    case_index = {cid: i for i, cid in enumerate(spec.case_ids)}
    r = np.array([reader_index[rec.reader_id] for rec in data.records], dtype=np.intp)
    s = np.array([rec.severity_index for rec in data.records], dtype=np.intp)
    n = np.array([case_index[rec.case_id] for rec in data.records], dtype=np.intp)
    z = np.array([rec.score for rec in data.records], dtype=np.float64)
    return r, s, n, z


def scores_for_design(data: PredictionSet, spec: ModelSpec) -> np.ndarray:
    """Scores ordered exactly as spec.design rows; every row must be observed."""
    r, s, n, z = _observed_arrays(data, spec)
    lookup = {(int(ri), int(si), int(ni)): zi for ri, si, ni, zi in zip(r, s, n, z)}
    if len(lookup) != len(data.records):
        raise ModelError("duplicate (reader, severity, case) triples in data")
    out = np.empty(spec.design.shape[0])
    for i, (ri, si, ni) in enumerate(spec.design):
        key = (int(ri), int(si), int(ni))
        if key not in lookup:
            raise ModelError(f"design triple {key} has no observed score")
        out[i] = lookup[key]
    if len(lookup) != spec.design.shape[0]:
        raise ModelError("data contains records outside the spec's design")
    return out


def log_joint(params: LatentParams, data: PredictionSet, spec: ModelSpec) -> float:
    """Log joint density: soft-label Bernoulli likelihood plus N(0,1) priors.

    The prior runs over the free coordinates of the chosen variant.
    """
    r, s, n, z = _observed_arrays(data, spec)
    if z.size and (z.min() < 0.0 or z.max() > 1.0):
        raise ModelError("scores must lie in [0,1]")
    eta = linear_predictor(params, spec, r, s, n)
    # z*log(sigma(eta)) + (1-z)*log(1-sigma(eta)), stable form
    ll = float(np.sum(-z * np.logaddexp(0.0, -eta) - (1.0 - z) * np.logaddexp(0.0, eta)))
    layout = ParamLayout(spec)
    theta = layout.pack(params)
    prior = float(-0.5 * np.sum(theta**2) - 0.5 * theta.size * LOG_2PI)
    return ll + prior


def sample_dataset(
    params: LatentParams,
    spec: ModelSpec,
    seed: int,
    reader_kind: str = "human",
    cases: list[BreastCase] | None = None,
) -> PredictionSet:
    """Draw one binary prediction per design triple from the model."""
    rng = np.random.default_rng(seed)
    r, s, n = spec.design.T
    p = predict_prob(params, spec, r, s, n)
    y = (rng.random(p.shape) < p).astype(np.float64)
    if cases is None:
        cases = default_cases(spec)
    records = [
        PredictionRecord(
            reader_id=spec.reader_ids[int(ri)],
            reader_kind=reader_kind,
            case_id=spec.case_ids[int(ni)],
            severity_index=int(si),
            score=float(yi),
        )
        for ri, si, ni, yi in zip(r, s, n, y)
    ]
    return PredictionSet(records=records, cases=cases, n_severities=spec.n_severities)


def default_cases(spec: ModelSpec) -> list[BreastCase]:
    """Placeholder nonbiopsied cases for purely synthetic prediction sets."""
    return [
        BreastCase(case_id=cid, exam_id=f"exam{i}", side="left", label="nonbiopsied")
        for i, cid in enumerate(spec.case_ids)
    ]


# ---------------------------------------------------------------------------
# Flat parameterization and differentiable log joint (used by ADVI)


class ParamLayout:
    """Flat packing of the variant's free latent coordinates.

    Coordinates fixed by constraints (gamma at severity 0) are not free; in
    the gather tables they point at a structurally-zero padding column.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        index_map: list[tuple[str, tuple[int, ...]]] = []
        self._coord: dict[tuple[str, tuple[int, ...]], int] = {}

        def register(name, idx):
            self._coord[(name, idx)] = len(index_map)
            index_map.append((name, idx))

        G, N, S, R = spec.n_subgroups, spec.n_cases, spec.n_severities, spec.n_readers
        for g in range(G):
            register("b", (g,))
        if spec.variant != "bias_only":
            for n in range(N):
                register("mu", (n,))
        self.gamma_s0_free = not spec.constrained
        if spec.variant in ("filter", "reader_shared", "full"):
            s_start = 0 if self.gamma_s0_free else 1
            for s in range(s_start, S):
                for g in range(G):
                    register("gamma", (s, g))
        if spec.variant == "reader_shared":
            for r in range(R):
                register("nu", (r,))
        elif spec.variant == "full":
            for r in range(R):
                for g in range(G):
                    register("nu", (r, g))
        self.index_map = index_map
        self.dim = len(index_map)
        self.pad = self.dim  # index of the zero padding column

        self._nu_span = self._span("nu")
        self._build_gather_tables()

    def _span(self, name) -> tuple[int, int]:
        idxs = [i for i, (nm, _) in enumerate(self.index_map) if nm == name]
        if not idxs:
            return (0, 0)
        return (min(idxs), max(idxs) + 1)

    def coord_of(self, name: str, idx: tuple[int, ...]) -> int | None:
        return self._coord.get((name, idx))

    def pack(self, params: LatentParams) -> np.ndarray:
        eff_src = {"b": params.b, "mu": params.mu, "gamma": params.gamma, "nu": params.nu}
        theta = np.empty(self.dim)
        for i, (name, idx) in enumerate(self.index_map):
            if name == "nu" and self.spec.variant == "reader_shared":
                theta[i] = params.nu[idx[0], 0]
            else:
                theta[i] = eff_src[name][idx]
        return theta

    def unpack(self, theta: np.ndarray) -> LatentParams:
        spec = self.spec
        p = LatentParams.zeros(spec)
        for i, (name, idx) in enumerate(self.index_map):
            if name == "b":
                p.b[idx] = theta[i]
            elif name == "mu":
                p.mu[idx] = theta[i]
            elif name == "gamma":
                p.gamma[idx] = theta[i]
            elif name == "nu":
                if spec.variant == "reader_shared":
                    p.nu[idx[0], :] = theta[i]
                else:
                    p.nu[idx] = theta[i]
        return p

    def _build_gather_tables(self):
        spec = self.spec
        r, s, n = spec.design.T
        g = spec.subgroup_of[n]
        pad = self.pad

        self.b_idx = np.array([self._coord[("b", (gi,))] for gi in g.tolist()], dtype=np.intp)
        if spec.variant != "bias_only":
            self.mu_idx = np.array(
                [self._coord[("mu", (ni,))] for ni in n.tolist()], dtype=np.intp
            )
        else:
            self.mu_idx = np.full(len(n), pad, dtype=np.intp)
        if spec.variant in ("filter", "reader_shared", "full"):
            self.gamma_idx = np.array(
                [self._coord.get(("gamma", (si, gi)), pad) for si, gi in zip(s.tolist(), g.tolist())],
                dtype=np.intp,
            )
        else:
            self.gamma_idx = np.full(len(n), pad, dtype=np.intp)
        if spec.variant == "reader_shared":
            nu_local = np.array(
                [self._coord[("nu", (ri,))] - self._nu_span[0] for ri in r.tolist()],
                dtype=np.intp,
            )
        elif spec.variant == "full":
            nu_local = np.array(
                [self._coord[("nu", (ri, gi))] - self._nu_span[0] for ri, gi in zip(r.tolist(), g.tolist())],
                dtype=np.intp,
            )
        else:
            nu_local = None
        self.nu_local_idx = nu_local
        self.nu_centering = self._centering_matrix() if nu_local is not None else None

    def _centering_matrix(self) -> np.ndarray | None:
        """Projection removing the per-subgroup reader mean from the nu block."""
        spec = self.spec
        if not spec.constrained:
            return None
        lo, hi = self._nu_span
        k = hi - lo
        if k == 0:
            return None
        if spec.variant == "reader_shared":
            # one group: center across all readers
            return np.eye(k) - np.full((k, k), 1.0 / k)
        # full: coords ordered (r, g); same-g coords share a mean
        P = np.eye(k)
        G, R = spec.n_subgroups, spec.n_readers
        for g in range(G):
            cols = np.arange(g, k, G)
            P[np.ix_(cols, cols)] -= 1.0 / R
        return P

    # -- differentiable pieces --------------------------------------------

    def eta_node(self, theta: Node) -> Node:
        """Linear predictor per observation; theta has shape (K, dim)."""
        K = theta.value.shape[0]
        pad_col = Node(np.zeros((K, 1)))
        theta_pad = _concat_cols(theta, pad_col)
        eta = theta_pad.gather_cols(self.b_idx) + theta_pad.gather_cols(self.mu_idx)
        eta = eta + theta_pad.gather_cols(self.gamma_idx)
        if self.nu_local_idx is not None:
            lo, hi = self._nu_span
            nu_block = theta.slice_cols(lo, hi)
            if self.nu_centering is not None:
                nu_block = nu_block.matmul_const(self.nu_centering)
            eta = eta + nu_block.gather_cols(self.nu_local_idx)
        return eta

    def log_joint_node(self, theta: Node, z: np.ndarray) -> Node:
        """Per-sample log joint, shape (K,), for theta of shape (K, dim)."""
        eta = self.eta_node(theta)
        # z * log(sigma(eta)) + (1-z) * log(1 - sigma(eta))
        ll = ((-eta).softplus().mul_const(-z) + eta.softplus().mul_const(-(1.0 - z))).sum(axis=1)
        prior = theta.square().sum(axis=1).mul_const(-0.5).add_const(
            -0.5 * self.dim * LOG_2PI
        )
        return ll + prior


def _concat_cols(a: Node, b: Node) -> Node:
    out = Node(np.concatenate([a.value, b.value], axis=1), (a, b))
    na = a.value.shape[1]

    def backward(g):
        from .autodiff import _accum

        _accum(a, g[:, :na])
        _accum(b, g[:, na:])

    out._backward = backward
    return out


def spec_from_prediction_set(
    preds: PredictionSet,
    variant: str = "full",
    constrained: bool = True,
    subgroups: list[Subgroup] | None = None,
) -> ModelSpec:
    """Build a ModelSpec whose design is exactly the observed triples."""
    reader_ids = preds.readers
    case_ids = [c.case_id for c in preds.cases]
    if subgroups is None:
        subgroups = list(Subgroup)
    sub_index = {sg: i for i, sg in enumerate(subgroups)}
    subgroup_of = np.array([sub_index[c.subgroup] for c in preds.cases], dtype=np.intp)
    r_index = {rid: i for i, rid in enumerate(reader_ids)}
    c_index = {cid: i for i, cid in enumerate(case_ids)}
    design = np.array(
        [[r_index[rec.reader_id], rec.severity_index, c_index[rec.case_id]] for rec in preds.records],
        dtype=np.intp,
    ).reshape(-1, 3)
    return ModelSpec(
        n_severities=preds.n_severities,
        n_subgroups=len(subgroups),
        n_readers=len(reader_ids),
        n_cases=len(case_ids),
        subgroup_of=subgroup_of,
        design=design,
        variant=variant,
        constrained=constrained,
        reader_ids=reader_ids,
        case_ids=case_ids,
    )


def dense_design(n_readers: int, n_severities: int, n_cases: int) -> np.ndarray:
    r, s, n = np.meshgrid(
        np.arange(n_readers), np.arange(n_severities), np.arange(n_cases), indexing="ij"
    )
    return np.stack([r.ravel(), s.ravel(), n.ravel()], axis=1)


def sparse_reader_design(
    n_readers: int, n_severities: int, n_cases: int, seed: int
) -> np.ndarray:
    """Each reader sees each case at exactly one uniformly drawn severity."""
    rng = np.random.default_rng(seed)
    rows = []
    for r in range(n_readers):
        s = rng.integers(0, n_severities, size=n_cases)
        rows.append(np.stack([np.full(n_cases, r), s, np.arange(n_cases)], axis=1))
    return np.concatenate(rows, axis=0)
