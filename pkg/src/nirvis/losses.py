"""Training objectives with analytic gradients.

Margin softmax identity loss, maximum mean discrepancy (MMD), pairwise MSE
over index-paired cross-modality features, identity-centroid MMD, and the
P x K two-modality batch sampler. Everything is float64 and returns
(value, gradients) pairs; gradients are with respect to the already
unit-normalized feature vectors (the trainer owns the normalization
Jacobian).

Kernel bandwidths resolved by the median heuristic are computed from the
input data first and then treated as constants during differentiation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureDataset
from .util import rng_from

__all__ = [
    "DegenerateBandwidthWarning",
    "FeatureBatch",
    "KernelSpec",
    "LossOutput",
    "MarginConfig",
    "SamplingWarning",
    "id_loss",
    "idmmd_loss",
    "median_heuristic",
    "mmd_loss",
    "pmse_loss",
    "rbf_kernel",
    "sample_batch",
    "total_loss",
]

_FLOOR = 1e-12  # values in [-floor, 0) report as 0


class DegenerateBandwidthWarning(UserWarning):
    pass


class SamplingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureBatch:
    """P identities x K images per modality of unit-norm features."""

    nir: np.ndarray  # (P, K, dim)
    vis: np.ndarray  # (P, K, dim)
    identity_ids: np.ndarray  # (P,)

    def __post_init__(self) -> None:
        nir = np.asarray(self.nir, dtype=np.float64)
        vis = np.asarray(self.vis, dtype=np.float64)
        ids = np.asarray(self.identity_ids)
        if nir.ndim != 3 or vis.shape != nir.shape:
            raise ValueError(
                f"nir and vis must share shape (P, K, dim), got {nir.shape} and {vis.shape}"
            )
        if len(ids) != nir.shape[0]:
            raise ValueError(f"need {nir.shape[0]} identity ids, got {len(ids)}")
        if len(set(map(str, ids))) != len(ids):
            raise ValueError("identity_ids must be distinct")
        for name, arr in (("nir", nir), ("vis", vis)):
            norms = np.linalg.norm(arr, axis=-1)
            if np.abs(norms - 1.0).max() > 1e-5:
                raise ValueError(f"{name} features must be unit-norm within 1e-5")
        object.__setattr__(self, "nir", nir)
        object.__setattr__(self, "vis", vis)
        object.__setattr__(self, "identity_ids", ids)

    @property
    def p(self) -> int:
        return self.nir.shape[0]

    @property
    def k(self) -> int:
        return self.nir.shape[1]

    @property
    def dim(self) -> int:
        return self.nir.shape[2]


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel family: explicit bandwidths, or median heuristic.

    ``bandwidths = None`` resolves the bandwidth from the data at call time
    as median(pairwise distances) x each entry of ``median_scales``.
    """

    kind: str = "rbf"
    bandwidths: tuple[float, ...] | None = None
    median_scales: tuple[float, ...] = (1.0,)

    def __post_init__(self) -> None:
        if self.kind != "rbf":
            raise ValueError(f"unsupported kernel kind {self.kind!r}")
        if self.bandwidths is not None:
            bws = tuple(float(b) for b in self.bandwidths)
            if not bws or min(bws) <= 0:
                raise ValueError(f"bandwidths must be positive, got {self.bandwidths}")
            object.__setattr__(self, "bandwidths", bws)
        scales = tuple(float(s) for s in self.median_scales)
        if not scales or min(scales) <= 0:
            raise ValueError(f"median_scales must be positive, got {self.median_scales}")
        object.__setattr__(self, "median_scales", scales)

    def resolve(self, pooled: np.ndarray) -> tuple[float, ...]:
        """Concrete bandwidths for this call, given the pooled feature rows."""
        if self.bandwidths is not None:
            return self.bandwidths
        med = median_heuristic(pooled)
        if med == 0.0:
            warnings.warn(
                "median heuristic degenerate (all points identical); using 1.0",
                DegenerateBandwidthWarning,
            )
            med = 1.0
        return tuple(s * med for s in self.median_scales)


@dataclass(frozen=True)
class MarginConfig:
    """Margin softmax knobs: cos(m1*theta + m2) - m3, scaled by s."""

    m1: float = 1.0
    m2: float = 0.5
    m3: float = 0.0
    s: float = 64.0

    def __post_init__(self) -> None:
        if self.s <= 0:
            raise ValueError(f"scale s must be > 0, got {self.s}")
        if self.m1 < 1.0:
            raise ValueError(f"m1 must be >= 1, got {self.m1}")
        if self.m2 < 0 or self.m3 < 0:
            raise ValueError("m2 and m3 must be >= 0")


@dataclass(frozen=True)
class LossOutput:
    """Scalar objective plus gradient arrays keyed by input name."""

    value: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError(f"loss value is not finite: {self.value}")
        for name, g in self.gradients.items():
            if not np.isfinite(g).all():
                raise ValueError(f"gradient {name!r} contains non-finite values")


def _floor_value(v: float) -> float:
    return 0.0 if -_FLOOR <= v < 0.0 else v


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def rbf_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float) -> float:
    """exp(-||x - y||^2 / (2 b^2)) for a single pair of vectors."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-float(d @ d) / (2.0 * bandwidth * bandwidth)))


def median_heuristic(features: np.ndarray) -> float:
    """Median of pairwise Euclidean distances over all distinct pairs."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or len(feats) < 2:
        raise ValueError("median heuristic needs at least 2 vectors")
    diff = feats[:, None, :] - feats[None, :, :]
    dists = np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), 0.0))
    iu = np.triu_indices(len(feats), k=1)
    return float(np.median(dists[iu]))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _kernel_and_scaled(sq: np.ndarray, bandwidths: tuple[float, ...]):
    """Mean RBF kernel matrix over bandwidths, and the mean of k_b / b^2.

    The scaled matrix is the chain-rule factor of d k / d x =
    -(x - y) * mean_b k_b / b^2.
    """
    k = np.zeros_like(sq)
    c = np.zeros_like(sq)
    for b in bandwidths:
        kb = np.exp(-sq / (2.0 * b * b))
        k += kb
        c += kb / (b * b)
    return k / len(bandwidths), c / len(bandwidths)


# ---------------------------------------------------------------------------
# distribution alignment losses
# ---------------------------------------------------------------------------

def mmd_loss(x_nir: np.ndarray, x_vis: np.ndarray, kern: KernelSpec = KernelSpec()) -> LossOutput:
    """Biased-statistic MMD^2 between the two feature sets.

    value = mean k(nir, nir) + mean k(vis, vis) - 2 mean k(nir, vis), with
    analytic gradients for every row of both inputs.
    """
    xn = np.atleast_2d(np.asarray(x_nir, dtype=np.float64))
    xv = np.atleast_2d(np.asarray(x_vis, dtype=np.float64))
    if len(xn) == 0 or len(xv) == 0:
        raise ValueError("mmd_loss needs at least one vector per set")
    if xn.shape[1] != xv.shape[1]:
        raise ValueError(f"dim mismatch: {xn.shape[1]} vs {xv.shape[1]}")
    m, n = len(xn), len(xv)
    bws = kern.resolve(np.concatenate([xn, xv], axis=0))

    k_nn, c_nn = _kernel_and_scaled(_sq_dists(xn, xn), bws)
    k_vv, c_vv = _kernel_and_scaled(_sq_dists(xv, xv), bws)
    k_nv, c_nv = _kernel_and_scaled(_sq_dists(xn, xv), bws)

    value = k_nn.mean() + k_vv.mean() - 2.0 * k_nv.mean()

    # d k_b(x, y)/dx = -(x - y) k_b / b^2; sum the three terms per row
    grad_n = (
        -(2.0 / (m * m)) * (c_nn.sum(axis=1)[:, None] * xn - c_nn @ xn)
        + (2.0 / (m * n)) * (c_nv.sum(axis=1)[:, None] * xn - c_nv @ xv)
    )
    grad_v = (
        -(2.0 / (n * n)) * (c_vv.sum(axis=1)[:, None] * xv - c_vv @ xv)
        + (2.0 / (m * n)) * (c_nv.sum(axis=0)[:, None] * xv - c_nv.T @ xn)
    )
    return LossOutput(_floor_value(float(value)), {"x_nir": grad_n, "x_vis": grad_v})


def pmse_loss(batch: FeatureBatch) -> LossOutput:
    """Mean squared distance between index-paired NIR/VIS features."""
    diff = batch.nir - batch.vis
    pk = batch.p * batch.k
    value = float(np.sum(diff * diff) / pk)
    grad = 2.0 * diff / pk
    return LossOutput(value, {"nir": grad, "vis": -grad})


def idmmd_loss(batch: FeatureBatch, kern: KernelSpec = KernelSpec()) -> LossOutput:
    """RKHS distance between same-identity NIR and VIS centroids.

    Per identity p: k(c_n, c_n) + k(c_v, c_v) - 2 k(c_n, c_v) over the
    per-identity centroids; averaged over identities. Gradients chain
    through the centroid means.
    """
    c_n = batch.nir.mean(axis=1)  # (P, dim)
    c_v = batch.vis.mean(axis=1)
    p, k = batch.p, batch.k
    bws = kern.resolve(np.concatenate([c_n, c_v], axis=0))

    d = c_n - c_v
    sq = np.sum(d * d, axis=-1)  # (P,)
    k_nv = np.zeros_like(sq)
    c_nv = np.zeros_like(sq)
    for b in bws:
        kb = np.exp(-sq / (2.0 * b * b))
        k_nv += kb
        c_nv += kb / (b * b)
    k_nv /= len(bws)
    c_nv /= len(bws)

    # stationary kernel: k(x, x) = 1, so each term is 2 - 2 k(c_n, c_v)
    value = float(np.mean(2.0 - 2.0 * k_nv))

    grad_cn = (2.0 / p) * c_nv[:, None] * d  # (P, dim)
    grad_nir = np.repeat(grad_cn[:, None, :], k, axis=1) / k
    grad_vis = -grad_nir
    return LossOutput(_floor_value(value), {"nir": grad_nir, "vis": grad_vis})


# ---------------------------------------------------------------------------
# identity loss
# ---------------------------------------------------------------------------

_THETA_EPS = 1e-6


def id_loss(
    features: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    cfg: MarginConfig = MarginConfig(),
) -> LossOutput:
    """Margin-based softmax over cosine logits.

    Target-class logit: s (cos(m1 theta + m2) - m3); other classes:
    s cos(theta). theta is clamped so the margined angle stays in [0, pi].
    Log-sum-exp stabilized; gradients w.r.t. features and weight rows.
    """
    f = np.asarray(features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if f.ndim != 2 or w.ndim != 2 or f.shape[1] != w.shape[1]:
        raise ValueError(f"shape mismatch: features {f.shape}, weights {w.shape}")
    b, c = len(f), len(w)
    if labels.shape != (b,):
        raise ValueError(f"labels must be ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must be in [0, {c})")
    for name, arr in (("features", f), ("weights", w)):
        norms = np.linalg.norm(arr, axis=-1)
        if np.abs(norms - 1.0).max() > 1e-3:
            raise ValueError(f"{name} must be unit-norm (max deviation "
                             f"{np.abs(norms - 1.0).max():.2e})")

    cos = f @ w.T  # (B, C)
    z = cfg.s * cos
    rows = np.arange(b)
    cos_y = np.clip(cos[rows, labels], -1.0, 1.0)
    theta = np.arccos(cos_y)
    theta_max = min(np.pi - _THETA_EPS, (np.pi - cfg.m2) / cfg.m1)
    theta_c = np.clip(theta, _THETA_EPS, theta_max)
    margined = cfg.m1 * theta_c + cfg.m2
    z[rows, labels] = cfg.s * (np.cos(margined) - cfg.m3)

    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
    value = float(np.mean(lse - z[rows, labels]))

    # softmax minus one-hot, averaged over the batch
    probs = np.exp(z - zmax)
    probs /= probs.sum(axis=1, keepdims=True)
    dz = probs.copy()
    dz[rows, labels] -= 1.0
    dz /= b

    # chain from logits to cosines: s for non-targets; the margined branch
    # for targets (zero where the clamp was active)
    dcos = dz * cfg.s
    interior = (theta > _THETA_EPS) & (theta < theta_max)
    sin_theta = np.sqrt(np.maximum(1.0 - cos_y * cos_y, 1e-30))
    dz_dcos_y = np.where(
        interior, cfg.s * cfg.m1 * np.sin(margined) / sin_theta, 0.0
    )
    dcos[rows, labels] = dz[rows, labels] * dz_dcos_y

    grad_f = dcos @ w
    grad_w = dcos.T @ f
    return LossOutput(value, {"features": grad_f, "weights": grad_w})


def total_loss(
    batch: FeatureBatch,
    labels: np.ndarray,
    weights: np.ndarray,
    cfg: MarginConfig = MarginConfig(),
    kern: KernelSpec = KernelSpec(),
    lam: float = 100.0,
) -> LossOutput:
    """Combined objective id + lam * idmmd over one P x K batch.

    The identity loss sees all 2 P K features stacked NIR-first; ``labels``
    gives the class index per batch identity (length P).
    """
    p, k, dim = batch.p, batch.k, batch.dim
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (p,):
        raise ValueError(f"labels must be ({p},), got {labels.shape}")
    stacked = np.concatenate(
        [batch.nir.reshape(p * k, dim), batch.vis.reshape(p * k, dim)], axis=0
    )
    per_image = np.concatenate([np.repeat(labels, k), np.repeat(labels, k)])
    out_id = id_loss(stacked, per_image, weights, cfg)
    out_idmmd = idmmd_loss(batch, kern)

    gf = out_id.gradients["features"]
    grad_nir = gf[: p * k].reshape(p, k, dim) + lam * out_idmmd.gradients["nir"]
    grad_vis = gf[p * k :].reshape(p, k, dim) + lam * out_idmmd.gradients["vis"]
    return LossOutput(
        out_id.value + lam * out_idmmd.value,
        {
            "nir": grad_nir,
            "vis": grad_vis,
            "weights": out_id.gradients["weights"],
            "id_value": np.array(out_id.value),
            "idmmd_value": np.array(out_idmmd.value),
        },
    )


# ---------------------------------------------------------------------------
# batch sampling
# ---------------------------------------------------------------------------

def sample_batch(
    dataset: FeatureDataset, p: int = 32, k: int = 8, rng_seed: int = 0
) -> FeatureBatch:
    """Draw P identities x K images per modality, deterministically per seed.

    Falls back to sampling with replacement (with a warning) when the
    dataset is smaller than requested.
    """
    if dataset.n == 0:
        raise ValueError("empty dataset")
    ids = dataset.identities()
    rng = rng_from(rng_seed)
    if p > len(ids):
        warnings.warn(
            f"requested {p} identities but dataset has {len(ids)}; sampling with replacement",
            SamplingWarning,
        )
        chosen = [ids[i] for i in rng.integers(0, len(ids), size=p)]
    else:
        chosen = [ids[i] for i in rng.permutation(len(ids))[:p]]
    nir_rows, vis_rows = [], []
    for identity in chosen:
        per_mod = []
        for mod in ("NIR", "VIS"):
            feats = dataset.select(identity, mod)
            if len(feats) == 0:
                raise ValueError(f"identity {identity!r} has no {mod} features")
            if k > len(feats):
                warnings.warn(
                    f"identity {identity!r} has {len(feats)} {mod} features, "
                    f"need {k}; sampling with replacement",
                    SamplingWarning,
                )
                pick = rng.integers(0, len(feats), size=k)
            else:
                pick = rng.permutation(len(feats))[:k]
            per_mod.append(feats[pick])
        nir_rows.append(per_mod[0])
        vis_rows.append(per_mod[1])
    # duplicate identities (replacement case) must still get distinct tags
    tags = [f"{identity}#{i}" for i, identity in enumerate(chosen)]
    if len(set(chosen)) == len(chosen):
        tags = chosen
    return FeatureBatch(np.stack(nir_rows), np.stack(vis_rows), np.array(tags))
