"""Evaluation toolkit: similarity statistics, FID, verification and
identification rates, and the repeated identity-disjoint split protocol.

All similarities are cosine. Features arrive as a labeled two-modality
FeatureDataset; scores for verification pair every NIR feature with every
VIS feature (same identity = genuine, different = impostor).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FeatureDataset
from .util import rng_from

__all__ = [
    "GaussianStats",
    "MetricError",
    "MetricReport",
    "RocPoint",
    "compute_report",
    "fid",
    "gaussian_stats",
    "mean_instance_similarity",
    "mean_similarity",
    "rank1",
    "roc_vr_at_far",
    "tenfold_protocol",
    "write_report",
]


class MetricError(ValueError):
    pass


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)


# ---------------------------------------------------------------------------
# similarity statistics
# ---------------------------------------------------------------------------

def mean_similarity(ds: FeatureDataset, mode: str = "1v1") -> float:
    """Same-identity cross-modal cosine similarity.

    ``1v1`` averages over index-paired (NIR_k, VIS_k); ``1vN`` averages over
    all cross-modal same-identity pairs with different indices.
    """
    if mode not in ("1v1", "1vN"):
        raise MetricError(f"mode must be 1v1 or 1vN, got {mode!r}")
    sims: list[float] = []
    for identity in ds.identities():
        nir = _unit_rows(ds.select(identity, "NIR"))
        vis = _unit_rows(ds.select(identity, "VIS"))
        if mode == "1v1":
            if len(nir) != len(vis) or len(nir) == 0:
                raise MetricError(
                    f"identity {identity!r}: 1v1 needs index-paired NIR/VIS sets "
                    f"(got {len(nir)} NIR, {len(vis)} VIS)"
                )
            sims.extend(np.sum(nir * vis, axis=1).tolist())
        else:
            if len(nir) < 2 or len(vis) < 2:
                raise MetricError(
                    f"identity {identity!r}: 1vN needs >= 2 images per modality"
                )
            cos = nir @ vis.T
            mask = ~np.eye(len(nir), len(vis), dtype=bool)
            sims.extend(cos[mask].tolist())
    return float(np.mean(sims))


def mean_instance_similarity(ds: FeatureDataset, pairing: str = "NIR-VIS") -> float:
    """Mean cosine over all cross-identity pairs of the given modalities."""
    if pairing not in ("VIS-VIS", "NIR-VIS"):
        raise MetricError(f"pairing must be VIS-VIS or NIR-VIS, got {pairing!r}")
    ids = ds.identities()
    if len(ids) < 2:
        raise MetricError("mean_instance_similarity needs >= 2 identities")
    mod_a, mod_b = pairing.split("-")
    total, count = 0.0, 0
    for a in ids:
        fa = _unit_rows(ds.select(a, mod_a))
        for b in ids:
            if a == b:
                continue
            fb = _unit_rows(ds.select(b, mod_b))
            if len(fa) and len(fb):
                cos = fa @ fb.T
                total += float(cos.sum())
                count += cos.size
    if count == 0:
        raise MetricError(f"no cross-identity {pairing} pairs present")
    return total / count


# ---------------------------------------------------------------------------
# FID
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (len(mean), len(mean)):
            raise MetricError(f"bad stats shapes: mean {mean.shape}, cov {cov.shape}")
        if np.abs(cov - cov.T).max() > 1e-10:
            raise MetricError("covariance must be symmetric within 1e-10")
        if np.linalg.eigvalsh(cov).min() < -1e-8:
            raise MetricError("covariance is not PSD (eigenvalue below -1e-8)")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased sample covariance of feature rows."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise MetricError("gaussian_stats needs >= 2 vectors")
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / (len(x) - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean, cov)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    vals = np.where(vals > -1e-8, np.maximum(vals, 0.0), vals)
    if vals.min() < 0:
        raise MetricError("covariance is not PSD (eigenvalue below -1e-8)")
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussians.

    ||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2)), the cross term
    computed as the eigenvalue square-root sum of A^(1/2) C_b A^(1/2)
    (symmetric, so eigh applies; tiny negative eigenvalues clamp to 0).
    """
    if a.dim != b.dim:
        raise MetricError(f"dim mismatch: {a.dim} vs {b.dim}")
    d = a.mean - b.mean
    a_half = _psd_sqrt(a.cov)
    inner = a_half @ b.cov @ a_half
    inner = 0.5 * (inner + inner.T)
    vals = np.linalg.eigh(inner)[0]
    vals = np.where(vals > -1e-8, np.maximum(vals, 0.0), vals)
    if vals.min() < 0:
        raise MetricError("cross-covariance product is not PSD")
    value = float(d @ d + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sum(np.sqrt(vals)))
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# verification / identification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RocPoint:
    """Operating point: acceptance is score >= threshold."""

    vr: float
    threshold: float
    achieved_far: float
    imprecise: bool = False


def roc_vr_at_far(
    genuine_scores: np.ndarray,
    impostor_scores: np.ndarray,
    far_targets: tuple[float, ...] = (1e-4, 1e-3, 1e-2),
) -> dict[float, RocPoint]:
    """Verification rate at each false-accept-rate target.

    The threshold is the smallest score t with frac(impostors >= t) <=
    FAR; ties resolve toward the stricter (higher) threshold. Targets
    below 1/len(impostors) are evaluated at the strictest achievable
    threshold and flagged imprecise.
    """
    gen = np.asarray(genuine_scores, dtype=np.float64)
    imp = np.asarray(impostor_scores, dtype=np.float64)
    if len(gen) == 0 or len(imp) == 0:
        raise MetricError("genuine and impostor score lists must be non-empty")
    n = len(imp)
    uniq = np.unique(imp)  # ascending
    # count of impostors >= each unique score
    counts = n - np.searchsorted(uniq, uniq, side="left")
    out: dict[float, RocPoint] = {}
    for far in far_targets:
        if far < 0:
            raise MetricError(f"FAR target must be >= 0, got {far}")
        allowed = int(math.floor(far * n))
        ok = counts <= allowed
        if ok.any():
            t = float(uniq[np.argmax(ok)])  # smallest qualifying score
            achieved = float(counts[np.argmax(ok)]) / n
        else:
            # even the maximum impostor score admits too many ties: go above it
            t = float(np.nextafter(uniq[-1], np.inf))
            achieved = 0.0
        imprecise = far < 1.0 / n
        if imprecise:
            t = float(np.nextafter(uniq[-1], np.inf))
            achieved = 0.0
        vr = float(np.mean(gen >= t))
        out[far] = RocPoint(vr, t, achieved, imprecise)
    return out


def rank1(gallery: FeatureDataset, probe: FeatureDataset) -> float:
    """Fraction of probes whose best-cosine gallery match shares their
    identity; argmax ties go to the lowest gallery index."""
    if gallery.n == 0 or probe.n == 0:
        raise MetricError("gallery and probe must be non-empty")
    missing = set(probe.ids) - set(gallery.ids)
    if missing:
        raise MetricError(f"probe identities missing from gallery: {sorted(missing)}")
    g = _unit_rows(gallery.features)
    p = _unit_rows(probe.features)
    best = np.argmax(p @ g.T, axis=1)
    return float(np.mean(gallery.ids[best] == probe.ids))


# ---------------------------------------------------------------------------
# reports and the fold protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    ms_1v1: float
    ms_1vn: float
    mis_visvis: float
    mis_nirvis: float
    fid: float
    vr_at_far: dict[float, RocPoint]
    rank1: float
    fold_mean: dict[str, float] | None = None
    fold_std: dict[str, float] | None = None

    def __post_init__(self) -> None:
        for name in ("ms_1v1", "ms_1vn", "mis_visvis", "mis_nirvis"):
            v = getattr(self, name)
            if not -1.0 - 1e-9 <= v <= 1.0 + 1e-9:
                raise MetricError(f"{name} outside [-1, 1]: {v}")
        if not 0.0 <= self.rank1 <= 1.0:
            raise MetricError(f"rank1 outside [0, 1]: {self.rank1}")
        if self.fid < 0.0:
            raise MetricError(f"fid negative: {self.fid}")
        for far, pt in self.vr_at_far.items():
            if not 0.0 <= pt.vr <= 1.0:
                raise MetricError(f"VR@{far} outside [0, 1]: {pt.vr}")

    def scalars(self) -> dict[str, float]:
        out = {
            "ms_1v1": self.ms_1v1,
            "ms_1vn": self.ms_1vn,
            "mis_visvis": self.mis_visvis,
            "mis_nirvis": self.mis_nirvis,
            "fid": self.fid,
            "rank1": self.rank1,
        }
        for far, pt in sorted(self.vr_at_far.items()):
            out[f"vr_at_far_{far:g}"] = pt.vr
        return out


def _verification_scores(ds: FeatureDataset) -> tuple[np.ndarray, np.ndarray]:
    """All NIR x VIS cosine scores, split into genuine and impostor sets."""
    nir_mask = ds.modalities == "NIR"
    vis_mask = ds.modalities == "VIS"
    if not nir_mask.any() or not vis_mask.any():
        raise MetricError("need both NIR and VIS features for verification scores")
    n_feats = _unit_rows(ds.features[nir_mask])
    v_feats = _unit_rows(ds.features[vis_mask])
    scores = n_feats @ v_feats.T
    same = ds.ids[nir_mask][:, None] == ds.ids[vis_mask][None, :]
    return scores[same].ravel(), scores[~same].ravel()


def compute_report(
    ds: FeatureDataset,
    far_targets: tuple[float, ...] = (1e-4, 1e-3, 1e-2),
    fold_stats: tuple[dict[str, float], dict[str, float]] | None = None,
) -> MetricReport:
    """Full metric suite over one labeled two-modality feature set.

    Identification is NIR probes against a VIS gallery. The FID compares
    the NIR and VIS feature distributions.
    """
    nir_mask = ds.modalities == "NIR"
    vis_mask = ds.modalities == "VIS"
    gen, imp = _verification_scores(ds)
    vr = roc_vr_at_far(gen, imp, far_targets)
    gallery = FeatureDataset(ds.ids[vis_mask], ds.modalities[vis_mask], ds.features[vis_mask])
    probe = FeatureDataset(ds.ids[nir_mask], ds.modalities[nir_mask], ds.features[nir_mask])
    mean, std = fold_stats if fold_stats is not None else (None, None)
    return MetricReport(
        ms_1v1=mean_similarity(ds, "1v1"),
        ms_1vn=mean_similarity(ds, "1vN"),
        mis_visvis=mean_instance_similarity(ds, "VIS-VIS"),
        mis_nirvis=mean_instance_similarity(ds, "NIR-VIS"),
        fid=fid(gaussian_stats(ds.features[nir_mask]), gaussian_stats(ds.features[vis_mask])),
        vr_at_far=vr,
        rank1=rank1(gallery, probe),
        fold_mean=mean,
        fold_std=std,
    )


def tenfold_protocol(
    ds: FeatureDataset,
    rng_seed: int = 0,
    folds: int = 10,
    train_fraction: float = 0.5,
    far_targets: tuple[float, ...] = (1e-4, 1e-3, 1e-2),
) -> tuple[list[dict], MetricReport]:
    """Repeated identity-disjoint splits with test-side metric aggregation.

    Each fold splits identities ~train_fraction/rest with no overlap; the
    metric suite runs on the test side. Returns per-fold records and a
    report whose fold_mean/fold_std aggregate across folds.
    """
    ids = ds.identities()
    if len(ids) < 2:
        raise MetricError("tenfold protocol needs >= 2 identities")
    per_fold: list[dict] = []
    accum: dict[str, list[float]] = {}
    for f in range(folds):
        rng = rng_from(rng_seed, f)
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_train = min(max(int(round(train_fraction * len(ids))), 1), len(ids) - 1)
        train_ids, test_ids = set(order[:n_train]), set(order[n_train:])
        test_ds = ds.subset_identities(test_ids)
        report = compute_report(test_ds, far_targets)
        record = {
            "fold": f,
            "train_ids": sorted(train_ids),
            "test_ids": sorted(test_ids),
            "metrics": report.scalars(),
        }
        per_fold.append(record)
        for key, value in report.scalars().items():
            accum.setdefault(key, []).append(value)
    fold_mean = {k: float(np.mean(v)) for k, v in accum.items()}
    fold_std = {k: float(np.std(v)) for k, v in accum.items()}
    full = compute_report(ds, far_targets, fold_stats=(fold_mean, fold_std))
    return per_fold, full


def write_report(report: MetricReport, out_dir: str | Path, per_fold: list[dict] | None = None) -> None:
    """Write the key=value text report plus a JSON summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v:.6f}" for k, v in report.scalars().items()]
    for far, pt in sorted(report.vr_at_far.items()):
        if pt.imprecise:
            lines.append(f"vr_at_far_{far:g}_imprecise=true")
    if per_fold is not None:
        for rec in per_fold:
            lines.append(f"[fold {rec['fold']}]")
            lines.extend(f"{k}={v:.6f}" for k, v in rec["metrics"].items())
    if report.fold_mean:
        lines.append("[aggregate]")
        for k in sorted(report.fold_mean):
            lines.append(f"fold_mean_{k}={report.fold_mean[k]:.6f}")
            lines.append(f"fold_std_{k}={report.fold_std[k]:.6f}")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")
    payload = {
        "metrics": report.scalars(),
        "vr_points": {
            f"{far:g}": {
                "vr": pt.vr,
                "threshold": pt.threshold,
                "achieved_far": pt.achieved_far,
                "imprecise": pt.imprecise,
            }
            for far, pt in sorted(report.vr_at_far.items())
        },
        "fold_mean": report.fold_mean,
        "fold_std": report.fold_std,
    }
    if per_fold is not None:
        payload["folds"] = per_fold
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
