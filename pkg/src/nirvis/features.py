"""Labeled two-modality feature sets and their on-disk format.

One row per image: identity label, modality tag (NIR or VIS), then the
feature values, comma-separated. Parse errors report line numbers.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["FeatureDataset", "FeatureFormatError", "load_features", "save_features"]

MODALITIES = ("NIR", "VIS")


class FeatureFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureDataset:
    """Feature vectors with identity and modality labels, row-aligned."""

    ids: np.ndarray  # (n,) str
    modalities: np.ndarray  # (n,) str, NIR|VIS
    features: np.ndarray  # (n, dim) float64

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=str)
        mods = np.asarray(self.modalities, dtype=str)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise FeatureFormatError(f"features must be 2-D, got shape {feats.shape}")
        n = len(feats)
        if len(ids) != n or len(mods) != n:
            raise FeatureFormatError(
                f"row counts disagree: {len(ids)} ids, {len(mods)} modalities, {n} features"
            )
        bad = ~np.isin(mods, MODALITIES)
        if bad.any():
            raise FeatureFormatError(
                f"unknown modality {mods[bad][0]!r} (must be NIR or VIS)"
            )
        if not np.isfinite(feats).all():
            raise FeatureFormatError("features contain non-finite values")
        for name, arr in (("ids", ids), ("modalities", mods), ("features", feats)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def identities(self) -> list[str]:
        """Distinct identity labels in first-appearance order."""
        seen: dict[str, None] = {}
        for i in self.ids:
            seen.setdefault(str(i))
        return list(seen)

    def select(self, identity: str, modality: str | None = None) -> np.ndarray:
        mask = self.ids == identity
        if modality is not None:
            mask &= self.modalities == modality
        return self.features[mask]

    def subset_identities(self, keep: set[str]) -> "FeatureDataset":
        mask = np.isin(self.ids, sorted(keep))
        return FeatureDataset(self.ids[mask], self.modalities[mask], self.features[mask])


def load_features(path: str | Path) -> FeatureDataset:
    """Parse a feature file; malformed rows raise with their line number."""
    path = Path(path)
    if not path.is_file():
        raise FeatureFormatError(f"cannot read {path}: no such file")
    ids: list[str] = []
    mods: list[str] = []
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 3:
                raise FeatureFormatError(
                    f"{path}:{lineno}: need identity, modality, and at least one value"
                )
            identity, modality, values = parts[0], parts[1], parts[2:]
            if modality not in MODALITIES:
                raise FeatureFormatError(
                    f"{path}:{lineno}: modality must be NIR or VIS, got {modality!r}"
                )
            try:
                vec = [float(v) for v in values]
            except ValueError as exc:
                raise FeatureFormatError(f"{path}:{lineno}: {exc}") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise FeatureFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(vec)}"
                )
            ids.append(identity)
            mods.append(modality)
            rows.append(vec)
    if not rows:
        raise FeatureFormatError(f"{path}: no feature rows")
    return FeatureDataset(np.array(ids), np.array(mods), np.array(rows))


def save_features(ds: FeatureDataset, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        for i in range(ds.n):
            values = ",".join(repr(float(v)) for v in ds.features[i])
            fh.write(f"{ds.ids[i]},{ds.modalities[i]},{values}\n")
