"""Desk-scale trainer demonstrating the two-stage cross-modality recipe.

A two-layer embedding network (explicit backprop, SGD with momentum and
weight decay) is pretrained with the identity loss, then fine-tuned with
identity plus a selectable alignment term (mmd, pmse, or idmmd) on
synthetic two-modality data. Small enough that full training runs live
inside the test suite.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import FeatureDataset
from .losses import (
    FeatureBatch,
    KernelSpec,
    MarginConfig,
    SamplingWarning,
    id_loss,
    idmmd_loss,
    mmd_loss,
    pmse_loss,
    sample_batch,
)
from .util import rng_from

__all__ = [
    "LOSS_MODES",
    "ToyModel",
    "TrainConfig",
    "TrainDivergence",
    "modality_gap_cosine",
    "synth_two_modality_data",
    "train",
    "write_history",
]

LOSS_MODES = ("id", "id+mmd", "id+pmse", "id+idmmd")

HIDDEN = 64
EMBED = 32


class TrainDivergence(RuntimeError):
    """Loss became non-finite; carries the history gathered so far."""

    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 10
    epochs_pretrain: int = 20
    epochs_finetune: int = 5
    lam: float = 100.0
    p: int = 32
    k: int = 8
    n_r: int = 0  # real-sample count, bookkeeping for dataset composition
    n_s: int = 0  # synthetic-sample count
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.lr_decay_every < 1 or self.lr_decay_factor <= 0:
            raise ValueError("lr decay schedule must be positive")


@dataclass
class ToyModel:
    """dim -> 64 -> 32 embedding net with L2-normalized outputs, plus the
    jointly-trained unit-norm classifier rows for the identity loss."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    cls: np.ndarray  # (num_classes, EMBED), rows unit-norm

    @classmethod
    def init(cls, dim: int, num_classes: int, seed: int = 0) -> "ToyModel":
        rng = rng_from(seed, 0)
        w1 = rng.normal(scale=1.0 / np.sqrt(dim), size=(dim, HIDDEN))
        w2 = rng.normal(scale=1.0 / np.sqrt(HIDDEN), size=(HIDDEN, EMBED))
        rows = rng.normal(size=(num_classes, EMBED))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return cls(w1, np.zeros(HIDDEN), w2, np.zeros(EMBED), rows)

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "cls": self.cls}

    def forward(self, x: np.ndarray):
        """Returns unit embeddings plus the cache backward() needs."""
        h = np.tanh(x @ self.w1 + self.b1)
        z = h @ self.w2 + self.b2
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
        norm = np.maximum(norm, 1e-12)
        f = z / norm
        return f, (x, h, z, norm, f)

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64))[0]

    def backward(self, cache, grad_f: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the loss w.r.t. parameters, given dL/d(embedding)."""
        x, h, z, norm, f = cache
        # normalization Jacobian: dL/dz = (g - f (f . g)) / ||z||
        dz = (grad_f - f * np.sum(f * grad_f, axis=-1, keepdims=True)) / norm
        dw2 = h.T @ dz
        db2 = dz.sum(axis=0)
        dh = (dz @ self.w2.T) * (1.0 - h * h)
        dw1 = x.T @ dh
        db1 = dh.sum(axis=0)
        return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def synth_two_modality_data(
    rng_seed: int,
    num_ids: int = 10,
    per_id: int = 16,
    dim: int = 16,
    modality_shift: float = 0.8,
    noise: float = 0.25,
) -> FeatureDataset:
    """Synthetic labeled two-modality features on the unit sphere.

    Each identity is a cluster around a random unit center; VIS samples are
    additionally pushed along one fixed modality direction by
    ``modality_shift`` before renormalization.
    """
    if num_ids < 1 or per_id < 1 or dim < 2:
        raise ValueError("num_ids, per_id must be >= 1 and dim >= 2")
    rng = rng_from(rng_seed)
    mod_dir = rng.normal(size=dim)
    mod_dir /= np.linalg.norm(mod_dir)
    ids, mods, rows = [], [], []
    for i in range(num_ids):
        center = rng.normal(size=dim)
        center /= np.linalg.norm(center)
        for _ in range(per_id):
            v = center + noise * rng.normal(size=dim)
            rows.append(v / np.linalg.norm(v))
            ids.append(f"id{i:03d}")
            mods.append("NIR")
        for _ in range(per_id):
            v = center + noise * rng.normal(size=dim) + modality_shift * mod_dir
            rows.append(v / np.linalg.norm(v))
            ids.append(f"id{i:03d}")
            mods.append("VIS")
    return FeatureDataset(np.array(ids), np.array(mods), np.array(rows))


def modality_gap_cosine(model: ToyModel, data: FeatureDataset) -> float:
    """Mean cosine between same-identity NIR and VIS embedding centroids."""
    sims = []
    for identity in data.identities():
        c_n = model.embed(data.select(identity, "NIR")).mean(axis=0)
        c_v = model.embed(data.select(identity, "VIS")).mean(axis=0)
        denom = np.linalg.norm(c_n) * np.linalg.norm(c_v)
        sims.append(float(c_n @ c_v / max(denom, 1e-12)))
    return float(np.mean(sims))


def _aux_loss_and_grads(mode: str, emb_batch: FeatureBatch, kern: KernelSpec):
    """Alignment term value and (grad_nir, grad_vis) for the chosen mode."""
    if mode == "id":
        return 0.0, None, None
    p, k, dim = emb_batch.p, emb_batch.k, emb_batch.dim
    if mode == "id+mmd":
        out = mmd_loss(
            emb_batch.nir.reshape(p * k, dim), emb_batch.vis.reshape(p * k, dim), kern
        )
        return (
            out.value,
            out.gradients["x_nir"].reshape(p, k, dim),
            out.gradients["x_vis"].reshape(p, k, dim),
        )
    if mode == "id+pmse":
        out = pmse_loss(emb_batch)
    elif mode == "id+idmmd":
        out = idmmd_loss(emb_batch, kern)
    else:
        raise ValueError(f"unknown loss mode {mode!r} (choose from {LOSS_MODES})")
    return out.value, out.gradients["nir"], out.gradients["vis"]


def train(
    cfg: TrainConfig,
    data: FeatureDataset,
    loss_mode: str = "id+idmmd",
    margin: MarginConfig = MarginConfig(),
    kern: KernelSpec = KernelSpec(),
) -> tuple[ToyModel, list[dict]]:
    """Two-stage run: identity-loss pretrain, then fine-tune with
    id + lambda * (selected alignment loss).

    Returns the trained model and a history record per epoch. Non-finite
    losses abort with :class:`TrainDivergence` carrying the history.
    """
    if loss_mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {loss_mode!r} (choose from {LOSS_MODES})")
    if data.n == 0:
        raise ValueError("empty dataset")
    identities = data.identities()
    class_of = {identity: i for i, identity in enumerate(identities)}
    model = ToyModel.init(data.dim, len(identities), seed=cfg.seed)
    velocity = {name: np.zeros_like(p) for name, p in model.params().items()}
    p_eff = min(cfg.p, len(identities))
    per_mod_min = min(
        min(len(data.select(i, "NIR")), len(data.select(i, "VIS"))) for i in identities
    )
    k_eff = min(cfg.k, per_mod_min)
    steps_per_epoch = max(1, len(identities) // p_eff)
    seed_rng = rng_from(cfg.seed, 1)
    history: list[dict] = []
    total_epochs = cfg.epochs_pretrain + cfg.epochs_finetune

    for epoch in range(total_epochs):
        stage = "pretrain" if epoch < cfg.epochs_pretrain else "finetune"
        mode = "id" if stage == "pretrain" else loss_mode
        lr = cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)
        ep_id, ep_aux = 0.0, 0.0
        for _ in range(steps_per_epoch):
            batch_seed = int(seed_rng.integers(0, 2**62))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SamplingWarning)
                batch = sample_batch(data, p_eff, k_eff, rng_seed=batch_seed)
            p, k, dim = batch.p, batch.k, batch.dim
            x = np.concatenate(
                [batch.nir.reshape(p * k, dim), batch.vis.reshape(p * k, dim)]
            )
            emb, cache = model.forward(x)
            emb_batch = FeatureBatch(
                emb[: p * k].reshape(p, k, EMBED),
                emb[p * k :].reshape(p, k, EMBED),
                batch.identity_ids,
            )
            base_ids = [str(t).split("#")[0] for t in batch.identity_ids]
            labels = np.array([class_of[i] for i in base_ids])
            per_image = np.concatenate([np.repeat(labels, k), np.repeat(labels, k)])

            out_id = id_loss(emb, per_image, model.cls, margin)
            aux_value, g_aux_n, g_aux_v = _aux_loss_and_grads(mode, emb_batch, kern)
            step_loss = out_id.value + (cfg.lam * aux_value if mode != "id" else 0.0)
            if not np.isfinite(step_loss):
                raise TrainDivergence(
                    f"non-finite loss at epoch {epoch} ({stage}, mode {mode})", history
                )

            grad_emb = out_id.gradients["features"].copy()
            if g_aux_n is not None:
                grad_emb[: p * k] += cfg.lam * g_aux_n.reshape(p * k, EMBED)
                grad_emb[p * k :] += cfg.lam * g_aux_v.reshape(p * k, EMBED)
            grads = model.backward(cache, grad_emb)
            grads["cls"] = out_id.gradients["weights"]

            for name, param in model.params().items():
                g = grads[name] + cfg.weight_decay * param
                velocity[name] = cfg.momentum * velocity[name] + g
                param -= lr * velocity[name]
            # projection step: the identity-loss geometry needs unit rows
            model.cls /= np.linalg.norm(model.cls, axis=1, keepdims=True)

            ep_id += out_id.value
            ep_aux += aux_value
        history.append(
            {
                "epoch": epoch,
                "stage": stage,
                "loss_id": ep_id / steps_per_epoch,
                "loss_aux": ep_aux / steps_per_epoch,
                "loss_total": (ep_id + (cfg.lam * ep_aux if mode != "id" else 0.0))
                / steps_per_epoch,
                "centroid_cos": modality_gap_cosine(model, data),
                "lr": lr,
            }
        )
    return model, history


def write_history(history: list[dict], path: str | Path) -> None:
    """Tab-separated history: epoch, stage, losses, centroid cosine, lr."""
    cols = ["epoch", "stage", "loss_id", "loss_aux", "loss_total", "centroid_cos", "lr"]
    with open(path, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for rec in history:
            fh.write("\t".join(str(rec[c]) for c in cols) + "\n")
