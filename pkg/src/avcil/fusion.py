"""Bidirectional cross-modal attention fusion.

Audio features are a length-``d`` vector per sample; visual features are an
``L x S x d`` tensor (frames x spatial locations x channels).  Reduction
axes used throughout:

* spatial softmax runs over ``S`` separately for every (frame, channel);
* temporal softmax runs over ``L`` separately for every channel;
* the visually guided audio weights average the visual scores over frames
  and locations and take a softmax over channels.

Every function here accepts a leading batch axis; the single-sample entry
points wrap the batched ones.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .kernels import NumericError, log_softmax, make_rng, one_hot, softmax

INTENSITIES = ("None", "Weak", "Medium", "Strong")
N_CLASSES = len(INTENSITIES)


def intensity_index(label) -> int:
    if isinstance(label, str):
        try:
            return INTENSITIES.index(label)
        except ValueError:
            raise NumericError(f"unknown intensity label {label!r}") from None
    idx = int(label)
    if not 0 <= idx < N_CLASSES:
        raise NumericError(f"intensity index {idx} outside [0, {N_CLASSES})")
    return idx


@dataclass
class FeaturePair:
    audio: np.ndarray
    visual: np.ndarray
    intensity_label: int
    species_id: int = 0

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.visual = np.asarray(self.visual, dtype=np.float64)
        self.intensity_label = intensity_index(self.intensity_label)
        if self.audio.ndim != 1 or self.visual.ndim != 3:
            raise NumericError("audio must be (d,) and visual (L, S, d)")
        if self.visual.shape[2] != self.audio.shape[0]:
            raise NumericError(
                f"channel mismatch: audio d={self.audio.shape[0]}, visual d={self.visual.shape[2]}"
            )
        if self.species_id < 0:
            raise NumericError("species_id must be non-negative")


def stack_pairs(pairs: Sequence[FeaturePair]):
    """Batch arrays ``(audio (n,d), visual (n,L,S,d), labels (n,), species (n,))``."""
    if not pairs:
        raise NumericError("empty sample list")
    audio = np.stack([p.audio for p in pairs])
    visual = np.stack([p.visual for p in pairs])
    labels = np.array([p.intensity_label for p in pairs], dtype=np.int64)
    species = np.array([p.species_id for p in pairs], dtype=np.int64)
    return audio, visual, labels, species


@dataclass
class FusionParams:
    W_a: np.ndarray
    W_v: np.ndarray
    U_a: np.ndarray
    U_v: np.ndarray

    def __post_init__(self):
        d = self.W_a.shape[0]
        for f in fields(self):
            m = getattr(self, f.name)
            if m.shape != (d, d):
                raise NumericError(f"{f.name} must be {d}x{d}, got {m.shape}")

    @property
    def d(self) -> int:
        return self.W_a.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "FusionParams":
        return cls(*(np.zeros((d, d)) for _ in range(4)))

    @classmethod
    def random(cls, d: int, seed: int, scale: float | None = None) -> "FusionParams":
        rng = make_rng(seed)
        s = 1.0 / np.sqrt(d) if scale is None else scale
        return cls(*(rng.normal(0.0, s, size=(d, d)) for _ in range(4)))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "FusionParams":
        return FusionParams(*(getattr(self, f.name).copy() for f in fields(self)))


@dataclass
class FusedOutput:
    score_a: np.ndarray
    score_v: np.ndarray
    spatial_weights: np.ndarray
    frame_scores: np.ndarray
    temporal_weights: np.ndarray
    audio_weights: np.ndarray
    enhanced_visual: np.ndarray
    enhanced_audio: np.ndarray
    branch_visual: np.ndarray
    branch_audio: np.ndarray
    fused: np.ndarray
    sim_loss: np.ndarray | float


def _check_shapes(audio: np.ndarray, visual: np.ndarray, params: FusionParams):
    if audio.ndim != 2 or visual.ndim != 4:
        raise NumericError("batched audio must be (n,d) and visual (n,L,S,d)")
    n, d = audio.shape
    if visual.shape[0] != n or visual.shape[3] != d:
        raise NumericError(f"visual shape {visual.shape} incompatible with audio {audio.shape}")
    if visual.shape[1] < 1 or visual.shape[2] < 1:
        raise NumericError("need L >= 1 and S >= 1")
    if params.d != d:
        raise NumericError(f"params are {params.d}-dimensional, features are {d}")


def _sim_loss(u: np.ndarray, w: np.ndarray):
    """Per-row ``1 - cos(u, w)``; rows with a zero vector get 1."""
    nu = np.linalg.norm(u, axis=-1)
    nw = np.linalg.norm(w, axis=-1)
    ok = (nu > 0) & (nw > 0)
    denom = np.where(ok, nu * nw, 1.0)
    cos = np.where(ok, np.sum(u * w, axis=-1) / denom, 0.0)
    return 1.0 - np.clip(cos, -1.0, 1.0), nu, nw, ok, cos


def similarity_loss(u, w):
    """``1 - cos(u, w)`` along the last axis, defined as 1 when either vector is zero."""
    return _sim_loss(np.asarray(u, dtype=np.float64), np.asarray(w, dtype=np.float64))[0]


def fuse_batch(audio, visual, params: FusionParams) -> FusedOutput:
    audio = np.asarray(audio, dtype=np.float64)
    visual = np.asarray(visual, dtype=np.float64)
    _check_shapes(audio, visual, params)

    sa = np.tanh(audio @ params.W_a)  # (n,d)
    sv = np.tanh(visual @ params.W_v)  # (n,L,S,d)
    w_spa = softmax(sa[:, None, None, :] * sv, axis=2)
    frame = np.sum(w_spa * sv, axis=2)  # (n,L,d)
    w_tem = softmax(frame, axis=1)
    w_aud = softmax(sv.mean(axis=(1, 2)) * sa, axis=1)

    per_frame = np.sum(visual * w_spa, axis=2)  # (n,L,d)
    enh_v = np.sum(w_tem * per_frame, axis=1)
    enh_a = audio * w_aud
    br_v = np.tanh(enh_v @ params.U_v)
    br_a = np.tanh(enh_a @ params.U_a)
    sim, *_ = _sim_loss(enh_v, enh_a)
    return FusedOutput(
        score_a=sa,
        score_v=sv,
        spatial_weights=w_spa,
        frame_scores=frame,
        temporal_weights=w_tem,
        audio_weights=w_aud,
        enhanced_visual=enh_v,
        enhanced_audio=enh_a,
        branch_visual=br_v,
        branch_audio=br_a,
        fused=br_v + br_a,
        sim_loss=sim,
    )


def fuse_forward(sample: FeaturePair, params: FusionParams) -> FusedOutput:
    """Forward pass for one sample; outputs carry no batch axis."""
    out = fuse_batch(sample.audio[None], sample.visual[None], params)
    squeezed = {f.name: getattr(out, f.name)[0] for f in fields(out)}
    squeezed["sim_loss"] = float(squeezed["sim_loss"])
    return FusedOutput(**squeezed)


def fusion_loss(output: FusedOutput, head, label, lambda_sim: float = 0.1) -> float:
    """Cross-entropy of the head on the fused vector plus weighted similarity loss."""
    head = np.asarray(head, dtype=np.float64)
    y = intensity_index(label)
    logits = np.asarray(output.fused) @ head
    return float(-log_softmax(logits)[y] + lambda_sim * float(output.sim_loss))


def batch_loss(audio, visual, labels, params: FusionParams, head, lambda_sim: float = 0.1) -> float:
    out = fuse_batch(audio, visual, params)
    logp = log_softmax(out.fused @ head, axis=1)
    ce = -logp[np.arange(len(labels)), labels]
    return float(np.mean(ce + lambda_sim * out.sim_loss))


def loss_and_grads(audio, visual, labels, params: FusionParams, head, lambda_sim: float = 0.1):
    """Mean batch loss and analytic gradients for every parameter and the head.

    Returns ``(loss, grads)`` with ``grads`` keyed by ``W_a, W_v, U_a, U_v, head``.
    """
    audio = np.asarray(audio, dtype=np.float64)
    visual = np.asarray(visual, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, L, S, _ = visual.shape
    P = params
    out = fuse_batch(audio, visual, P)
    sa, sv = out.score_a, out.score_v
    w_spa, w_tem, w_aud = out.spatial_weights, out.temporal_weights, out.audio_weights
    enh_v, enh_a = out.enhanced_visual, out.enhanced_audio

    logits = out.fused @ head
    p = softmax(logits, axis=1)
    Y = one_hot(labels, head.shape[1])
    sim, nu, nw, ok, cos = _sim_loss(enh_v, enh_a)
    loss = float(np.mean(-np.sum(Y * log_softmax(logits, axis=1), axis=1) + lambda_sim * sim))

    dz = (p - Y) / n
    g_head = out.fused.T @ dz
    d_fused = dz @ head.T

    d_pv = d_fused * (1.0 - out.branch_visual**2)
    d_pa = d_fused * (1.0 - out.branch_audio**2)
    g_Uv = enh_v.T @ d_pv
    g_Ua = enh_a.T @ d_pa
    d_ev = d_pv @ P.U_v.T
    d_ea = d_pa @ P.U_a.T

    # similarity term: d(1 - cos)/du = -(w/(|u||w|) - cos u/|u|^2)
    coef = (lambda_sim / n) * ok
    safe_nu = np.where(ok, nu, 1.0)[:, None]
    safe_nw = np.where(ok, nw, 1.0)[:, None]
    d_ev -= coef[:, None] * (enh_a / (safe_nu * safe_nw) - cos[:, None] * enh_v / safe_nu**2)
    d_ea -= coef[:, None] * (enh_v / (safe_nu * safe_nw) - cos[:, None] * enh_a / safe_nw**2)

    # audio branch: enh_a = audio * softmax_d(mean_LS(sv) * sa)
    d_waud = d_ea * audio
    d_c = w_aud * (d_waud - np.sum(d_waud * w_aud, axis=1, keepdims=True))
    mv = sv.mean(axis=(1, 2))
    d_sa = d_c * mv
    d_sv = np.broadcast_to((d_c * sa)[:, None, None, :] / (L * S), sv.shape).copy()

    # visual branch: enh_v = sum_L w_tem * sum_S(visual * w_spa)
    per_frame = np.sum(visual * w_spa, axis=2)
    d_wtem = d_ev[:, None, :] * per_frame
    d_pf = d_ev[:, None, :] * w_tem
    d_wspa = d_pf[:, :, None, :] * visual

    d_q = w_tem * (d_wtem - np.sum(d_wtem * w_tem, axis=1, keepdims=True))
    d_wspa += d_q[:, :, None, :] * sv
    d_sv += d_q[:, :, None, :] * w_spa

    d_g = w_spa * (d_wspa - np.sum(d_wspa * w_spa, axis=2, keepdims=True))
    d_sa += np.sum(d_g * sv, axis=(1, 2))
    d_sv += d_g * sa[:, None, None, :]

    d_zv = d_sv * (1.0 - sv**2)
    g_Wv = np.einsum("nlsd,nlse->de", visual, d_zv)
    d_za = d_sa * (1.0 - sa**2)
    g_Wa = audio.T @ d_za
    return loss, {"W_a": g_Wa, "W_v": g_Wv, "U_a": g_Ua, "U_v": g_Uv, "head": g_head}


def fd_grads(audio, visual, labels, params: FusionParams, head, lambda_sim: float = 0.1, step: float = 1e-5):
    """Central finite-difference gradients with the same keys as :func:`loss_and_grads`."""
    def f(pp, hh):
        return batch_loss(audio, visual, labels, pp, hh, lambda_sim)

    grads = {}
    base = params.as_dict()
    for name in ("W_a", "W_v", "U_a", "U_v"):
        g = np.zeros_like(base[name])
        for idx in np.ndindex(g.shape):
            plus = params.copy()
            minus = params.copy()
            getattr(plus, name)[idx] += step
            getattr(minus, name)[idx] -= step
            g[idx] = (f(plus, head) - f(minus, head)) / (2 * step)
        grads[name] = g
    g = np.zeros_like(head)
    for idx in np.ndindex(head.shape):
        hp = head.copy()
        hm = head.copy()
        hp[idx] += step
        hm[idx] -= step
        g[idx] = (f(params, hp) - f(params, hm)) / (2 * step)
    grads["head"] = g
    return grads


class TrainingDiverged(RuntimeError):
    pass


def train_fusion(
    batches: Sequence[FeaturePair],
    params: FusionParams,
    head,
    steps: int,
    lr: float,
    grad_mode: str = "analytic",
    lambda_sim: float = 0.1,
    batch_size: int = 64,
    seed: int = 0,
):
    """Mini-batch gradient descent on the fusion loss.

    Samples are visited in a seeded permutation, reshuffled each epoch.
    Returns ``(params, head, loss_trace)``; inputs are not modified.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if grad_mode not in ("analytic", "finite_difference"):
        raise ValueError(f"unknown grad_mode {grad_mode!r}")
    audio, visual, labels, _ = stack_pairs(list(batches))
    params = params.copy()
    head = np.array(head, dtype=np.float64, copy=True)
    n = len(labels)
    bs = min(batch_size, n)
    rng = make_rng(seed)
    order = rng.permutation(n)
    pos = 0
    trace: list[float] = []
    for step in range(steps):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        a, v, y = audio[idx], visual[idx], labels[idx]
        if grad_mode == "analytic":
            loss, grads = loss_and_grads(a, v, y, params, head, lambda_sim)
        else:
            loss = batch_loss(a, v, y, params, head, lambda_sim)
            grads = fd_grads(a, v, y, params, head, lambda_sim)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite fusion loss at step {step} (lr={lr})")
        trace.append(loss)
        for name in ("W_a", "W_v", "U_a", "U_v"):
            setattr(params, name, getattr(params, name) - lr * grads[name])
        head = head - lr * grads["head"]
    return params, head, trace
