"""Training objectives: recomposition operator and the five loss terms.

Every loss accepts numpy arrays or ndtensor Tensors interchangeably and
returns a scalar Tensor, so the same code serves gradient-based training
and plain evaluation. Reductions are means over pixels and channels, which
keeps values resolution-independent; the illumination loss is a sum over
its fixed-size parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from . import sglight
from .ndtensor import Tensor

LOSS_TERMS = ("alb", "diff", "spec", "recon", "illum")


@dataclass(frozen=True)
class LossConfig:
    eps: float = 1e-4
    weight_alb: float = 1.0
    weight_diff: float = 1.0
    weight_spec: float = 1.0
    weight_recon: float = 1.0
    weight_illum: float = 0.1

    def validate(self) -> None:
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        for name in ("alb", "diff", "spec", "recon", "illum"):
            if getattr(self, f"weight_{name}") < 0:
                raise ValueError(f"weight_{name} must be nonnegative")

    def weight(self, term: str) -> float:
        return getattr(self, f"weight_{term}")


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def recompose(albedo, s_diff, s_spec) -> Tensor:
    """albedo * s_diff + s_spec, elementwise; the formation identity."""
    a, d, s = _t(albedo), _t(s_diff), _t(s_spec)
    if not (a.shape == d.shape == s.shape):
        raise ValueError(f"shape mismatch: {a.shape}, {d.shape}, {s.shape}")
    if a.shape[-1] != 3:
        raise ValueError("expected 3 channels on the last axis")
    return a * d + s


def loss_albedo(pred, gt, cfg: LossConfig | None = None) -> Tensor:
    """Mean absolute difference; keeps material boundaries sharp."""
    p, g = _t(pred), _t(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return nd.tmean(nd.tabs(p - g))


def loss_shading_log(pred, gt, cfg: LossConfig | None = None,
                     eps: float | None = None) -> Tensor:
    """Mean squared log difference, used for both shading factors.

    Relative-intensity error: exactly invariant to common positive
    rescaling of pred and gt when eps is 0.
    """
    e = (cfg.eps if cfg is not None else 1e-4) if eps is None else eps
    p, g = _t(pred), _t(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if np.min(p.data) < 0 or np.min(g.data) < 0:
        raise ValueError("shading losses require nonnegative inputs")
    diff = nd.tlog(p + e) - nd.tlog(g + e)
    return nd.tmean(diff * diff)


def loss_recon(albedo, s_diff, s_spec, images,
               cfg: LossConfig | None = None) -> Tensor:
    """Per-view mean |recompose - image|, averaged over views.

    Views share one resolution, so this equals a single global mean over
    the stacked [V, H, W, 3] arrays.
    """
    a = _t(albedo)
    imgs = images.images() if hasattr(images, "images") else images
    i = _t(np.stack(imgs) if isinstance(imgs, (list, tuple)) else imgs)
    if a.ndim != 4 or i.ndim != 4:
        raise ValueError("loss_recon expects stacked [V, H, W, 3] inputs")
    if a.shape[0] != i.shape[0]:
        raise ValueError(f"view-count mismatch: {a.shape[0]} vs {i.shape[0]}")
    r = recompose(a, s_diff, s_spec)
    if r.shape != i.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {i.shape}")
    return nd.tmean(nd.tabs(r - i))


def _illum_vec_loss(pred_vec: Tensor, gt_vec: np.ndarray, k: int) -> Tensor:
    """Squared distance in packed parameter space.

    Axis slots use 1 - dot(axis_pred, axis_gt) per lobe (both unit), the
    remaining slots (inverse-softplus sharpness, amplitudes, ambient) use
    squared differences; contributions are summed, so a single 90-degree
    axis rotation contributes exactly 1.
    """
    total = None
    for i in range(k):
        base = 7 * i
        axis_p = pred_vec[base:base + 3]
        axis_g = gt_vec[base:base + 3]
        term = 1.0 - (axis_p * Tensor(axis_g)).sum()
        rest = pred_vec[base + 3:base + 7] - Tensor(gt_vec[base + 3:base + 7])
        term = term + (rest * rest).sum()
        total = term if total is None else total + term
    amb = pred_vec[7 * k:] - Tensor(gt_vec[7 * k:])
    return total + (amb * amb).sum()


def loss_illum(pred: sglight.SGMixture, gt: sglight.SGMixture,
               cfg: LossConfig | None = None) -> Tensor:
    """Parameter-space distance between two mixtures, order-free.

    Both mixtures are canonicalized before packing, so a lobe permutation
    costs nothing.
    """
    if pred.k != gt.k:
        raise ValueError(f"lobe-count mismatch: {pred.k} vs {gt.k}")
    pv = sglight.pack(pred)
    gv = sglight.pack(gt)
    return _illum_vec_loss(Tensor(pv), gv, pred.k)


def loss_illum_packed(pred_vec: Tensor, gt: sglight.SGMixture) -> Tensor:
    """Differentiable route for the model's raw illumination output.

    `pred_vec` is the canonical pack-space Tensor (axes already unit and
    lobes in canonical order, as produced by the conditioning helper);
    value agrees with loss_illum(unpack(raw), gt) away from degeneracies.
    """
    if pred_vec.shape != (7 * gt.k + 3,):
        raise ValueError(f"expected packed length {7 * gt.k + 3}, "
                         f"got {pred_vec.shape}")
    return _illum_vec_loss(pred_vec, sglight.pack(gt), gt.k)


def loss_total(intrinsics, ground_truth, images,
               cfg: LossConfig | None = None):
    """Weighted sum of the available terms plus a per-term breakdown.

    `intrinsics`: dict with Tensors or arrays under keys albedo / s_diff /
    s_spec and either illum_cond (packed Tensor, training) or illumination
    (SGMixture), or any object exposing those attributes. `ground_truth`:
    same layer keys; any missing layer silently drops its term, leaving at
    least reconstruction against the images. Returns (total, breakdown)
    where breakdown maps term name to its unweighted scalar Tensor.
    """
    cfg = cfg or LossConfig()
    cfg.validate()

    def get(src, key):
        if src is None:
            return None
        if isinstance(src, dict):
            return src.get(key)
        return getattr(src, key, None)

    breakdown: dict = {}
    pa, pd, ps = (get(intrinsics, k) for k in ("albedo", "s_diff", "s_spec"))
    if pa is None or pd is None or ps is None:
        raise ValueError("intrinsics must provide albedo, s_diff, s_spec")

    ga = get(ground_truth, "albedo")
    if ga is not None:
        breakdown["alb"] = loss_albedo(pa, ga, cfg)
    gd = get(ground_truth, "s_diff")
    if gd is not None:
        breakdown["diff"] = loss_shading_log(pd, gd, cfg)
    gs = get(ground_truth, "s_spec")
    if gs is not None:
        breakdown["spec"] = loss_shading_log(ps, gs, cfg)
    breakdown["recon"] = loss_recon(pa, pd, ps, images, cfg)
    gl = get(ground_truth, "illumination")
    if gl is not None:
        cond = get(intrinsics, "illum_cond")
        if cond is not None:
            breakdown["illum"] = loss_illum_packed(cond, gl)
        else:
            breakdown["illum"] = loss_illum(get(intrinsics, "illumination"), gl, cfg)

    total = None
    for term, value in breakdown.items():
        w = cfg.weight(term)
        piece = value * w
        total = piece if total is None else total + piece
    return total, breakdown


def loss_depth_log(pred, gt) -> Tensor:
    """Auxiliary depth term: mean |log pred - log gt| over pixels whose
    ground-truth depth is finite (background depth is +inf by convention).

    Returns 0 when no pixel has finite ground truth.
    """
    p = _t(pred)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if np.min(p.data) <= 0:
        raise ValueError("predicted depth must be positive")
    mask = np.isfinite(g) & (g > 0)
    count = int(mask.sum())
    if count == 0:
        return Tensor(0.0)
    g_safe = np.where(mask, g, 1.0)
    diff = nd.tabs(nd.tlog(p) - Tensor(np.log(g_safe))) * Tensor(mask.astype(np.float64))
    return diff.sum() / float(count)


def stack_ground_truth(batch) -> dict:
    """Stack a synthetic batch's per-frame layers into loss-ready arrays."""
    frames = batch.frames
    return {
        "albedo": np.stack([f.albedo for f in frames]),
        "s_diff": np.stack([f.s_diff for f in frames]),
        "s_spec": np.stack([f.s_spec for f in frames]),
        "depth": np.stack([f.depth for f in frames]),
        "illumination": batch.illumination,
    }


def format_loss_line(step: int, total, breakdown: dict,
                     depth=None) -> str:
    """One comma-separated line per step: step, total, alb, diff, spec,
    recon, illum; a trailing depth column appears when the auxiliary depth
    loss is active. Missing terms print as nan."""
    def val(x):
        if x is None:
            return float("nan")
        return float(x.data) if isinstance(x, Tensor) else float(x)

    cols = [f"{step}", f"{val(total):.10g}"]
    for term in LOSS_TERMS:
        cols.append(f"{val(breakdown.get(term)):.10g}")
    if depth is not None:
        cols.append(f"{val(depth):.10g}")
    return ", ".join(cols)
