"""Standard depth-evaluation metrics (Abs Rel, Sq Rel, RMSE, RMSE log, delta thresholds)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyMetricsError, InvalidInputError

DEPTH_CAP = 80.0


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    count: int

    def as_dict(self) -> dict:
        return asdict(self)

    def report(self) -> str:
        """One ``name value`` line per metric."""
        return "".join(f"{k} {v}\n" for k, v in self.as_dict().items())


def compute_metrics(pred, gt, cap: float = DEPTH_CAP, mask=None) -> DepthMetrics:
    """Compare predicted and ground-truth depth over pixels with ``gt > 0``.

    Both maps are clamped to ``cap`` before any statistic is taken.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = gt > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise EmptyMetricsError("no valid ground-truth pixels")
    g = np.minimum(gt[valid], cap)
    p = np.minimum(pred[valid], cap)
    if np.any(p <= 0):
        raise InvalidInputError("predicted depths must be positive on valid pixels")
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        count=n,
    )


def normal_angular_error(pred_normals, gt_normals, mask=None) -> np.ndarray:
    """Per-pixel angle in degrees between two unit normal maps."""
    d = np.clip(np.sum(pred_normals * gt_normals, axis=-1), -1.0, 1.0)
    err = np.degrees(np.arccos(d))
    return err if mask is None else err[mask]
