"""Reconstruction and pose metrics.

Surface quality compares the extracted surface points of the estimated and
ground-truth volumes, each transformed into the world by its own pose and
scale:

* P        mean distance from estimated points to the nearest true point, mm
* R_mean   mean distance from true points to the nearest estimated point, mm
* CD       (P + R_mean) / 2, mm
* P_1cm    percentage of estimated points within 1 cm of the truth
* R_1cm    percentage of true points within 1 cm of the estimate

Neither quantity is defined in closed form by the comparisons this follows;
the formulas above are this package's fixed definitions, stated here so
numbers are comparable.

Pose quality reports position error (m), orientation error (geodesic
degrees), the F score at 1 cm (harmonic mean of the thresholded precision
and recall as fractions), and pass/fail flags at standard threshold
combinations.  Orientation error ignores object symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .estimator import Estimate
from .geometry import Pose
from .rotation import geodesic_angle
from .shapespace import ShapeSpace, decode
from .volume import SdfVolume, extract_surface_points

THRESHOLD_COMBOS = (
    ("10deg_2cm", np.deg2rad(10.0), 0.02, None),
    ("5deg_1cm", np.deg2rad(5.0), 0.01, None),
    ("10deg_2cm_f0.6", np.deg2rad(10.0), 0.02, 0.6),
    ("5deg_1cm_f0.8", np.deg2rad(5.0), 0.01, 0.8),
)


@dataclass(frozen=True)
class ReconMetrics:
    precision_mm: float
    recall_mm: float
    chamfer_mm: float
    precision_1cm: float
    recall_1cm: float

    def to_dict(self) -> dict:
        return {
            "P_mm": self.precision_mm,
            "R_mm": self.recall_mm,
            "CD_mm": self.chamfer_mm,
            "P_1cm": self.precision_1cm,
            "R_1cm": self.recall_1cm,
        }

    @property
    def f_1cm(self) -> float:
        p = self.precision_1cm / 100.0
        r = self.recall_1cm / 100.0
        if p + r == 0:
            return 0.0
        return 2.0 * p * r / (p + r)


@dataclass(frozen=True)
class PoseMetrics:
    position_error_m: float
    orientation_error_deg: float
    f_1cm: float | None
    success: dict

    def to_dict(self) -> dict:
        return {
            "position_error_m": self.position_error_m,
            "orientation_error_deg": self.orientation_error_deg,
            "f_1cm": self.f_1cm,
            "success": dict(self.success),
        }


def nearest_distances(a: np.ndarray, b: np.ndarray, method: str = "auto") -> np.ndarray:
    """Distance from each point of ``a`` to its nearest neighbor in ``b``.

    ``brute`` is the quadratic reference path; ``kdtree`` scales to the tens
    of thousands of surface points the volumes produce; ``auto`` picks by
    size.  Both return identical distances.
    """
    if method == "auto":
        method = "brute" if len(a) * len(b) <= 1_000_000 else "kdtree"
    if method == "brute":
        out = np.empty(len(a))
        chunk = max(1, 2_000_000 // max(len(b), 1))
        for start in range(0, len(a), chunk):
            d = np.linalg.norm(a[start : start + chunk, None, :] - b[None, :, :], axis=2)
            out[start : start + chunk] = d.min(axis=1)
        return out
    if method == "kdtree":
        return cKDTree(b).query(a, workers=-1)[0]
    raise ValueError(f"unknown method {method!r}")


def surface_points_world(vol: SdfVolume, pose: Pose, scale: float) -> np.ndarray:
    return pose.transform(extract_surface_points(vol) * scale)


def recon_metrics(
    est: Estimate,
    space: ShapeSpace,
    gt_vol: SdfVolume,
    gt_pose: Pose,
    gt_scale: float,
    method: str = "kdtree",
) -> ReconMetrics:
    """Surface metrics of a decoded estimate against a ground-truth volume."""
    est_pts = surface_points_world(
        decode(space, est.shape), Pose(est.position, est.orientation), est.scale
    )
    gt_pts = surface_points_world(gt_vol, gt_pose, gt_scale)
    d_est = nearest_distances(est_pts, gt_pts, method)
    d_gt = nearest_distances(gt_pts, est_pts, method)
    p = float(d_est.mean() * 1000.0)
    r = float(d_gt.mean() * 1000.0)
    return ReconMetrics(
        precision_mm=p,
        recall_mm=r,
        chamfer_mm=0.5 * (p + r),
        precision_1cm=float((d_est <= 0.01).mean() * 100.0),
        recall_1cm=float((d_gt <= 0.01).mean() * 100.0),
    )


def pose_metrics(est: Estimate, gt: Estimate, recon: ReconMetrics | None = None) -> PoseMetrics:
    """Pose errors plus standard success thresholds.

    The F-gated thresholds need reconstruction metrics; without them those
    entries are None.
    """
    pos_err = float(np.linalg.norm(est.position - gt.position))
    ang_err = float(geodesic_angle(est.orientation, gt.orientation))
    f = recon.f_1cm if recon is not None else None
    success = {}
    for name, ang_thresh, pos_thresh, f_thresh in THRESHOLD_COMBOS:
        ok = bool(ang_err <= ang_thresh and pos_err <= pos_thresh)
        if f_thresh is not None:
            ok = None if f is None else bool(ok and f >= f_thresh)
        success[name] = ok
    return PoseMetrics(
        position_error_m=pos_err,
        orientation_error_deg=float(np.rad2deg(ang_err)),
        f_1cm=f,
        success=success,
    )
