"""Image and marginal metrics and the ground-truth-deficient protocol.

Without an exact joint distribution a prediction is judged through its
marginals: the decoded joint is integrated along x13, x1 and the v-direction
and compared with the ground-truth marginals.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import map_coordinates

from .colormap import UNRELIABLE_FRACTION, ColorMapConfig, EncodedImage, decode_image
from .grids import SQRT2, JointGrid, Marginal, MarginalTriple


class MetricError(ValueError):
    pass


def _channels(img):
    return np.asarray(img.channels if isinstance(img, EncodedImage) else img, dtype=np.float64)


def l2_image(gt, pred) -> float:
    """sqrt(sum |gt - pred|^2) divided by the number of pixel values (3 S^2)."""
    a, b = _channels(gt), _channels(pred)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)) / a.size)


def l1_marginal(gt: Marginal, pred: Marginal) -> float:
    """sum |gt - pred| over the grid points divided by their number."""
    if gt.grid.shape != pred.grid.shape or not np.allclose(gt.grid, pred.grid, rtol=0, atol=1e-9):
        raise MetricError("marginals live on different grids")
    return float(np.sum(np.abs(gt.values - pred.values)) / gt.values.size)


def negativity_volume(joint: JointGrid) -> float:
    """-sum min(W, 0) times the cell area."""
    return max(0.0, float(-np.sum(np.minimum(joint.values, 0.0)) * joint.cell_area))


def joint_marginals(joint: JointGrid, grids, labels=("x1", "x13", "u")) -> MarginalTriple:
    """Integrate a joint along y, along x and along v = (y - x)/sqrt(2).

    ``grids`` gives the three output abscissae.  The oblique integral
    resamples the joint bilinearly onto lines of constant u.
    """
    x, y, W = joint.x, joint.y, joint.values
    gx, gy, gu = (np.asarray(g, dtype=float) for g in grids)
    along_x = np.interp(gx, x, trapezoid(W, y, axis=1), left=0.0, right=0.0)
    along_y = np.interp(gy, y, trapezoid(W, x, axis=0), left=0.0, right=0.0)
    h = min(x[1] - x[0], y[1] - y[0])
    reach = SQRT2 * max(np.abs([x[0], x[-1], y[0], y[-1]]).max(), 1.0)
    v = np.arange(-reach, reach + 0.5 * h, h)
    U, V = np.meshgrid(gu, v, indexing="ij")
    X, Y = (U - V) / SQRT2, (U + V) / SQRT2
    ix = (X - x[0]) / (x[1] - x[0])
    iy = (Y - y[0]) / (y[1] - y[0])
    vals = map_coordinates(W, [ix, iy], order=1, mode="constant", cval=0.0)
    along_u = trapezoid(vals, v, axis=1)
    ms = [Marginal(lbl, g, m) for lbl, g, m in zip(labels, (gx, gy, gu), (along_x, along_y, along_u))]
    return MarginalTriple(*ms)


@dataclass
class MetricReport:
    l1_per_marginal: tuple
    negativity_volume: float
    out_of_gamut_fraction: float
    l2_image: float | None = None
    l1_relative: tuple = ()
    reliable: bool = True
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def decode_and_project(pred_img, grids, labels, cfg: ColorMapConfig, window):
    """Decoded joint on ``window`` and its three marginals on ``grids``."""
    ch = _channels(pred_img)
    axis = np.linspace(window[0], window[1], ch.shape[-1])
    joint = decode_image(ch, cfg, axis, axis)
    return joint, joint_marginals(joint, grids, labels)


def gt_deficient_verify(pred_img, gt_marginals: MarginalTriple, cfg: ColorMapConfig, window, gt_img=None) -> MetricReport:
    """Decode a predicted image on ``window`` and compare its marginals with the ground truth."""
    ch = _channels(pred_img)
    joint, pred = decode_and_project(ch, [m.grid for m in gt_marginals], [m.axis_label for m in gt_marginals], cfg, window)
    l1 = tuple(l1_marginal(g, p) for g, p in zip(gt_marginals, pred))
    rel = tuple(v / g.peak() for v, g in zip(l1, gt_marginals))
    gamut = joint.meta["out_of_gamut_fraction"]
    flags = []
    reliable = gamut <= UNRELIABLE_FRACTION
    if not reliable:
        flags.append("out-of-gamut")
    g1, g13, _ = gt_marginals
    p1, p13, _ = pred
    swapped = l1_marginal(g1, p13) + l1_marginal(g13, p1)
    if swapped < 0.5 * (l1[0] + l1[1]):
        flags.append("x1/x13 swapped")
    return MetricReport(
        l1_per_marginal=l1,
        negativity_volume=negativity_volume(joint),
        out_of_gamut_fraction=gamut,
        l2_image=l2_image(gt_img, ch) if gt_img is not None else None,
        l1_relative=rel,
        reliable=reliable,
        flags=flags,
        meta={"pixels": int(ch.size), "window": list(window)},
    )
