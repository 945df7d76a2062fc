"""Three-channel colour mapping of quasi-distribution heights.

A height z is rescaled to zeta = (z + z_offset) / z_scale and mapped to
(R, G, B) in [-1, 1]: R responds to large positive heights, B to heights
below the G peak at zeta0 and G is a narrow Gaussian around zeta0.
Decoding finds the nearest point on the (clipped) colour curve.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from .grids import JointGrid

log = logging.getLogger(__name__)

PLATEAU = 1.148
G_WIDTH = 0.0392
LOOKUP_SIZE = 4096
GAMUT_DISTANCE = 0.15
UNRELIABLE_FRACTION = 0.20


@dataclass(frozen=True)
class ColorMapConfig:
    zeta0: float
    z_offset: float
    z_scale: float
    name: str = "custom"

    def __post_init__(self):
        if not self.z_scale > 0:
            raise ValueError("z_scale must be positive")

    @classmethod
    def wigner(cls):
        return cls(zeta0=0.5, z_offset=0.45, z_scale=0.9, name="wigner")

    @classmethod
    def cher(cls):
        return cls(zeta0=1 / 5.5, z_offset=0.01, z_scale=0.055, name="cher")

    @classmethod
    def cher_scaled(cls, z_max: float):
        """CHER curve with the window stretched so that z_max maps to zeta = 1.

        Keeps z_offset / z_scale = zeta0, so z = 0 stays on the G peak.
        """
        zeta0 = 1 / 5.5
        z_scale = z_max / (1 - zeta0)
        return cls(zeta0=zeta0, z_offset=zeta0 * z_scale, z_scale=z_scale, name="cher-scaled")

    @property
    def z_range(self):
        return (-self.z_offset, self.z_scale - self.z_offset)

    def to_dict(self):
        return asdict(self)

    def zeta(self, z):
        return (np.asarray(z, dtype=float) + self.z_offset) / self.z_scale

    def height(self, zeta):
        return np.asarray(zeta, dtype=float) * self.z_scale - self.z_offset

    @cached_property
    def codec(self) -> "_Codec":
        return _Codec(self.zeta0)


def _channels_raw(zeta, zeta0):
    zeta = np.asarray(zeta, dtype=float)
    r = 2 * PLATEAU * expit(25 * (zeta - (zeta0 - 0.12))) * expit(-5 * (zeta - (zeta0 + 0.45))) - 1
    g = 2 * np.exp(-((zeta - zeta0) ** 2) / G_WIDTH) - 1
    b = 2 * PLATEAU * expit(-25 * (zeta - (zeta0 + 0.12))) * expit(5 * (zeta - (zeta0 - 0.45))) - 1
    return np.stack([r, g, b], axis=-1)


def _channels_derivative(zeta, zeta0):
    """d/dzeta of the raw channels (the clipped parts are handled by the caller)."""
    zeta = np.asarray(zeta, dtype=float)
    sa, sb = expit(25 * (zeta - (zeta0 - 0.12))), expit(-5 * (zeta - (zeta0 + 0.45)))
    dr = 2 * PLATEAU * (25 * sa * (1 - sa) * sb - 5 * sa * sb * (1 - sb))
    dg = -2 * (zeta - zeta0) / G_WIDTH * 2 * np.exp(-((zeta - zeta0) ** 2) / G_WIDTH)
    sc, sd = expit(-25 * (zeta - (zeta0 + 0.12))), expit(5 * (zeta - (zeta0 - 0.45)))
    db = 2 * PLATEAU * (-25 * sc * (1 - sc) * sd + 5 * sc * sd * (1 - sd))
    return np.stack([dr, dg, db], axis=-1)


def channel_curve(zeta, zeta0):
    """(R, G, B) clipped to [-1, 1]."""
    return np.clip(_channels_raw(zeta, zeta0), -1.0, 1.0)


class _Codec:
    def __init__(self, zeta0):
        self.zeta0 = zeta0
        self.table_zeta = np.linspace(0.0, 1.0, LOOKUP_SIZE)
        self.table = channel_curve(self.table_zeta, zeta0)
        self.tree = cKDTree(self.table)

    def decode(self, rgb):
        """Nearest curve parameter for each rgb triple, plus its distance."""
        rgb = np.asarray(rgb, dtype=float).reshape(-1, 3)
        dist, idx = self.tree.query(rgb)
        zeta = self.table_zeta[idx]
        # one Gauss-Newton step on |c(zeta) - rgb|^2, confined to the lookup cell
        raw = _channels_raw(zeta, self.zeta0)
        c = np.clip(raw, -1.0, 1.0)
        dc = np.where(np.abs(raw) < 1.0, _channels_derivative(zeta, self.zeta0), 0.0)
        num = np.sum((c - rgb) * dc, axis=-1)
        den = np.sum(dc * dc, axis=-1)
        step = np.divide(-num, den, out=np.zeros_like(num), where=den > 0)
        h = self.table_zeta[1] - self.table_zeta[0]
        zeta = np.clip(zeta + np.clip(step, -h, h), 0.0, 1.0)
        return zeta, dist


def encode_height(z, cfg: ColorMapConfig):
    """Channel values for height(s) z; returns an array with a trailing axis of 3.

    Heights outside the rescale window saturate at zeta = 0 or 1.
    """
    zeta = cfg.zeta(z)
    out_of_range = int(np.count_nonzero((zeta < 0) | (zeta > 1)))
    if out_of_range:
        log.debug("%d heights outside the colour window were saturated", out_of_range)
    return channel_curve(np.clip(zeta, 0.0, 1.0), cfg.zeta0)


@dataclass(frozen=True)
class EncodedImage:
    channels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float32)
        if ch.ndim != 3 or ch.shape[0] != 3 or ch.shape[1] != ch.shape[2]:
            raise ValueError(f"expected a 3xSxS array, got {ch.shape}")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    @property
    def size(self) -> int:
        return self.channels.shape[1]


def encode_grid(joint: JointGrid, cfg: ColorMapConfig) -> EncodedImage:
    """Pixel-wise encoding; channel 0 is R, 1 is G, 2 is B."""
    zeta = cfg.zeta(joint.values)
    clipped = int(np.count_nonzero((zeta < 0) | (zeta > 1)))
    rgb = encode_height(joint.values, cfg)
    return EncodedImage(np.moveaxis(rgb, -1, 0), meta={"saturated_pixels": clipped, "colormap": cfg.to_dict()})


def decode_rgb(rgb, cfg: ColorMapConfig):
    """Height(s) whose encoding is nearest to rgb (trailing axis of 3)."""
    rgb = np.asarray(rgb, dtype=float)
    zeta, dist = cfg.codec.decode(rgb)
    if np.any(dist > GAMUT_DISTANCE):
        log.warning("%d colour(s) lie more than %.2f from the colour curve", int(np.sum(dist > GAMUT_DISTANCE)), GAMUT_DISTANCE)
    z = cfg.height(zeta)
    return z.reshape(rgb.shape[:-1]) if rgb.ndim > 1 else float(z[0])


def decode_image(img, cfg: ColorMapConfig, x=None, y=None) -> JointGrid:
    """Decode a 3xSxS image (EncodedImage or array) back onto a joint grid.

    ``x``/``y`` default to the unit square; callers pass the dataset window.
    """
    ch = img.channels if isinstance(img, EncodedImage) else np.asarray(img)
    size = ch.shape[-1]
    rgb = np.moveaxis(np.asarray(ch, dtype=float), 0, -1).reshape(-1, 3)
    zeta, dist = cfg.codec.decode(rgb)
    values = cfg.height(zeta).reshape(size, size)
    gamut = float(np.mean(dist > GAMUT_DISTANCE))
    if x is None:
        x = np.linspace(0.0, 1.0, size)
    if y is None:
        y = x
    return JointGrid(x, y, values, meta={"out_of_gamut_fraction": gamut})


def injectivity_gap(cfg: ColorMapConfig, n: int = LOOKUP_SIZE, separation: float = 0.01) -> float:
    """Smallest colour distance between curve samples more than ``separation`` apart."""
    zeta = np.linspace(0.0, 1.0, n)
    curve = channel_curve(zeta, cfg.zeta0)
    worst = np.inf
    for lo in range(0, n, 512):
        d = np.linalg.norm(curve[lo : lo + 512, None, :] - curve[None, :, :], axis=-1)
        far = np.abs(zeta[lo : lo + 512, None] - zeta[None, :]) > separation
        worst = min(worst, float(d[far].min()))
    return worst


def false_color(img: EncodedImage) -> np.ndarray:
    """8-bit RGB preview of an encoded image (inspection only)."""
    rgb = (np.moveaxis(img.channels, 0, -1) + 1.0) * 127.5
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
