"""Training datasets on disk.

Layout of a dataset directory::

    manifest.json                 counts, seed, preset, grids, colour map, digests
    {split}_params.f32            (N, P) sampled parameters
    {split}_features.f32          (N, 3, 721) marginals
    {split}_labels.f32            (N, 3, S, S) encoded images

All arrays are little-endian float32, row-major.  A build writes into a
temporary sibling directory that is renamed into place only on success.
With ``materialize=False`` only the parameter tables are written, which is
enough to pin down every sample (features and labels are pure functions of
the parameters).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import synth
from .colormap import ColorMapConfig, encode_grid
from .grids import MARGINAL_POINTS, uniform_axis
from .wigner import (
    NoisyStateParams,
    WignerGridConfig,
    fock_density,
    marginals_closed_form,
    wigner_closed_form,
    wigner_from_density,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DTYPE = "<f4"
CHUNK = 256
WORKERS_ENV = "QUASIRECON_WORKERS"
PRESETS = ("cher-superohmic", "cher-drudelorentz", "wigner")


class DatasetError(RuntimeError):
    pass


# --- Wigner parameters ---------------------------------------------------------


@dataclass(frozen=True)
class WignerPreset:
    name: str = "wigner"
    n_coherent: int = 16_000
    n_cat: int = 18_000
    n_test: int = 100
    alpha_range: tuple = (-2.0, 2.0)
    mu: tuple = (0.5, 1.0)
    nbar: tuple = (0.0, 2.0)
    window: tuple = (-6.0, 6.0)

    @property
    def n_train(self) -> int:
        return self.n_coherent + self.n_cat

    def to_dict(self):
        return asdict(self)

    def with_counts(self, n_coherent, n_cat, n_test=None):
        d = self.to_dict()
        d.update(n_coherent=n_coherent, n_cat=n_cat, n_test=self.n_test if n_test is None else n_test)
        return WignerPreset(**d)


WIGNER_SPLITS = {"coherent": 0, "cat": 1, "test": 2}
WIGNER_COLUMNS = ("is_cat", "alpha_re", "alpha_im", "theta_rel", "mu", "nbar")


def sample_wigner_params(seed: int, preset: WignerPreset, split: str, index: int) -> NoisyStateParams:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(WIGNER_SPLITS[split], index)))
    lo, hi = preset.alpha_range
    re, im = lo + (hi - lo) * rng.random(2)
    theta = 2 * np.pi * rng.random()
    mu = preset.mu[0] + (preset.mu[1] - preset.mu[0]) * rng.random()
    nbar = preset.nbar[0] + (preset.nbar[1] - preset.nbar[0]) * rng.random()
    cat = split == "cat" or (split == "test" and rng.random() < 0.5)
    return NoisyStateParams("cat" if cat else "coherent", complex(re, im), theta if cat else 0.0, mu, nbar)


def _wigner_row(p: NoisyStateParams):
    return [float(p.kind == "cat"), p.alpha.real, p.alpha.imag, p.theta_rel, p.mu, p.nbar]


def _wigner_from_row(row) -> NoisyStateParams:
    return NoisyStateParams("cat" if row[0] > 0.5 else "coherent", complex(row[1], row[2]), row[3], row[4], row[5])


# --- generation --------------------------------------------------------------


def resolve_preset(name: str):
    if name == "wigner":
        return WignerPreset()
    return synth.cher_preset(name)


def colormap_for(preset) -> ColorMapConfig:
    if isinstance(preset, WignerPreset):
        return ColorMapConfig.wigner()
    return ColorMapConfig.cher_scaled(preset.z_max)


def _split_plan(preset):
    """(split name, [(sampling split, count), ...]) in storage order."""
    if isinstance(preset, WignerPreset):
        return [("train", [("coherent", preset.n_coherent), ("cat", preset.n_cat)]), ("test", [("test", preset.n_test)])]
    return [("train", [("plain", preset.n_plain), ("signed", preset.n_signed)]), ("test", [("test", preset.n_test)])]


def _param_rows(preset, seed, parts):
    rows = []
    for split, count in parts:
        for i in range(count):
            if isinstance(preset, WignerPreset):
                rows.append(_wigner_row(sample_wigner_params(seed, preset, split, i)))
            else:
                rows.append(synth.sample_params(seed, preset, split, i).to_row())
    width = len(WIGNER_COLUMNS) if isinstance(preset, WignerPreset) else synth.PARAM_COLUMNS
    return np.asarray(rows, dtype=np.float64).reshape(-1, width)


def _render_chunk(args):
    """Features and labels for a block of parameter rows (worker entry point)."""
    preset, rows, image_size = args
    cmap = colormap_for(preset)
    n = len(rows)
    feats = np.empty((n, 3, MARGINAL_POINTS), dtype=np.float32)
    labels = np.empty((n, 3, image_size, image_size), dtype=np.float32)
    saturated = 0
    if isinstance(preset, WignerPreset):
        grid = WignerGridConfig(window=preset.window, n_joint=image_size)
        for k, row in enumerate(rows):
            p = _wigner_from_row(row)
            feats[k] = marginals_closed_form(p, grid).as_array()
            img = encode_grid(wigner_closed_form(p, grid), cmap)
            labels[k] = img.channels
            saturated += img.meta["saturated_pixels"]
    else:
        axis = uniform_axis(*preset.window, image_size)
        for k, row in enumerate(rows):
            s = synth.SyntheticSample.from_row(row)
            feats[k] = synth.analytic_marginals(s, preset.window).as_array()
            img = encode_grid(synth.eval_joint(s, axis), cmap)
            labels[k] = img.channels
            saturated += img.meta["saturated_pixels"]
    return feats, labels, saturated


def validate_closed_form(preset: WignerPreset, seed: int, tol: float = 1e-6, n_grid: int = 64):
    """Check the fast Wigner path against the Fock-basis channel before use."""
    grid = WignerGridConfig(window=preset.window, n_joint=n_grid)
    worst = 0.0
    for split in ("coherent", "cat"):
        p = sample_wigner_params(seed, preset, split, 0)
        ref = wigner_from_density(fock_density(p), grid).values
        worst = max(worst, float(np.abs(ref - wigner_closed_form(p, grid).values).max()))
    if worst > tol:
        raise DatasetError(f"closed-form Wigner deviates from the Fock oracle by {worst:.2e}")
    return worst


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


class _HashingWriter:
    def __init__(self, path):
        self.path = path
        self.fh = open(path, "wb")
        self.sha = hashlib.sha256()
        self.rows = 0

    def write(self, arr):
        b = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        self.fh.write(b)
        self.sha.update(b)
        self.rows += arr.shape[0]

    def close(self):
        self.fh.close()
        return self.sha.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def manifest_digest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "digest"}
    return hashlib.sha256(_canonical(body).encode()).hexdigest()


def build_dataset(preset, out, seed: int, image_size: int = 256, materialize: bool = True, overwrite: bool = False) -> dict:
    """Generate a dataset directory and return its manifest."""
    if isinstance(preset, str):
        preset = resolve_preset(preset)
    out = Path(out)
    if out.exists() and not overwrite:
        raise DatasetError(f"{out} exists; pass overwrite=True to replace it")
    if image_size not in (64, 128, 256):
        raise DatasetError("image_size must be 64, 128 or 256")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.partial-", dir=out.parent))
    try:
        manifest = _build_into(preset, tmp, int(seed), image_size, materialize)
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


def _build_into(preset, root: Path, seed, image_size, materialize):
    wigner = isinstance(preset, WignerPreset)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "wigner" if wigner else "cher-synthetic",
        "preset": preset.to_dict(),
        "seed": seed,
        "dtype": DTYPE,
        "image_size": image_size,
        "marginal_points": MARGINAL_POINTS,
        "window": list(preset.window),
        "colormap": colormap_for(preset).to_dict(),
        "param_columns": list(WIGNER_COLUMNS) if wigner else synth.PARAM_COLUMNS,
        "materialized": materialize,
        "splits": {},
        "files": {},
    }
    if wigner and materialize:
        manifest["closed_form_check"] = validate_closed_form(preset, seed)
    stats = None
    saturated = 0
    for split, parts in _split_plan(preset):
        rows = _param_rows(preset, seed, parts)
        manifest["splits"][split] = {"count": int(rows.shape[0]), "parts": {k: int(c) for k, c in parts}}
        w = _HashingWriter(root / f"{split}_params.f32")
        w.write(rows)
        manifest["files"][f"{split}_params"] = {"shape": list(rows.shape), "sha256": w.close()}
        if not materialize:
            continue
        fw = _HashingWriter(root / f"{split}_features.f32")
        lw = _HashingWriter(root / f"{split}_labels.f32")
        jobs = [(preset, rows[i : i + CHUNK], image_size) for i in range(0, rows.shape[0], CHUNK)]
        acc = np.zeros((3, 2))
        workers = _workers()
        pool = ProcessPoolExecutor(workers) if workers > 1 else None
        try:
            results = pool.map(_render_chunk, jobs) if pool else map(_render_chunk, jobs)
            for feats, labels, sat in results:
                fw.write(feats)
                lw.write(labels)
                saturated += sat
                f64 = feats.astype(np.float64)
                acc[:, 0] += f64.sum(axis=(0, 2))
                acc[:, 1] += (f64 * f64).sum(axis=(0, 2))
        finally:
            if pool:
                pool.shutdown()
        n = rows.shape[0]
        manifest["files"][f"{split}_features"] = {"shape": [n, 3, MARGINAL_POINTS], "sha256": fw.close()}
        manifest["files"][f"{split}_labels"] = {"shape": [n, 3, image_size, image_size], "sha256": lw.close()}
        if split == "train" and n:
            cnt = n * MARGINAL_POINTS
            mean = acc[:, 0] / cnt
            std = np.sqrt(np.maximum(acc[:, 1] / cnt - mean * mean, 1e-30))
            # rounded so that the manifest does not depend on the chunking
            stats = {"mean": [float(f"{v:.10g}") for v in mean], "std": [float(f"{v:.10g}") for v in std]}
    if materialize:
        manifest["feature_stats"] = stats
        manifest["saturated_pixels"] = int(saturated)
    manifest["digest"] = manifest_digest(manifest)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return manifest


# --- reading -----------------------------------------------------------------


class Dataset:
    """Read-only view of a dataset directory (arrays are memory-mapped)."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.exists():
            raise DatasetError(f"no manifest in {self.root}")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise DatasetError("unsupported dataset format version")

    def _array(self, name):
        meta = self.manifest["files"].get(name)
        if meta is None:
            raise DatasetError(f"{name} is not part of this dataset (materialized={self.manifest['materialized']})")
        return np.memmap(self.root / f"{name}.f32", dtype=DTYPE, mode="r", shape=tuple(meta["shape"]))

    def params(self, split="train"):
        return self._array(f"{split}_params")

    def features(self, split="train"):
        return self._array(f"{split}_features")

    def labels(self, split="train"):
        return self._array(f"{split}_labels")

    def __len__(self):
        return self.manifest["splits"]["train"]["count"]

    @property
    def window(self):
        return tuple(self.manifest["window"])

    @property
    def colormap(self) -> ColorMapConfig:
        return ColorMapConfig(**self.manifest["colormap"])

    @property
    def digest(self) -> str:
        return self.manifest["digest"]

    def verify(self) -> bool:
        """Recompute file hashes and the manifest digest."""
        for name, meta in self.manifest["files"].items():
            h = hashlib.sha256((self.root / f"{name}.f32").read_bytes()).hexdigest()
            if h != meta["sha256"]:
                return False
        return manifest_digest(self.manifest) == self.manifest["digest"]
