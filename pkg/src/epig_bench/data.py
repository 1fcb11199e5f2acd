"""Dataset sources: a 2D Gaussian-mixture generator with a junk region, and IDX files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LabeledExample

IDX_UBYTE_3D = 0x00000803
IDX_UBYTE_1D = 0x00000801


class IdxFormatError(ValueError):
    pass


class DegenerateCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional Gaussian clusters plus a uniform junk box.

    Each cluster has a mean, an isotropic std (or full covariance), a class
    and a mixing weight.  Junk examples are uniform over ``junk_low`` ..
    ``junk_high`` and carry a uniform soft target.
    """

    means: tuple
    stds: tuple
    classes: tuple
    weights: Optional[tuple] = None
    junk_low: tuple = (6.0, -6.0)
    junk_high: tuple = (14.0, 6.0)
    covariances: Optional[tuple] = None

    @property
    def n_classes(self) -> int:
        return int(max(self.classes)) + 1

    @property
    def dim(self) -> int:
        return len(self.means[0])


def ring_spec(
    n_classes: int = 4,
    n_clusters: int = 8,
    radius: float = 3.0,
    std: float = 0.7,
    junk_low=(6.0, -6.0),
    junk_high=(14.0, 6.0),
) -> SyntheticSpec:
    """Clusters evenly spaced on a circle, classes assigned round-robin."""
    angles = 2 * np.pi * np.arange(n_clusters) / n_clusters
    means = tuple((float(radius * np.cos(a)), float(radius * np.sin(a))) for a in angles)
    return SyntheticSpec(
        means=means,
        stds=(float(std),) * n_clusters,
        classes=tuple(i % n_classes for i in range(n_clusters)),
        junk_low=tuple(junk_low),
        junk_high=tuple(junk_high),
    )


def _cluster_factors(spec: SyntheticSpec) -> list:
    d = spec.dim
    factors = []
    for k in range(len(spec.means)):
        if spec.covariances is not None:
            cov = np.asarray(spec.covariances[k], dtype=np.float64).reshape(d, d)
            if not np.allclose(cov, cov.T):
                raise DegenerateCovarianceError(f"covariance of cluster {k} is not symmetric")
            vals, vecs = np.linalg.eigh(cov)
            if vals.min() < -1e-12:
                raise DegenerateCovarianceError(f"covariance of cluster {k} is not positive semi-definite")
            factors.append(vecs * np.sqrt(np.clip(vals, 0, None)))
        else:
            s = float(spec.stds[k])
            if not np.isfinite(s) or s < 0:
                raise DegenerateCovarianceError(f"cluster {k} has invalid std {s}")
            factors.append(np.eye(d) * s)
    return factors


def gen_synthetic(spec: SyntheticSpec, n: int, seed: int, n_ood: int = 0) -> list:
    """``n`` in-distribution examples followed by ``n_ood`` junk examples."""
    rng = np.random.default_rng(seed)
    factors = _cluster_factors(spec)
    K = len(spec.means)
    w = np.ones(K) / K if spec.weights is None else np.asarray(spec.weights, dtype=np.float64)
    w = w / w.sum()
    comp = rng.choice(K, size=n, p=w)
    z = rng.standard_normal((n, spec.dim))
    means = np.asarray(spec.means, dtype=np.float64)
    out = []
    for i in range(n):
        x = means[comp[i]] + factors[comp[i]] @ z[i]
        out.append(LabeledExample(x, int(spec.classes[comp[i]])))
    if n_ood:
        lo, hi = np.asarray(spec.junk_low, dtype=np.float64), np.asarray(spec.junk_high, dtype=np.float64)
        junk = rng.uniform(lo, hi, size=(n_ood, spec.dim))
        uniform = np.full(spec.n_classes, 1.0 / spec.n_classes)
        out.extend(LabeledExample(x, uniform, is_ood=True) for x in junk)
    return out


def _read_header(f, path, expected_magic):
    raw = f.read(4)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw)
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    raw = f.read(4 * ndim)
    if len(raw) < 4 * ndim:
        raise IdxFormatError(f"{path}: truncated dimension sizes")
    return struct.unpack(f">{ndim}I", raw)


def read_idx(path, expected_magic) -> np.ndarray:
    with open(path, "rb") as f:
        dims = _read_header(f, path, expected_magic)
        payload = f.read()
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise IdxFormatError(f"{path}: payload has {len(payload)} bytes, header declares {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path, array) -> None:
    a = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | a.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def load_idx(images_path, labels_path) -> list:
    images = read_idx(images_path, IDX_UBYTE_3D)
    labels = read_idx(labels_path, IDX_UBYTE_1D)
    if len(images) != len(labels):
        raise IdxFormatError(f"count mismatch: {len(images)} images, {len(labels)} labels")
    flat = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return [LabeledExample(x, int(y)) for x, y in zip(flat, labels)]
