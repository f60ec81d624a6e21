"""Style descriptors: gram statistics of a fixed random conv stack, reduced by PCA.

The extractor is never trained. It only has to be deterministic and fixed for
the lifetime of a run, so a seeded random-weight stack stands in for a
pretrained network.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class StyleError(ValueError):
    pass


def gram_matrix(activations: np.ndarray) -> np.ndarray:
    """Normalized gram matrix ``F F^T / (N M)`` of an ``N x M`` activation matrix."""
    f = np.asarray(activations, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
        raise StyleError(f"expected a non-empty 2-D activation matrix, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise StyleError("activations contain non-finite values")
    n, m = f.shape
    g = (f @ f.T) / (n * m)
    # matmul may round g[i, j] and g[j, i] differently
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


def gram_matrices(activations: np.ndarray) -> np.ndarray:
    """Batched :func:`gram_matrix` for an array of shape ``(S, N, M)``."""
    f = np.asarray(activations, dtype=np.float64)
    if f.ndim != 3 or f.shape[1] < 1 or f.shape[2] < 1:
        raise StyleError(f"expected (samples, maps, elements), got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise StyleError("activations contain non-finite values")
    _, n, m = f.shape
    g = np.einsum("sim,sjm->sij", f, f) / (n * m)
    iu = np.triu_indices(n, 1)
    g[:, iu[1], iu[0]] = g[:, iu[0], iu[1]]
    return g


def triangle_size(n: int) -> int:
    return n * (n + 1) // 2


def raw_style_vector(layers: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate the row-major upper triangles (with diagonal) of each layer's gram."""
    if len(layers) == 0:
        raise StyleError("feature map set has no layers")
    parts = []
    for act in layers:
        g = gram_matrix(act)
        parts.append(g[np.triu_indices(g.shape[0])])
    return np.concatenate(parts)


def _raw_style_vectors(layers: Sequence[np.ndarray]) -> np.ndarray:
    # batched variant; each item is (S, N_l, M_l)
    if len(layers) == 0:
        raise StyleError("feature map set has no layers")
    parts = []
    for act in layers:
        g = gram_matrices(act)
        iu = np.triu_indices(g.shape[1])
        parts.append(g[:, iu[0], iu[1]])
    return np.concatenate(parts, axis=1)


def _conv_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x: (S, C_in, H, W), w: (C_out, C_in, k, k) -> (S, C_out, H-k+1, W-k+1)
    k = w.shape[-1]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return np.einsum("schwij,ocij->sohw", win, w, optimize=True)


@dataclass(frozen=True)
class StyleExtractor:
    """Fixed random-weight conv stack with clamp-at-zero after each layer."""

    seed: int = 0
    widths: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    in_channels: int = 1
    zero_mean_first: bool = True
    weights: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise StyleError(f"invalid layer widths {self.widths}")
        rng = np.random.default_rng(self.seed)
        weights = []
        c_in = self.in_channels
        for c_out in self.widths:
            fan_in = c_in * self.kernel_size ** 2
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, self.kernel_size, self.kernel_size))
            if not weights and self.zero_mean_first:
                # first layer sees edges and texture, not flat intensity
                w -= w.mean(axis=(2, 3), keepdims=True)
            w.setflags(write=False)
            weights.append(w)
            c_in = c_out
        object.__setattr__(self, "weights", tuple(weights))

    @property
    def raw_dim(self) -> int:
        return sum(triangle_size(w) for w in self.widths)

    def feature_maps(self, patches: np.ndarray) -> list[np.ndarray]:
        """Per-layer activations, each of shape ``(S, N_l, M_l)``.

        ``patches`` is ``(S, H, W)`` or a single ``(H, W)`` patch (returned with S=1).
        """
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise StyleError(f"expected patches of shape (S, H, W), got {x.shape}")
        min_side = len(self.widths) * (self.kernel_size - 1) + 1
        if min(x.shape[1:]) < min_side:
            raise StyleError(f"patch {x.shape[1:]} too small for {len(self.widths)} conv layers")
        x = x[:, None]
        out = []
        for w in self.weights:
            x = np.maximum(_conv_valid(x, w), 0.0)
            out.append(x.reshape(x.shape[0], x.shape[1], -1))
        return out

    def raw_vectors(self, patches: np.ndarray) -> np.ndarray:
        return _raw_style_vectors(self.feature_maps(patches))

    def raw_vector(self, patch: np.ndarray) -> np.ndarray:
        return self.raw_vectors(np.asarray(patch)[None])[0]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (e, d), orthonormal rows
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    def project(self, vectors: np.ndarray) -> np.ndarray:
        v = np.asarray(vectors, dtype=np.float64)
        if v.shape[-1] != self.input_dim:
            raise StyleError(f"vector length {v.shape[-1]} does not match PCA input dimension {self.input_dim}")
        return (v - self.mean) @ self.components.T

    def reconstruct(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords) @ self.components + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "variances": self.explained_variance.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            components=np.asarray(d["components"], dtype=np.float64),
            explained_variance=np.asarray(d["variances"], dtype=np.float64),
        )

    @classmethod
    def from_json(cls, s: str) -> "PcaModel":
        return cls.from_dict(json.loads(s))


def fit_pca(vectors: np.ndarray, e: int) -> PcaModel:
    """Fit an ``e``-component PCA by eigendecomposition of the sample covariance.

    Component signs are fixed so that each row's largest-magnitude entry is
    positive, which makes the fit reproducible across platforms.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise StyleError("expected a 2-D array of vectors")
    n, d = x.shape
    if e < 1:
        raise StyleError("e must be at least 1")
    if n < e + 1:
        raise StyleError(f"need at least e+1={e + 1} vectors to fit {e} components, got {n}")
    if d < e:
        raise StyleError(f"vector length {d} is smaller than e={e}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    if not np.any(np.abs(xc) > 0) or np.trace(cov) <= 0.0:
        raise StyleError("zero variance: all input vectors are identical")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:e]
    comps = evecs[:, order].T.copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(e), pivot])
    comps *= signs[:, None]
    variances = np.clip(evals[order], 0.0, None)
    for a in (mean, comps, variances):
        a.setflags(write=False)
    return PcaModel(mean=mean, components=comps, explained_variance=variances)


@dataclass(frozen=True)
class StyleEmbedder:
    """Extractor plus base-fitted PCA; maps patches to style embeddings."""

    extractor: StyleExtractor
    pca: PcaModel

    @classmethod
    def fit(cls, extractor: StyleExtractor, base_patches: np.ndarray, e: int) -> "StyleEmbedder":
        return cls(extractor, fit_pca(extractor.raw_vectors(base_patches), e))

    @property
    def dim(self) -> int:
        return self.pca.n_components

    def embed(self, patch: np.ndarray) -> np.ndarray:
        return self.embed_many(np.asarray(patch)[None])[0]

    def embed_many(self, patches: np.ndarray) -> np.ndarray:
        raw = self.extractor.raw_vectors(patches)
        if raw.shape[1] != self.pca.input_dim:
            raise StyleError(f"raw style vector length {raw.shape[1]} != PCA input dimension {self.pca.input_dim}")
        return self.pca.project(raw)


def embed(sample, extractor: StyleExtractor, pca: PcaModel) -> np.ndarray:
    """Style embedding of one sample (anything with a ``patch``, or a bare 2-D patch)."""
    patch = getattr(sample, "patch", sample)
    out = StyleEmbedder(extractor, pca).embed(patch)
    if not np.all(np.isfinite(out)):
        raise StyleError("embedding is not finite")
    return out
