"""Expectation-maximization attention over voxel features.

The block projects a feature map into a working width, runs a few EM rounds
that fit a small dictionary of unit-norm bases to the voxel population, and
adds the low-rank reconstruction back onto the input through an output
projection. Base estimation happens per call; only the initial bases and
the two pointwise projections are learned state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import ConvSpec, conv3d, softmax
from .validation import as_tensor4

# columns whose mass collapses below this are treated as unassigned
_DEGENERATE_NORM = 1e-12


def normalize_columns(bases):
    """Scale each column to unit L2 norm; zero-norm columns are rejected."""
    b = np.asarray(bases, dtype=np.float32)
    if b.ndim != 2:
        raise ValueError(f"bases must be 2D (features, num_bases), got {b.ndim} axes")
    norms = np.linalg.norm(b.astype(np.float64), axis=0)
    if np.any(norms < _DEGENERATE_NORM):
        raise ValueError("bases contain a zero-norm column")
    return (b.astype(np.float64) / norms).astype(np.float32)


@dataclass
class EmaParams:
    """Learned state for the attention block.

    conv_in / conv_out are pointwise (1x1x1) projections stored as 5D conv
    weights plus biases. `bases` holds the initial dictionary, one unit-norm
    column per base; columns are renormalized on construction so weights
    loaded from disk cannot drift away from the unit sphere.
    """

    conv_in_weight: np.ndarray
    conv_in_bias: np.ndarray
    conv_out_weight: np.ndarray
    conv_out_bias: np.ndarray
    bases: np.ndarray
    iterations: int = 3
    in_spec: ConvSpec = field(init=False, repr=False)
    out_spec: ConvSpec = field(init=False, repr=False)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        w_in = np.asarray(self.conv_in_weight, dtype=np.float32)
        w_out = np.asarray(self.conv_out_weight, dtype=np.float32)
        if w_in.ndim != 5 or w_in.shape[2:] != (1, 1, 1):
            raise ValueError(f"conv_in_weight must be (C', C, 1, 1, 1), got {w_in.shape}")
        if w_out.ndim != 5 or w_out.shape[2:] != (1, 1, 1):
            raise ValueError(f"conv_out_weight must be (C, C', 1, 1, 1), got {w_out.shape}")
        hidden, channels = w_in.shape[:2]
        if w_out.shape[:2] != (channels, hidden):
            raise ValueError(
                f"conv_out_weight {w_out.shape[:2]} does not mirror conv_in {w_in.shape[:2]}"
            )
        self.bases = normalize_columns(self.bases)
        if self.bases.shape[0] != hidden:
            raise ValueError(
                f"bases have {self.bases.shape[0]} rows, projections use width {hidden}"
            )
        self.conv_in_weight = w_in
        self.conv_out_weight = w_out
        self.conv_in_bias = np.asarray(self.conv_in_bias, dtype=np.float32)
        self.conv_out_bias = np.asarray(self.conv_out_bias, dtype=np.float32)
        self.in_spec = ConvSpec(channels, hidden, kernel=(1, 1, 1), padding=(0, 0, 0), has_bias=True)
        self.out_spec = ConvSpec(hidden, channels, kernel=(1, 1, 1), padding=(0, 0, 0), has_bias=True)

    @property
    def hidden_width(self):
        return self.conv_in_weight.shape[0]

    @property
    def num_bases(self):
        return self.bases.shape[1]


def e_step(features, bases):
    """Soft-assign voxels to bases: row-softmax of features @ bases.

    features: (N, C'), bases: (C', K). Each returned row sums to 1.
    """
    f = np.asarray(features, dtype=np.float32)
    b = np.asarray(bases, dtype=np.float32)
    if f.ndim != 2 or b.ndim != 2 or f.shape[1] != b.shape[0]:
        raise ValueError(
            f"e_step shapes incompatible: features {f.shape}, bases {b.shape}"
        )
    return softmax(f @ b, axis=1)


def m_step(features, attention, prev_bases):
    """Re-estimate bases as attention-weighted feature means, unit-normalized.

    Columns whose attention mass underflows keep their previous direction
    instead of dividing by ~0.
    """
    f = np.asarray(features, dtype=np.float32)
    a = np.asarray(attention, dtype=np.float32)
    prev = np.asarray(prev_bases, dtype=np.float32)
    if f.shape[0] != a.shape[0]:
        raise ValueError(f"m_step: {f.shape[0]} feature rows vs {a.shape[0]} attention rows")
    weighted = (f.T @ a).astype(np.float64)
    mass = a.sum(axis=0, dtype=np.float64)
    safe_mass = np.where(mass > _DEGENERATE_NORM, mass, 1.0)
    mu = weighted / safe_mass
    norms = np.linalg.norm(mu, axis=0)
    degenerate = (mass <= _DEGENERATE_NORM) | (norms < _DEGENERATE_NORM)
    safe_norms = np.where(degenerate, 1.0, norms)
    out = (mu / safe_norms).astype(np.float32)
    if degenerate.any():
        out[:, degenerate] = prev[:, degenerate]
    return out


def em_attention(x, params: EmaParams):
    """Residual EM-attention pass over a (C, D, H, W) feature map.

    Projects in, alternates e_step / m_step for params.iterations rounds,
    reconstructs each voxel from its soft assignment, projects out, and adds
    the result onto the input.
    """
    x = as_tensor4(x, channels=params.in_spec.in_channels, name="attention input")
    hidden = conv3d(x, params.conv_in_weight, params.conv_in_bias, params.in_spec)
    c_hidden = hidden.shape[0]
    spatial = hidden.shape[1:]
    flat = hidden.reshape(c_hidden, -1).T  # (N, C')

    mu = params.bases
    att = None
    for _ in range(params.iterations):
        att = e_step(flat, mu)
        mu = m_step(flat, att, mu)

    recon = (att @ mu.T).T.reshape((c_hidden,) + spatial)
    recon = np.ascontiguousarray(recon, dtype=np.float32)
    return x + conv3d(recon, params.conv_out_weight, params.conv_out_bias, params.out_spec)
