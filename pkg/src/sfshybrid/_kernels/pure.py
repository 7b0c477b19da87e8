"""NumPy implementations of the per-pixel kernels.

Reference backend; the compiled extension in ``_native`` mirrors these
signatures one to one. Reductions use einsum so the summation order is
fixed and results are reproducible run to run.
"""

import numpy as np

BACKEND_NAME = "pure"


def albedo_correct(intensity, albedo):
    """Divide each pixel intensity by its albedo."""
    return intensity / albedo


def project_image(corrected, mirror):
    """Contract an m-vector image against the m x 3 mirror weights."""
    return np.einsum("i,ij->j", corrected, mirror)


def field_dot(vectors, direction):
    """Per-pixel dot product of an m x 3 field with one direction."""
    return np.einsum("ij,j->i", vectors, direction)


def specular_lobe(dots, r):
    """Clamped power lobe max(0, dot)^r."""
    return np.maximum(dots, 0.0) ** r


def minmax_scale(raw):
    """Affinely map raw values onto [0, 1].

    Returns (scaled, width) where width = max - min. A constant input has
    width 0 and maps to all zeros.
    """
    lo = float(raw.min())
    hi = float(raw.max())
    width = hi - lo
    if width == 0.0:
        return np.zeros_like(raw), 0.0
    return (raw - lo) / width, width


def convex_mix(r_d, r_s, lam_d, lam_s):
    """Per-pixel convex combination lam_d*r_d + lam_s*r_s."""
    return lam_d * r_d + lam_s * r_s


def sum_sq_err(pred, target):
    """Sum of squared residuals."""
    diff = pred - target
    return float(np.einsum("i,i->", diff, diff))


def scaled_outer(residual, direction, coeff, scale=None):
    """Per-pixel update block coeff * residual_k [* scale_k] * direction_j."""
    weight = residual * coeff if scale is None else residual * scale * coeff
    return weight[:, None] * direction[None, :]


def add_renorm_rows(vectors, delta):
    """Add delta to each row and rescale rows to unit length.

    Returns (unit_rows, min_norm) where min_norm is the smallest row norm
    before rescaling; the caller decides whether it is degenerate.
    """
    out = vectors + delta
    norms = np.sqrt(np.einsum("ij,ij->i", out, out))
    min_norm = float(norms.min())
    safe = np.where(norms > 0.0, norms, 1.0)
    return out / safe[:, None], min_norm


def lambda_apply(lam_d, lam_s, delta_d, delta_s, floor):
    """Apply combination-weight deltas, floor, and renormalize to sum 1."""
    new_d = np.maximum(lam_d + delta_d, floor)
    new_s = np.maximum(lam_s + delta_s, floor)
    total = new_d + new_s
    new_d = np.clip(new_d / total, floor, 1.0 - floor)
    return new_d, 1.0 - new_d


def combine_renorm(n_d, n_s, lam_d, lam_s):
    """Blend two unit fields with per-pixel weights and renormalize.

    Returns (unit_rows, min_norm) as in add_renorm_rows.
    """
    out = lam_d[:, None] * n_d + lam_s[:, None] * n_s
    norms = np.sqrt(np.einsum("ij,ij->i", out, out))
    min_norm = float(norms.min())
    safe = np.where(norms > 0.0, norms, 1.0)
    return out / safe[:, None], min_norm
