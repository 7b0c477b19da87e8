"""Domain types and the deterministic forward passes.

The reconstruction model is a pair of mirror-symmetric subnetworks. Each
runs six layers: normalize the input image, divide by albedo, project the
corrected image through the mirror weights to a raw light direction,
normalize that direction, dot it against the per-pixel normals (the
specular subnetwork first swaps the direction for the halfway vector and
raises the clamped dot to a power), and min-max scale the result to
[0, 1]. A per-pixel convex combination of the two subnetwork outputs is
the model's predicted image.

All pixel grids are stored row-major as flat float64 arrays of length
m = width * height.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import (
    DegenerateDirectionError,
    DegenerateNormalError,
    ValidationError,
)

# Unit-norm tolerance for stored vectors.
EPS_UNIT = 1e-9
# Below this, a vector norm counts as zero and cannot be normalized.
EPS_NORM = 1e-12
# Floor for the per-pixel combination weights.
EPS_LAMBDA = 1e-6

DIFFUSE = "diffuse"
SPECULAR = "specular"


def _as_flat_floats(values, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a flat array, got shape {arr.shape}")
    return arr


def as_vector3(v, name: str = "vector") -> np.ndarray:
    """Coerce to a contiguous float64 3-vector."""
    arr = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got {arr.shape}")
    return arr


def require_unit(v, name: str = "vector", tol: float = EPS_UNIT) -> np.ndarray:
    """Validate that v is a unit 3-vector within tol and return it."""
    arr = as_vector3(v, name)
    norm = float(np.sqrt(arr @ arr))
    if abs(norm - 1.0) > tol:
        raise ValidationError(f"{name} must be unit length, |v| = {norm!r}")
    return arr


@dataclass(frozen=True)
class IntensityImage:
    """Grayscale image, values in [0, 1], row-major."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_flat_floats(self.values, "image values"))
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be positive")
        if self.values.size != self.width * self.height:
            raise ValidationError(
                f"image has {self.values.size} values, expected {self.width * self.height}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("image values must be finite")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")

    @property
    def pixel_count(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class AlbedoMap:
    """Per-pixel surface reflectivity in (0, 1], row-major."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_flat_floats(self.values, "albedo values"))
        if self.values.size != self.width * self.height:
            raise ValidationError(
                f"albedo has {self.values.size} values, expected {self.width * self.height}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("albedo values must be finite")
        if self.values.min() <= 0.0 or self.values.max() > 1.0:
            raise ValidationError("albedo values must lie in (0, 1]")

    @classmethod
    def constant(cls, width: int, height: int, value: float = 1.0) -> "AlbedoMap":
        return cls(width, height, np.full(width * height, float(value)))


@dataclass(frozen=True)
class NormalField:
    """m unit 3-vectors, row-major pixel correspondence."""

    vectors: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValidationError(f"normal field must be m x 3, got {arr.shape}")
        object.__setattr__(self, "vectors", arr)
        norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
        bad = np.abs(norms - 1.0) > EPS_UNIT
        if bad.any():
            idx = int(np.argmax(bad))
            raise ValidationError(
                f"normal at pixel {idx} is not unit length (|n| = {norms[idx]!r})"
            )

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class MirrorWeights:
    """m x 3 weight matrix mapping a corrected image to a raw direction."""

    matrix: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValidationError(f"mirror weights must be m x 3, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("mirror weights must be finite")
        object.__setattr__(self, "matrix", arr)

    def __len__(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class CombinationWeights:
    """Per-pixel convex mixing ratios (lam_d, lam_s), summing to 1."""

    lam_d: np.ndarray
    lam_s: np.ndarray
    floor: float = EPS_LAMBDA

    def __post_init__(self):
        object.__setattr__(self, "lam_d", _as_flat_floats(self.lam_d, "lam_d"))
        object.__setattr__(self, "lam_s", _as_flat_floats(self.lam_s, "lam_s"))
        if self.lam_d.size != self.lam_s.size:
            raise ValidationError("lam_d and lam_s must have equal length")
        if self.floor <= 0.0:
            raise ValidationError("lambda floor must be positive")
        if np.abs(self.lam_d + self.lam_s - 1.0).max() > EPS_UNIT:
            raise ValidationError("combination weights must sum to 1 per pixel")
        if self.lam_d.min() < self.floor or self.lam_s.min() < self.floor:
            raise ValidationError(f"combination weights must be >= {self.floor}")

    @classmethod
    def even(cls, m: int, floor: float = EPS_LAMBDA) -> "CombinationWeights":
        half = np.full(m, 0.5)
        return cls(half, half.copy(), floor)

    def __len__(self) -> int:
        return self.lam_d.size


@dataclass(frozen=True)
class SubnetworkParams:
    """Weights of one subnetwork: mirror matrix plus per-pixel normals.

    The specular kind additionally carries the lobe exponent r and the
    viewing direction used to build halfway vectors.
    """

    mirror: MirrorWeights
    normals: NormalField
    kind: str
    r: Optional[float] = None
    view: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (DIFFUSE, SPECULAR):
            raise ValidationError(f"unknown subnetwork kind {self.kind!r}")
        if len(self.mirror) != len(self.normals):
            raise ValidationError("mirror weights and normals disagree on pixel count")
        if self.kind == DIFFUSE:
            if self.r is not None or self.view is not None:
                raise ValidationError("diffuse subnetwork carries no r and no view")
        else:
            if self.r is None or self.r < 1.0:
                raise ValidationError("specular exponent r must be >= 1")
            object.__setattr__(self, "view", require_unit(self.view, "view direction"))

    def __len__(self) -> int:
        return len(self.normals)


@dataclass(frozen=True)
class HybridModel:
    """The full two-subnetwork model plus mixing weights and albedo."""

    diffuse: SubnetworkParams
    specular: SubnetworkParams
    lambdas: CombinationWeights
    albedo: AlbedoMap

    def __post_init__(self):
        m = len(self.diffuse)
        if self.diffuse.kind != DIFFUSE or self.specular.kind != SPECULAR:
            raise ValidationError("model subnetworks must be (diffuse, specular)")
        if not (len(self.specular) == len(self.lambdas) == self.albedo.values.size == m):
            raise ValidationError("model components disagree on pixel count")

    @property
    def pixel_count(self) -> int:
        return len(self.diffuse)


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer activations of one subnetwork forward pass.

    halfway is set only for the specular kind; degenerate_range marks a
    constant raw reflectance map (layer 6 then emits all zeros).
    """

    normalized_input: np.ndarray
    corrected: np.ndarray
    raw_direction: np.ndarray
    direction: np.ndarray
    raw_reflectance: np.ndarray
    reflectance: np.ndarray
    halfway: Optional[np.ndarray] = None
    degenerate_range: bool = False


# ---------------------------------------------------------------------------
# Layer operations


def normalize_image(raw) -> IntensityImage:
    """Scale an 8-bit pixel grid to [0, 1] (layer 1 preprocessing)."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cannot normalize an empty pixel grid")
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D pixel grid, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise ValidationError("raw pixel values must lie in [0, 255]")
    height, width = arr.shape
    return IntensityImage(width, height, (arr / 255.0).reshape(-1))


def albedo_correct(img: IntensityImage, albedo: AlbedoMap) -> np.ndarray:
    """Divide intensities by albedo (layer 2). Output may exceed 1."""
    if (img.width, img.height) != (albedo.width, albedo.height):
        raise ValidationError(
            f"image is {img.width}x{img.height} but albedo is "
            f"{albedo.width}x{albedo.height}"
        )
    return K.albedo_correct(img.values, albedo.values)


def estimate_direction_raw(corrected: np.ndarray, mirror: MirrorWeights) -> np.ndarray:
    """Project the corrected image to a raw, unnormalized direction (layer 3)."""
    corrected = _as_flat_floats(corrected, "corrected image")
    if corrected.size != len(mirror):
        raise ValidationError(
            f"corrected image has {corrected.size} pixels, mirror expects {len(mirror)}"
        )
    return K.project_image(corrected, mirror.matrix)


def normalize_direction(raw, eps: float = EPS_NORM) -> np.ndarray:
    """Rescale a raw direction to unit length (layer 4)."""
    arr = as_vector3(raw, "direction")
    norm = float(np.sqrt(arr @ arr))
    if norm <= eps:
        raise DegenerateDirectionError(
            "direction has near-zero norm; the mirror weights carry no signal"
        )
    return arr / norm


def diffuse_reflectance(direction: np.ndarray, normals: NormalField) -> np.ndarray:
    """Signed per-pixel dot products with the light direction (layer 5)."""
    direction = require_unit(direction, "light direction")
    return K.field_dot(normals.vectors, direction)


def specular_reflectance(halfway: np.ndarray, normals: NormalField, r: float) -> np.ndarray:
    """Clamped power lobe max(0, h.n)^r per pixel (specular layer 5)."""
    halfway = require_unit(halfway, "halfway vector")
    if r < 1.0:
        raise ValidationError("specular exponent r must be >= 1")
    return K.specular_lobe(K.field_dot(normals.vectors, halfway), r)


def halfway_vector(light: np.ndarray, view: np.ndarray) -> np.ndarray:
    """Unit bisector of the light and viewing directions."""
    light = require_unit(light, "light direction")
    view = require_unit(view, "view direction")
    total = light + view
    norm = float(np.sqrt(total @ total))
    if norm <= EPS_NORM:
        raise DegenerateDirectionError("light and view are antipodal; halfway undefined")
    return total / norm


def minmax_normalize(raw: np.ndarray) -> np.ndarray:
    """Map raw reflectance onto [0, 1] (layer 6); constant maps become zeros."""
    raw = _as_flat_floats(raw, "raw reflectance")
    if raw.size < 1:
        raise ValidationError("cannot normalize an empty reflectance map")
    scaled, _ = K.minmax_scale(raw)
    return scaled


def _forward_arrays(mirror_matrix, normal_vectors, img_values, albedo_values,
                    kind, r=None, view=None):
    """Layer 1-6 composition on raw arrays; shared with the training loop."""
    corrected = K.albedo_correct(img_values, albedo_values)
    raw_dir = K.project_image(corrected, mirror_matrix)
    norm = float(np.sqrt(raw_dir @ raw_dir))
    if norm <= EPS_NORM:
        raise DegenerateDirectionError(
            "direction has near-zero norm; the mirror weights carry no signal"
        )
    direction = raw_dir / norm
    halfway = None
    if kind == SPECULAR:
        total = direction + view
        hnorm = float(np.sqrt(total @ total))
        if hnorm <= EPS_NORM:
            raise DegenerateDirectionError(
                "estimated light is antipodal to the view; halfway undefined"
            )
        halfway = total / hnorm
        raw_refl = K.specular_lobe(K.field_dot(normal_vectors, halfway), r)
    else:
        raw_refl = K.field_dot(normal_vectors, direction)
    reflectance, width = K.minmax_scale(raw_refl)
    return corrected, raw_dir, direction, halfway, raw_refl, reflectance, width == 0.0


def forward_subnetwork(params: SubnetworkParams, img: IntensityImage,
                       albedo: AlbedoMap) -> ForwardTrace:
    """Run one subnetwork end to end and return all layer activations."""
    if img.pixel_count != len(params):
        raise ValidationError(
            f"image has {img.pixel_count} pixels, subnetwork expects {len(params)}"
        )
    if (img.width, img.height) != (albedo.width, albedo.height):
        raise ValidationError("image and albedo dimensions disagree")
    corrected, raw_dir, direction, halfway, raw_refl, reflectance, degenerate = (
        _forward_arrays(
            params.mirror.matrix, params.normals.vectors,
            img.values, albedo.values, params.kind, params.r, params.view,
        )
    )
    return ForwardTrace(
        normalized_input=img.values,
        corrected=corrected,
        raw_direction=raw_dir,
        direction=direction,
        raw_reflectance=raw_refl,
        reflectance=reflectance,
        halfway=halfway,
        degenerate_range=degenerate,
    )


def hybrid_combine(r_d: np.ndarray, r_s: np.ndarray,
                   lambdas: CombinationWeights) -> np.ndarray:
    """Blend the two reflectance maps with the per-pixel weights."""
    r_d = _as_flat_floats(r_d, "diffuse reflectance")
    r_s = _as_flat_floats(r_s, "specular reflectance")
    if not (r_d.size == r_s.size == len(lambdas)):
        raise ValidationError("reflectance maps and weights disagree on length")
    return K.convex_mix(r_d, r_s, lambdas.lam_d, lambdas.lam_s)


def forward_hybrid(model: HybridModel, img: IntensityImage):
    """Run both subnetworks and combine. Returns (trace_d, trace_s, r_hybrid)."""
    trace_d = forward_subnetwork(model.diffuse, img, model.albedo)
    trace_s = forward_subnetwork(model.specular, img, model.albedo)
    r_hybrid = hybrid_combine(trace_d.reflectance, trace_s.reflectance, model.lambdas)
    return trace_d, trace_s, r_hybrid


def hybrid_normals(model: HybridModel) -> NormalField:
    """Blend the two normal fields with the combination weights.

    The convex combination of unit vectors is generally not unit, so the
    result is renormalized; a pixel whose combination cancels out raises.
    """
    combined, min_norm = K.combine_renorm(
        model.diffuse.normals.vectors, model.specular.normals.vectors,
        model.lambdas.lam_d, model.lambdas.lam_s,
    )
    if min_norm <= EPS_NORM:
        raw = (model.lambdas.lam_d[:, None] * model.diffuse.normals.vectors
               + model.lambdas.lam_s[:, None] * model.specular.normals.vectors)
        norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
        pixel = int(np.argmin(norms))
        raise DegenerateNormalError(
            f"hybrid normal cancels out at pixel {pixel} (|n| = {norms[pixel]!r})"
        )
    return NormalField(combined)
