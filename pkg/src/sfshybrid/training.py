"""Supervised training of the hybrid reflectance model.

One epoch walks the images in order. For each image both subnetworks run
forward, the predicted image is the per-pixel convex blend of their
outputs, and the squared-error residual drives three explicit update
rules: the combination weights move by 2*eta*residual*reflectance, the
diffuse normals by 2*eta*residual along the estimated light direction,
and the specular normals by 2*eta*r*residual along the halfway vector
(optionally scaled by the clamped lobe derivative). Normals are rescaled
to unit length after every step. Once per epoch the mirror weights are
recomputed as the least-squares pseudo-inverse of the normal matrix, so
the image-to-direction map inverts the direction-to-image map.

The learning rate is fixed, momentum-accelerated, or adapted by
comparing the last three epoch errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as K
from . import model as M
from .errors import (
    DegenerateGeometryError,
    DegenerateNormalError,
    DivergenceError,
    SfsError,
    ValidationError,
)

# Smallest admissible singular value of the normal matrix in the
# least-squares mirror refresh.
EPS_RANK = 1e-9

FIXED = "fixed"
MOMENTUM = "momentum"
ADAPTIVE = "adaptive"
OPTIMIZER_MODES = (FIXED, MOMENTUM, ADAPTIVE)

PAPER_RULE = "paper"
FULL_GRADIENT = "full_gradient"
UPDATE_MODES = (PAPER_RULE, FULL_GRADIENT)

# Initialization: normals start at (0,0,1) plus uniform noise of this
# half-width per component, which breaks the coplanarity that would make
# the mirror refresh singular.
INIT_NOISE = 0.05


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    eta0: float
    max_epochs: int
    xi: float = 0.0
    stop_tol: float = 0.0
    optimizer_mode: str = FIXED
    momentum_coeff: float = 0.9
    eta_floor: float = 1e-6
    update_mode: str = PAPER_RULE
    rng_seed: int = 0
    diffuse_only: bool = False

    def __post_init__(self):
        if not (self.eta0 > self.eta_floor > 0.0):
            raise ValidationError("require eta0 > eta_floor > 0")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.xi < 0.0:
            raise ValidationError("xi must be >= 0")
        if self.stop_tol < 0.0:
            raise ValidationError("stop_tol must be >= 0")
        if self.optimizer_mode not in OPTIMIZER_MODES:
            raise ValidationError(f"unknown optimizer mode {self.optimizer_mode!r}")
        if self.update_mode not in UPDATE_MODES:
            raise ValidationError(f"unknown update mode {self.update_mode!r}")
        if not (0.0 <= self.momentum_coeff < 1.0):
            raise ValidationError("momentum coefficient must lie in [0, 1)")


@dataclass(frozen=True)
class TrainRecord:
    """Per-epoch trace of (epoch, error, learning rate)."""

    epochs: np.ndarray
    errors: np.ndarray
    etas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "epochs", np.asarray(self.epochs, dtype=np.int64))
        object.__setattr__(self, "errors", np.asarray(self.errors, dtype=np.float64))
        object.__setattr__(self, "etas", np.asarray(self.etas, dtype=np.float64))
        n = self.epochs.size
        if self.errors.size != n or self.etas.size != n:
            raise ValidationError("record columns must have equal length")
        if n > 1 and np.any(np.diff(self.epochs) <= 0):
            raise ValidationError("epoch indices must be strictly increasing")
        if n and (not np.all(np.isfinite(self.errors)) or self.errors.min() < 0.0):
            raise ValidationError("errors must be finite and non-negative")

    def __len__(self) -> int:
        return self.epochs.size


@dataclass(frozen=True)
class TrainedModel:
    """Converged model plus its training trace and per-image light estimates."""

    model: M.HybridModel
    record: TrainRecord
    light_directions: np.ndarray
    layer6_degenerate_events: int = 0


def total_error(r_hybrid: np.ndarray, desired: M.IntensityImage) -> float:
    """Sum of squared residuals between prediction and desired image."""
    r_hybrid = np.asarray(r_hybrid, dtype=np.float64)
    if r_hybrid.size != desired.pixel_count:
        raise ValidationError("prediction and desired image disagree on length")
    return K.sum_sq_err(r_hybrid.reshape(-1), desired.values)


def update_lambdas(lambdas: M.CombinationWeights, desired: M.IntensityImage,
                   r_hybrid: np.ndarray, r_d: np.ndarray, r_s: np.ndarray,
                   eta: float) -> M.CombinationWeights:
    """One gradient step on the combination weights, then floor and renormalize."""
    if eta <= 0.0:
        raise ValidationError("eta must be positive")
    residual = desired.values - r_hybrid
    new_d, new_s = K.lambda_apply(
        lambdas.lam_d, lambdas.lam_s,
        2.0 * eta * residual * r_d, 2.0 * eta * residual * r_s,
        lambdas.floor,
    )
    return M.CombinationWeights(new_d, new_s, lambdas.floor)


def diffuse_normal_delta(direction: np.ndarray, residual: np.ndarray,
                         eta: float) -> np.ndarray:
    """Raw per-pixel update block 2*eta*residual_k*direction_j (pre-renorm)."""
    return K.scaled_outer(residual, direction, 2.0 * eta)


def update_diffuse_normals(normals: M.NormalField, direction: np.ndarray,
                           desired: M.IntensityImage, r_hybrid: np.ndarray,
                           eta: float) -> M.NormalField:
    """Step the diffuse normals along the light direction and renormalize."""
    direction = M.require_unit(direction, "light direction")
    residual = desired.values - r_hybrid
    delta = diffuse_normal_delta(direction, residual, eta)
    updated, min_norm = K.add_renorm_rows(normals.vectors, delta)
    if min_norm <= M.EPS_NORM:
        raise DegenerateNormalError(
            f"diffuse normal update collapsed a pixel to norm {min_norm!r}"
        )
    return M.NormalField(updated)


def specular_normal_delta(normals_vectors: np.ndarray, halfway: np.ndarray,
                          r: float, residual: np.ndarray, eta: float,
                          update_mode: str) -> np.ndarray:
    """Raw specular update block; full_gradient adds the lobe derivative factor."""
    if update_mode == FULL_GRADIENT:
        dots = K.field_dot(normals_vectors, halfway)
        scale = K.specular_lobe(dots, r - 1.0) if r > 1.0 else np.ones_like(dots)
        return K.scaled_outer(residual, halfway, 2.0 * eta * r, scale)
    return K.scaled_outer(residual, halfway, 2.0 * eta * r)


def update_specular_normals(normals: M.NormalField, halfway: np.ndarray, r: float,
                            desired: M.IntensityImage, r_hybrid: np.ndarray,
                            eta: float, update_mode: str = PAPER_RULE) -> M.NormalField:
    """Step the specular normals along the halfway vector and renormalize."""
    halfway = M.require_unit(halfway, "halfway vector")
    if r < 1.0:
        raise ValidationError("specular exponent r must be >= 1")
    if update_mode not in UPDATE_MODES:
        raise ValidationError(f"unknown update mode {update_mode!r}")
    residual = desired.values - r_hybrid
    delta = specular_normal_delta(normals.vectors, halfway, r, residual, eta, update_mode)
    updated, min_norm = K.add_renorm_rows(normals.vectors, delta)
    if min_norm <= M.EPS_NORM:
        raise DegenerateNormalError(
            f"specular normal update collapsed a pixel to norm {min_norm!r}"
        )
    return M.NormalField(updated)


def _refresh_mirror_matrix(vectors: np.ndarray) -> np.ndarray:
    """Least-squares mirror weights W = V (V^T V)^-1, so W^T V = I."""
    singular = np.linalg.svd(vectors, compute_uv=False)
    if singular[-1] <= EPS_RANK:
        raise DegenerateGeometryError(
            "normal field is rank deficient (all normals near-coplanar through "
            f"the origin); smallest singular value {singular[-1]!r}"
        )
    gram = vectors.T @ vectors
    return np.linalg.solve(gram, vectors.T).T


def refresh_mirror_weights(normals: M.NormalField) -> M.MirrorWeights:
    """Recompute mirror weights so image -> direction inverts direction -> image."""
    return M.MirrorWeights(_refresh_mirror_matrix(normals.vectors))


def adapt_learning_rate(err_prev2: float, err_prev1: float, err_curr: float,
                        eta: float, xi: float, eta_floor: float) -> float:
    """Three-point learning-rate rule: grow on steady descent, shrink on ascent."""
    if err_prev1 > err_curr and err_prev2 > err_curr:
        return eta + xi
    if err_prev1 < err_curr and err_prev2 < err_curr:
        return max(eta - xi, eta_floor)
    return eta


def _apply_momentum(state: dict, key: str, delta: np.ndarray, coeff: float) -> np.ndarray:
    vel = state.get(key)
    vel = delta if vel is None else delta + coeff * vel
    state[key] = vel
    return vel


def train_epoch(model: M.HybridModel, images: Sequence[M.IntensityImage],
                config: TrainConfig, eta: float,
                _state: Optional[dict] = None) -> tuple[M.HybridModel, float]:
    """Run one epoch over the images and return (updated model, mean error).

    The per-image error is computed from the forward pass before that
    image's updates are applied; the epoch error is the mean over images.
    Mirror weights are refreshed once, after the image loop. _state is
    internal: it carries momentum velocities and diagnostic counters
    between epochs.
    """
    if len(images) == 0:
        raise ValidationError("training needs at least one image")
    m = model.pixel_count
    for img in images:
        if img.pixel_count != m:
            raise ValidationError("all training images must match the model size")
    state = _state if _state is not None else {}
    momentum = config.momentum_coeff if config.optimizer_mode == MOMENTUM else 0.0

    lam_d = model.lambdas.lam_d
    lam_s = model.lambdas.lam_s
    floor = model.lambdas.floor
    v_d = model.diffuse.normals.vectors
    v_s = model.specular.normals.vectors
    r = model.specular.r
    view = model.specular.view
    albedo = model.albedo.values
    mirror_d = model.diffuse.mirror.matrix
    mirror_s = model.specular.mirror.matrix

    errors = []
    for idx, img in enumerate(images):
        try:
            _, _, dir_d, _, _, refl_d, degen_d = M._forward_arrays(
                mirror_d, v_d, img.values, albedo, M.DIFFUSE)
            _, _, _, halfway, _, refl_s, degen_s = M._forward_arrays(
                mirror_s, v_s, img.values, albedo, M.SPECULAR, r, view)

            state["layer6_events"] = (state.get("layer6_events", 0)
                                      + int(degen_d) + int(degen_s))

            r_hybrid = K.convex_mix(refl_d, refl_s, lam_d, lam_s)
            errors.append(K.sum_sq_err(r_hybrid, img.values))
            residual = img.values - r_hybrid

            # Combination weights first, then normals; all three steps use
            # the residual of the pre-update forward pass.
            if not config.diffuse_only:
                dd = 2.0 * eta * residual * refl_d
                ds = 2.0 * eta * residual * refl_s
                if momentum:
                    dd = _apply_momentum(state, "vel_lam_d", dd, momentum)
                    ds = _apply_momentum(state, "vel_lam_s", ds, momentum)
                lam_d, lam_s = K.lambda_apply(lam_d, lam_s, dd, ds, floor)

            delta_d = diffuse_normal_delta(dir_d, residual, eta)
            if momentum:
                delta_d = _apply_momentum(state, "vel_v_d", delta_d, momentum)
            v_d, min_norm = K.add_renorm_rows(v_d, delta_d)
            if min_norm <= M.EPS_NORM:
                raise DegenerateNormalError("diffuse normal update collapsed a pixel")

            delta_s = specular_normal_delta(v_s, halfway, r, residual, eta,
                                            config.update_mode)
            if momentum:
                delta_s = _apply_momentum(state, "vel_v_s", delta_s, momentum)
            v_s, min_norm = K.add_renorm_rows(v_s, delta_s)
            if min_norm <= M.EPS_NORM:
                raise DegenerateNormalError("specular normal update collapsed a pixel")
        except SfsError as exc:
            raise type(exc)(f"image {idx}: {exc}") from exc

    mirror_d = _refresh_mirror_matrix(v_d)
    mirror_s = _refresh_mirror_matrix(v_s)

    updated = M.HybridModel(
        diffuse=M.SubnetworkParams(M.MirrorWeights(mirror_d), M.NormalField(v_d),
                                   M.DIFFUSE),
        specular=M.SubnetworkParams(M.MirrorWeights(mirror_s), M.NormalField(v_s),
                                    M.SPECULAR, r=r, view=view),
        lambdas=M.CombinationWeights(lam_d, lam_s, floor),
        albedo=model.albedo,
    )
    return updated, float(np.mean(errors))


def initial_model(width: int, height: int, albedo: M.AlbedoMap,
                  config: TrainConfig, r: float = 2.0,
                  view=None) -> M.HybridModel:
    """Cold-start model: near-vertical noisy normals, even mixing weights.

    The noise breaks the rank deficiency a constant field would cause in
    the mirror refresh; both subnetworks draw from the same seeded stream
    (diffuse first), so runs are reproducible.
    """
    m = width * height
    if m < 1:
        raise ValidationError("model needs at least one pixel")
    view = M.require_unit(view if view is not None else np.array([0.0, 0.0, 1.0]),
                          "view direction")
    rng = np.random.default_rng(config.rng_seed)

    def noisy_field():
        vecs = np.tile(np.array([0.0, 0.0, 1.0]), (m, 1))
        vecs += rng.uniform(-INIT_NOISE, INIT_NOISE, size=(m, 3))
        vecs /= np.sqrt(np.einsum("ij,ij->i", vecs, vecs))[:, None]
        return vecs

    v_d = noisy_field()
    v_s = noisy_field()
    if config.diffuse_only:
        lam_d = np.full(m, 1.0 - M.EPS_LAMBDA)
        lam_s = np.full(m, M.EPS_LAMBDA)
        lambdas = M.CombinationWeights(lam_d, lam_s)
    else:
        lambdas = M.CombinationWeights.even(m)
    return M.HybridModel(
        diffuse=M.SubnetworkParams(
            M.MirrorWeights(_refresh_mirror_matrix(v_d)), M.NormalField(v_d), M.DIFFUSE),
        specular=M.SubnetworkParams(
            M.MirrorWeights(_refresh_mirror_matrix(v_s)), M.NormalField(v_s), M.SPECULAR,
            r=float(r), view=view),
        lambdas=lambdas,
        albedo=albedo,
    )


def recover_light_directions(model: M.HybridModel,
                             images: Sequence[M.IntensityImage]) -> np.ndarray:
    """Per-image unit light estimates from the diffuse subnetwork's layer 4."""
    out = np.empty((len(images), 3))
    for i, img in enumerate(images):
        trace = M.forward_subnetwork(model.diffuse, img, model.albedo)
        out[i] = trace.direction
    return out


def train(images: Sequence[M.IntensityImage], albedo: M.AlbedoMap,
          config: TrainConfig, r: float = 2.0, view=None,
          on_epoch: Optional[Callable] = None) -> TrainedModel:
    """Train a cold-start model on one object's images.

    Stops at max_epochs or when the epoch error plateaus within stop_tol.
    on_epoch, when given, is called as on_epoch(epoch, model, error, eta)
    after every epoch; it exists for convergence monitoring and invariant
    audits.
    """
    if len(images) == 0:
        raise ValidationError("training needs at least one image")
    width, height = images[0].width, images[0].height
    for img in images:
        if (img.width, img.height) != (width, height):
            raise ValidationError("all training images must share dimensions")

    model = initial_model(width, height, albedo, config, r=r, view=view)
    eta = config.eta0
    state: dict = {}
    epochs, errs, etas = [], [], []

    for t in range(config.max_epochs):
        try:
            model, err = train_epoch(model, images, config, eta, _state=state)
        except SfsError as exc:
            raise type(exc)(f"epoch {t}: {exc}") from exc
        if not np.isfinite(err):
            record = TrainRecord(np.array(epochs), np.array(errs), np.array(etas))
            raise DivergenceError(f"non-finite error at epoch {t}", record=record)
        epochs.append(t)
        errs.append(err)
        etas.append(eta)
        if on_epoch is not None:
            on_epoch(t, model, err, eta)
        if t >= 1 and abs(errs[t - 1] - errs[t]) < config.stop_tol:
            break
        if config.optimizer_mode == ADAPTIVE and t >= 2:
            eta = adapt_learning_rate(errs[t - 2], errs[t - 1], errs[t],
                                      eta, config.xi, config.eta_floor)

    record = TrainRecord(np.array(epochs), np.array(errs), np.array(etas))
    lights = recover_light_directions(model, images)
    return TrainedModel(
        model=model,
        record=record,
        light_directions=lights,
        layer6_degenerate_events=int(state.get("layer6_events", 0)),
    )
