"""Iterative adversarial relighting over the 9 light coefficients.

The attack minimizes the cosine similarity between the embeddings of the
relit and the original image by sign-gradient descent on the new light,
projected after every step onto the L-infinity ball of radius epsilon
around the original light. The step size is epsilon / iterations.

Gradients come in two flavors: an analytic chain (relighting Jacobian
composed with the embedder's input gradient, available for differentiable
embedders) and a 9-dimensional central finite difference on the loss,
which works for any embedder at 18 embeddings per step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .embedder import cosine_similarity
from .relight import FaceImage, _relight_parts, estimate_light, quotient_relight
from .shading import BAND_GAINS, NormalMap, SHLight, _light_coeffs, sh_basis, shade

GRADIENT_MODES = ("analytic", "fd")

_BALL_SLACK = 1e-9


@dataclass(frozen=True)
class AttackConfig:
    """Sign-gradient attack parameters; the step is always epsilon / iterations."""

    epsilon: float
    iterations: int = 10
    gradient_mode: str = "analytic"
    fd_step: float = 1e-3
    step: float = field(init=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        object.__setattr__(self, "step", self.epsilon / self.iterations)


@dataclass(frozen=True)
class AttackTrace:
    """Per-iteration record of an attack run, initial state included."""

    lights: np.ndarray  # (iterations + 1, 9)
    similarities: np.ndarray  # (iterations + 1,)
    clamp_fractions: np.ndarray  # (iterations + 1,)
    adversarial_light: SHLight
    relit: FaceImage
    origin_light: SHLight
    epsilon: float

    def __post_init__(self):
        if self.lights.shape[0] != self.similarities.shape[0]:
            raise ValueError("trace arrays have inconsistent lengths")
        drift = np.abs(self.lights - self.origin_light.coeffs).max()
        if drift > self.epsilon + _BALL_SLACK:
            raise ValueError(
                f"iterate left the epsilon ball: drift {drift:.3g} > {self.epsilon:.3g}"
            )

    @property
    def initial_similarity(self) -> float:
        return float(self.similarities[0])

    @property
    def final_similarity(self) -> float:
        return float(self.similarities[-1])


def relight_jacobian(image: FaceImage, normals: NormalMap, old_light, new_light) -> np.ndarray:
    """Partial derivatives of the relit luminance w.r.t. the new light.

    Relighting is linear in the new light, so each masked pixel's row is
    gains * basis(n) * luminance / floored-denominator, independent of the
    new light itself. Rows are zero at unmasked pixels and at pixels
    currently clamped by the [0, 1] output clip.
    """
    mask, denom, _ = _relight_parts(image, normals, old_light)
    jac = np.zeros((*mask.shape, 9), dtype=np.float64)
    design = sh_basis(normals.normals[mask]) * BAND_GAINS
    jac[mask] = design * (image.luminance[mask] / denom[mask])[:, None]
    f_new = shade(normals, new_light)
    raw = np.zeros_like(denom)
    raw[mask] = image.luminance[mask] * f_new[mask] / denom[mask]
    clamped = mask & ((raw < 0.0) | (raw > 1.0))
    jac[clamped] = 0.0
    return jac


def loss_gradient_fd(image: FaceImage, normals: NormalMap, old_light, current_light,
                     embedder, h: float = 1e-3) -> np.ndarray:
    """Central-difference similarity gradient over the 9 coefficients.

    Every probe goes through the full relighting path (denominator floor
    and output clamp included), so this matches what any embedder actually
    sees. Costs 18 embeddings.
    """
    if h <= 0:
        raise ValueError("fd step must be positive")
    reference = embedder.embed(image)
    current = _light_coeffs(current_light)

    def sim_at(light: np.ndarray) -> float:
        result = quotient_relight(image, normals, old_light, light)
        return cosine_similarity(embedder.embed(result.image), reference)

    grad = np.zeros(9)
    for j in range(9):
        probe = current.copy()
        probe[j] = current[j] + h
        plus = sim_at(probe)
        probe[j] = current[j] - h
        minus = sim_at(probe)
        grad[j] = (plus - minus) / (2.0 * h)
    return grad


def similarity_gradient(image: FaceImage, normals: NormalMap, old_light, current_light,
                        embedder) -> np.ndarray:
    """Analytic d sim / d L' via the relighting Jacobian and embedder gradient."""
    reference = embedder.embed(image)
    result = quotient_relight(image, normals, old_light, current_light)
    grad_lum = embedder.input_gradient(result.image, reference)
    jac = relight_jacobian(image, normals, old_light, current_light)
    return np.tensordot(grad_lum, jac, axes=2)


def attack(image: FaceImage, normals: NormalMap, light, embedder,
           config: AttackConfig) -> AttackTrace:
    """Run the sign-gradient attack and return the full trace.

    ``light`` may be None, in which case the original light is estimated
    from the image and normals first.
    """
    origin = _light_coeffs(light) if light is not None else estimate_light(image, normals).coeffs
    reference = embedder.embed(image)
    lo = origin - config.epsilon
    hi = origin + config.epsilon

    def evaluate(coeffs: np.ndarray):
        result = quotient_relight(image, normals, origin, coeffs)
        sim = cosine_similarity(embedder.embed(result.image), reference)
        return result, sim

    current = origin.copy()
    result, sim = evaluate(current)
    lights = [current.copy()]
    sims = [sim]
    clamps = [result.clamp_fraction]

    for _ in range(config.iterations):
        if config.gradient_mode == "analytic":
            grad = similarity_gradient(image, normals, origin, current, embedder)
        else:
            grad = loss_gradient_fd(image, normals, origin, current, embedder, config.fd_step)
        current = np.clip(current - config.step * np.sign(grad), lo, hi)
        result, sim = evaluate(current)
        lights.append(current.copy())
        sims.append(sim)
        clamps.append(result.clamp_fraction)

    return AttackTrace(
        lights=np.array(lights),
        similarities=np.array(sims),
        clamp_fractions=np.array(clamps),
        adversarial_light=SHLight(current),
        relit=result.image,
        origin_light=SHLight(origin),
        epsilon=config.epsilon,
    )


def write_trace_csv(path, trace: AttackTrace) -> None:
    """Serialize a trace as (iteration, 9 coefficients, similarity, clamp_fraction)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration"] + [f"L{j}" for j in range(9)] + ["similarity", "clamp_fraction"]
        )
        for i in range(trace.lights.shape[0]):
            writer.writerow(
                [i]
                + [f"{c:.6g}" for c in trace.lights[i]]
                + [f"{trace.similarities[i]:.6g}", f"{trace.clamp_fractions[i]:.6g}"]
            )
