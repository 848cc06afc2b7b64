"""System models: generic stochastic dynamics plus the two built-in systems.

A model bundles the drift f(x, t), its Jacobian, the diffusion input matrix
G(x, t), the white-noise strength Q, and (when the system has one) the total
energy function H with its derivatives.  Models are immutable after
construction and safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional
import warnings

import numpy as np

from .errors import ConfigurationError, SingularStateError

Array = np.ndarray

#: Standard Earth gravitational parameter, km^3/s^2.
EARTH_MU = 398600.4418


@dataclass(frozen=True)
class DynamicsModel:
    """Stochastic system dx = f(x,t) dt + G(x,t) dGamma, noise strength Q.

    Attributes
    ----------
    n : state dimension
    drift : f(x, t) -> (n,)
    drift_jacobian : df/dx (x, t) -> (n, n)
    diffusion_G : G(x, t) -> (n, w)
    noise_strength_Q : (w, w) symmetric PSD
    hamiltonian, hamiltonian_gradient, hamiltonian_hessian :
        optional total-energy function of the state with derivatives
    name : short label used in run metadata
    """

    n: int
    drift: Callable[[Array, float], Array]
    drift_jacobian: Callable[[Array, float], Array]
    diffusion_G: Callable[[Array, float], Array]
    noise_strength_Q: Array
    hamiltonian: Optional[Callable[[Array], float]] = None
    hamiltonian_gradient: Optional[Callable[[Array], Array]] = None
    hamiltonian_hessian: Optional[Callable[[Array], Array]] = None
    name: str = "model"

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.noise_strength_Q, dtype=float))
        object.__setattr__(self, "noise_strength_Q", Q)
        if not np.allclose(Q, Q.T):
            raise ConfigurationError("noise strength Q must be symmetric")
        if np.any(np.linalg.eigvalsh(Q) < -1e-12 * max(1.0, abs(Q).max())):
            raise ConfigurationError("noise strength Q must be positive semidefinite")
        if self.hamiltonian is not None and self.hamiltonian_gradient is None:
            raise ConfigurationError("a hamiltonian requires its gradient")

    def diffusion_matrix(self, x: Array, t: float = 0.0) -> Array:
        """G Q G^T at (x, t), shape (n, n)."""
        G = np.atleast_2d(np.asarray(self.diffusion_G(x, t), dtype=float))
        if G.shape[0] != self.n:
            G = G.reshape(self.n, -1)
        return G @ self.noise_strength_Q @ G.T


@dataclass(frozen=True)
class DuffingParams:
    """Damped cubic oscillator xdd + eta*xd + alpha*x + beta*x^3 = noise."""

    eta: float
    alpha: float
    beta: float
    Q: float

    def __post_init__(self):
        if self.Q < 0:
            raise ConfigurationError("noise strength Q must be >= 0")
        if not (self.alpha * self.beta < 0 and self.eta > 0):
            warnings.warn(
                "parameters are outside the bimodal benchmark regime "
                "(expect alpha*beta < 0 and eta > 0)",
                stacklevel=2,
            )


@dataclass(frozen=True)
class TwoBodyParams:
    """Point-mass gravity, mu in km^3/s^2; states in km and km/s."""

    mu: float = EARTH_MU
    #: below this radius (km) evaluation raises instead of overflowing
    singularity_floor: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigurationError("gravitational parameter mu must be positive")


def duffing_model(p: DuffingParams) -> DynamicsModel:
    """State-space Duffing oscillator with energy H = x2^2/2 + a*x1^2/2 + b*x1^4/4."""
    eta, alpha, beta = p.eta, p.alpha, p.beta

    def drift(x, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.array([x[1], -eta * x[1] - alpha * x[0] - beta * x[0] ** 3])

    def drift_jacobian(x, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.array([[0.0, 1.0], [-alpha - 3.0 * beta * x[0] ** 2, -eta]])

    def diffusion_G(x, t=0.0):
        return np.array([[0.0], [1.0]])

    def hamiltonian(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x[1] ** 2 + 0.5 * alpha * x[0] ** 2 + 0.25 * beta * x[0] ** 4

    def hamiltonian_gradient(x):
        x = np.asarray(x, dtype=float)
        return np.array([alpha * x[0] + beta * x[0] ** 3, x[1]])

    def hamiltonian_hessian(x):
        x = np.asarray(x, dtype=float)
        return np.array([[alpha + 3.0 * beta * x[0] ** 2, 0.0], [0.0, 1.0]])

    return DynamicsModel(
        n=2,
        drift=drift,
        drift_jacobian=drift_jacobian,
        diffusion_G=diffusion_G,
        noise_strength_Q=np.array([[p.Q]]),
        hamiltonian=hamiltonian,
        hamiltonian_gradient=hamiltonian_gradient,
        hamiltonian_hessian=hamiltonian_hessian,
        name="duffing",
    )


def two_body_model(p: TwoBodyParams) -> DynamicsModel:
    """Keplerian two-body motion, state (r, v) in km / km/s, no process noise."""
    mu, floor = p.mu, p.singularity_floor

    def _radius(x):
        r = np.asarray(x, dtype=float)[:3]
        rn = np.linalg.norm(r)
        if rn < floor:
            raise SingularStateError(
                f"|r| = {rn:.6g} km is below the singularity floor {floor:g} km"
            )
        return r, rn

    def drift(x, t=0.0):
        x = np.asarray(x, dtype=float)
        r, rn = _radius(x)
        return np.concatenate([x[3:], -mu * r / rn**3])

    def drift_jacobian(x, t=0.0):
        x = np.asarray(x, dtype=float)
        r, rn = _radius(x)
        J = np.zeros((6, 6))
        J[:3, 3:] = np.eye(3)
        J[3:, :3] = mu * (3.0 * np.outer(r, r) / rn**5 - np.eye(3) / rn**3)
        return J

    def diffusion_G(x, t=0.0):
        return np.zeros((6, 1))

    def hamiltonian(x):
        x = np.asarray(x, dtype=float)
        _, rn = _radius(x)
        return 0.5 * np.dot(x[3:], x[3:]) - mu / rn

    def hamiltonian_gradient(x):
        x = np.asarray(x, dtype=float)
        r, rn = _radius(x)
        return np.concatenate([mu * r / rn**3, x[3:]])

    def hamiltonian_hessian(x):
        x = np.asarray(x, dtype=float)
        r, rn = _radius(x)
        H = np.zeros((6, 6))
        H[:3, :3] = mu * (np.eye(3) / rn**3 - 3.0 * np.outer(r, r) / rn**5)
        H[3:, 3:] = np.eye(3)
        return H

    return DynamicsModel(
        n=6,
        drift=drift,
        drift_jacobian=drift_jacobian,
        diffusion_G=diffusion_G,
        noise_strength_Q=np.zeros((1, 1)),
        hamiltonian=hamiltonian,
        hamiltonian_gradient=hamiltonian_gradient,
        hamiltonian_hessian=hamiltonian_hessian,
        name="two_body",
    )


def ornstein_uhlenbeck_model(a: float = 1.0, q: float = 1.0) -> DynamicsModel:
    """1-D linear relaxation dx = -a x dt + dGamma, strength q.

    Stationary density is N(0, q / (2a)); used as an analytic fixed-point
    oracle for the collocation step.
    """
    if a <= 0:
        raise ConfigurationError("relaxation rate a must be positive")

    return DynamicsModel(
        n=1,
        drift=lambda x, t=0.0: -a * np.asarray(x, dtype=float),
        drift_jacobian=lambda x, t=0.0: np.array([[-a]]),
        diffusion_G=lambda x, t=0.0: np.array([[1.0]]),
        noise_strength_Q=np.array([[q]]),
        name="ou",
    )


def check_jacobian(model: DynamicsModel, points: Array, t: float = 0.0,
                   rtol: float = 1e-5) -> float:
    """Max relative error between drift_jacobian and central differences."""
    worst = 0.0
    for x in np.atleast_2d(points):
        J = model.drift_jacobian(x, t)
        Jfd = np.zeros_like(J)
        h = 1e-6 * max(1.0, np.abs(x).max())
        for j in range(model.n):
            e = np.zeros(model.n)
            e[j] = h
            Jfd[:, j] = (model.drift(x + e, t) - model.drift(x - e, t)) / (2 * h)
        scale = max(1.0, np.abs(J).max())
        worst = max(worst, np.abs(J - Jfd).max() / scale)
    if worst > rtol:
        raise ConfigurationError(f"drift_jacobian mismatch: {worst:.3e} > {rtol:g}")
    return worst
