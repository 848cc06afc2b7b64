"""Over-complete basis dictionary: monomials plus powers of the Hamiltonian.

The dictionary evaluates Phi(y) = [phi_mono(y), phi_H(y)] together with exact
first and second derivatives.  Monomials live in the local (transformed)
frame; Hamiltonian entries are evaluated on the global state reconstructed
through the inverse transform, with affine chain-rule factors applied to
their derivatives.

Ordering of the monomial block is graded lexicographic (total degree first,
then lexicographic on the exponent tuple), constant term first.  The ordering
is deterministic and captured in the manifest so coefficient files are
self-describing.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

Array = np.ndarray


def monomial_multi_indices(n: int, d: int) -> Array:
    """All exponent vectors with total degree <= d, graded-lex ordered.

    Returns an (m_x, n) int array with m_x = C(n+d, n).
    """
    if n < 1 or d < 0:
        raise ConfigurationError("need n >= 1 and d >= 0")

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    rows = []
    for deg in range(d + 1):
        rows.extend(sorted(compositions(deg, n)))
    out = np.array(rows, dtype=np.int64)
    assert out.shape[0] == math.comb(n + d, n)
    return out


@dataclass
class BasisDictionary:
    """Evaluable dictionary of m = m_x + m_h basis functions.

    ``hamiltonian`` / ``hamiltonian_gradient`` / ``hamiltonian_hessian`` act on
    the global state; ``transform`` (optional, any object with ``inverse`` and
    ``T0_inv``) maps local evaluation points back to global states before the
    Hamiltonian is applied.  ``hamiltonian_scale`` divides H before powers are
    taken; ``factorial_scaling`` additionally divides H^k by k!.
    """

    n: int
    degree: int
    monomial_indices: Array
    hamiltonian_orders: int = 0
    hamiltonian: Optional[Callable[[Array], float]] = None
    hamiltonian_gradient: Optional[Callable[[Array], Array]] = None
    hamiltonian_hessian: Optional[Callable[[Array], Array]] = None
    transform: Optional[object] = None
    hamiltonian_scale: float = 1.0
    factorial_scaling: bool = False

    _slot: dict = field(default_factory=dict, repr=False)
    _d1_idx: Array = field(default=None, repr=False)
    _d1_mul: Array = field(default=None, repr=False)
    _d2_idx: Array = field(default=None, repr=False)
    _d2_mul: Array = field(default=None, repr=False)

    def __post_init__(self):
        if self.hamiltonian_orders > 0 and self.hamiltonian is None:
            raise ConfigurationError(
                "hamiltonian_orders > 0 requires a hamiltonian function"
            )
        if self.hamiltonian_scale == 0:
            raise ConfigurationError("hamiltonian_scale must be nonzero")
        self.monomial_indices = np.asarray(self.monomial_indices, dtype=np.int64)
        self._slot = {
            tuple(a): i for i, a in enumerate(self.monomial_indices)
        }
        self._build_derivative_tables()

    # -- structure ----------------------------------------------------------

    @property
    def m_x(self) -> int:
        return self.monomial_indices.shape[0]

    @property
    def m_h(self) -> int:
        return self.hamiltonian_orders

    @property
    def m(self) -> int:
        return self.m_x + self.hamiltonian_orders

    def monomial_slot(self, exponents: Sequence[int]) -> int:
        """Column index of a monomial given its exponent vector."""
        return self._slot[tuple(int(e) for e in exponents)]

    def hamiltonian_slot(self, order: int) -> int:
        """Column index of H^order (order = 1..m_h)."""
        if not 1 <= order <= self.hamiltonian_orders:
            raise ConfigurationError(f"no Hamiltonian entry of order {order}")
        return self.m_x + order - 1

    def entry_degrees(self) -> Array:
        """Total degree of each monomial entry; Hamiltonian entries get -order."""
        degs = self.monomial_indices.sum(axis=1)
        horders = -np.arange(1, self.hamiltonian_orders + 1)
        return np.concatenate([degs, horders])

    def _build_derivative_tables(self):
        mx, n = self.m_x, self.n
        idx1 = np.zeros((mx, n), dtype=np.int64)
        mul1 = np.zeros((mx, n))
        idx2 = np.zeros((mx, n, n), dtype=np.int64)
        mul2 = np.zeros((mx, n, n))
        for i, a in enumerate(self.monomial_indices):
            for j in range(n):
                if a[j] > 0:
                    b = a.copy()
                    b[j] -= 1
                    idx1[i, j] = self._slot[tuple(b)]
                    mul1[i, j] = a[j]
                    for l in range(n):
                        if b[l] > 0:
                            c = b.copy()
                            c[l] -= 1
                            idx2[i, j, l] = self._slot[tuple(c)]
                            mul2[i, j, l] = a[j] * b[l]
        self._d1_idx, self._d1_mul = idx1, mul1
        self._d2_idx, self._d2_mul = idx2, mul2

    # -- evaluation ---------------------------------------------------------

    def _hamiltonian_at(self, Y: Array, order: int):
        """H, grad_y H, hess_y H at each local point (grad/hess only if asked)."""
        N = Y.shape[0]
        if self.transform is not None:
            X = self.transform.inverse(Y)
            Tinv = self.transform.T0_inv
        else:
            X, Tinv = Y, None
        h = np.empty(N)
        g = np.empty((N, self.n)) if order >= 1 else None
        s = np.empty((N, self.n, self.n)) if order >= 2 else None
        for i in range(N):
            h[i] = self.hamiltonian(X[i])
            if order >= 1:
                gi = np.asarray(self.hamiltonian_gradient(X[i]), dtype=float)
                g[i] = Tinv.T @ gi if Tinv is not None else gi
            if order >= 2:
                if self.hamiltonian_hessian is None:
                    raise ConfigurationError(
                        "second derivatives of H requested but no hessian was given"
                    )
                si = np.asarray(self.hamiltonian_hessian(X[i]), dtype=float)
                s[i] = Tinv.T @ si @ Tinv if Tinv is not None else si
        return h, g, s

    def eval_batch(self, Y: Array, order: int = 0):
        """Evaluate the dictionary at points Y (N, n).

        Returns (Phi, dPhi, d2Phi); entries beyond ``order`` are None.
        Shapes: (N, m), (N, m, n), (N, m, n, n).
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if not np.all(np.isfinite(Y)):
            raise ConfigurationError("basis evaluation at non-finite point")
        N, n = Y.shape
        if n != self.n:
            raise ConfigurationError(f"points have dimension {n}, expected {self.n}")
        mx, mh, m = self.m_x, self.hamiltonian_orders, self.m
        alpha = self.monomial_indices

        # per-dimension power tables, then gathered products
        P = [Y[:, i, None] ** np.arange(self.degree + 1)[None, :] for i in range(n)]
        V = np.ones((N, mx))
        for i in range(n):
            V *= P[i][:, alpha[:, i]]

        Phi = np.empty((N, m))
        Phi[:, :mx] = V
        dPhi = np.zeros((N, m, n)) if order >= 1 else None
        d2Phi = np.zeros((N, m, n, n)) if order >= 2 else None

        if order >= 1:
            for j in range(n):
                dPhi[:, :mx, j] = self._d1_mul[None, :, j] * V[:, self._d1_idx[:, j]]
        if order >= 2:
            for j in range(n):
                for l in range(n):
                    d2Phi[:, :mx, j, l] = (
                        self._d2_mul[None, :, j, l] * V[:, self._d2_idx[:, j, l]]
                    )

        if mh > 0:
            h, g, s = self._hamiltonian_at(Y, order)
            hh = h / self.hamiltonian_scale
            for k in range(1, mh + 1):
                col = mx + k - 1
                fac = 1.0 / math.factorial(k) if self.factorial_scaling else 1.0
                Phi[:, col] = fac * hh**k
                if order >= 1:
                    # grad of H^k / scale^k
                    coef = fac * k * hh ** (k - 1) / self.hamiltonian_scale
                    dPhi[:, col, :] = coef[:, None] * g
                if order >= 2:
                    if k >= 2:
                        c1 = (
                            fac * k * (k - 1) * hh ** (k - 2)
                            / self.hamiltonian_scale**2
                        )
                    else:
                        c1 = np.zeros_like(hh)
                    c2 = fac * k * hh ** (k - 1) / self.hamiltonian_scale
                    d2Phi[:, col, :, :] = (
                        c1[:, None, None] * g[:, :, None] * g[:, None, :]
                        + c2[:, None, None] * s
                    )
        return Phi, dPhi, d2Phi

    # -- manifest ------------------------------------------------------------

    def manifest(self) -> dict:
        entries = [
            {"kind": "monomial", "exponents": [int(e) for e in a]}
            for a in self.monomial_indices
        ]
        entries.extend(
            {"kind": "hamiltonian", "order": k}
            for k in range(1, self.hamiltonian_orders + 1)
        )
        return {
            "schema": 1,
            "n": self.n,
            "degree": self.degree,
            "m_x": self.m_x,
            "m_h": self.hamiltonian_orders,
            "hamiltonian_scale": self.hamiltonian_scale,
            "factorial_scaling": self.factorial_scaling,
            "ordering": "graded-lexicographic, constant first",
            "entries": entries,
        }

    def manifest_hash(self) -> str:
        blob = json.dumps(self.manifest(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_dictionary(
    n: int,
    d: int,
    m_h: int = 0,
    hamiltonian=None,
    transform=None,
    hamiltonian_scale: float = 1.0,
    factorial_scaling: bool = False,
) -> BasisDictionary:
    """Construct the dictionary of C(n+d, n) monomials plus m_h Hamiltonian powers.

    ``hamiltonian`` is either a DynamicsModel (its energy functions are used)
    or a (value, gradient, hessian) triple of callables on the global state.
    """
    if n < 1 or d < 1 or m_h < 0:
        raise ConfigurationError("need n >= 1, d >= 1 and m_h >= 0")
    hval = hgrad = hhess = None
    if hamiltonian is not None:
        if hasattr(hamiltonian, "hamiltonian"):
            hval = hamiltonian.hamiltonian
            hgrad = hamiltonian.hamiltonian_gradient
            hhess = hamiltonian.hamiltonian_hessian
        else:
            parts = tuple(hamiltonian) + (None,) * 3
            hval, hgrad, hhess = parts[0], parts[1], parts[2]
    if m_h > 0 and hval is None:
        raise ConfigurationError(
            f"m_h = {m_h} Hamiltonian orders requested but no Hamiltonian supplied"
        )
    return BasisDictionary(
        n=n,
        degree=d,
        monomial_indices=monomial_multi_indices(n, d),
        hamiltonian_orders=m_h,
        hamiltonian=hval,
        hamiltonian_gradient=hgrad,
        hamiltonian_hessian=hhess,
        transform=transform,
        hamiltonian_scale=hamiltonian_scale,
        factorial_scaling=factorial_scaling,
    )


def eval_basis(dictionary: BasisDictionary, y: Array):
    """Single-point evaluation: (Phi (m,), dPhi (m, n), d2Phi (m, n, n))."""
    Phi, dPhi, d2Phi = dictionary.eval_batch(np.asarray(y, dtype=float)[None, :], order=2)
    return Phi[0], dPhi[0], d2Phi[0]


def log_gaussian_coeffs(dictionary: BasisDictionary, mean: Array, cov: Array) -> Array:
    """Coefficients placing log N(y; mean, cov) into degree-<=2 monomial slots.

    Expansion of -(y-mu)' S^-1 (y-mu)/2 - log((2 pi)^(n/2) |cov|^(1/2)):
    constant, linear and quadratic terms only; Hamiltonian slots stay zero.
    """
    n = dictionary.n
    mean = np.asarray(mean, dtype=float).reshape(n)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if dictionary.degree < 2:
        raise ConfigurationError("dictionary needs degree >= 2 monomials")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise ConfigurationError(f"covariance is not SPD: {e}") from e
    Sinv = np.linalg.inv(cov)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))

    c = np.zeros(dictionary.m)
    const = -0.5 * (mean @ Sinv @ mean) - 0.5 * (n * np.log(2 * np.pi) + logdet)
    c[dictionary.monomial_slot((0,) * n)] = const
    for i in range(n):
        e = [0] * n
        e[i] = 1
        c[dictionary.monomial_slot(e)] = (Sinv @ mean)[i]
        e[i] = 2
        c[dictionary.monomial_slot(e)] = -0.5 * Sinv[i, i]
        for j in range(i + 1, n):
            e = [0] * n
            e[i] = 1
            e[j] = 1
            c[dictionary.monomial_slot(e)] = -Sinv[i, j]
    return c
