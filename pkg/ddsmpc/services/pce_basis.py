"""Orthogonal polynomial bases for exact PCEs of initial state, inputs and noise.

The horizon basis is ordered as

    [1, x0-germ functions (L_x), w-block 0 (L_w), ..., w-block N-1 (L_w)]

with one degree-1 function per stochastic germ component. Gaussian germs use
probabilists' Hermite polynomials, uniform germs Legendre polynomials on the
normalized germ in [-1, 1] under the probability measure (density 1/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.polynomial import hermite_e, legendre

from ddsmpc.core.errors import ValidationError

DEGREE = 1
QUADRATURE_NODES = 40


class GermKind(str, Enum):
    HERMITE_GAUSSIAN = "hermite_gaussian"
    LEGENDRE_UNIFORM = "legendre_uniform"


def univariate_norm_squared(kind: GermKind, degree: int) -> float:
    """<p_n, p_n> under the germ probability measure."""
    if kind is GermKind.HERMITE_GAUSSIAN:
        return float(math.factorial(degree))
    return 1.0 / (2 * degree + 1)


def univariate_eval(kind: GermKind, degree: int, xi: np.ndarray) -> np.ndarray:
    coef = np.zeros(degree + 1)
    coef[degree] = 1.0
    if kind is GermKind.HERMITE_GAUSSIAN:
        return hermite_e.hermeval(xi, coef)
    return legendre.legval(xi, coef)


def germ_quadrature(kind: GermKind, n: int = QUADRATURE_NODES):
    """Nodes and probability weights (summing to one) for the germ measure."""
    if kind is GermKind.HERMITE_GAUSSIAN:
        nodes, weights = hermite_e.hermegauss(n)
    else:
        nodes, weights = legendre.leggauss(n)
    return nodes, weights / weights.sum()


@dataclass(frozen=True, eq=False)
class GermFamily:
    """Independent germ components, affine in a standard germ.

    ``center``/``scale`` hold mean/stddev for Gaussian components and
    midpoint/half-width for uniform ones. Components with zero scale are
    deterministic and contribute no basis function.
    """

    kind: GermKind
    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if center.shape != scale.shape or center.ndim != 1:
            raise ValidationError(
                "germ center and scale must be vectors of equal length",
                details={"center": center.shape, "scale": scale.shape},
            )
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(scale))):
            raise ValidationError("germ parameters must be finite")
        if np.any(scale < 0):
            raise ValidationError("germ scale must be nonnegative")
        if self.kind is GermKind.LEGENDRE_UNIFORM and np.any(scale <= 0):
            raise ValidationError("uniform germ requires lower < upper componentwise")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def gaussian(cls, mean, stddev) -> GermFamily:
        return cls(GermKind.HERMITE_GAUSSIAN, mean, stddev)

    @classmethod
    def uniform(cls, lower, upper) -> GermFamily:
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValidationError("uniform bounds must have equal length")
        if np.any(lower >= upper):
            raise ValidationError(
                "uniform germ requires lower < upper componentwise",
                details={"lower": lower.tolist(), "upper": upper.tolist()},
            )
        center, half = 0.5 * (lower + upper), 0.5 * (upper - lower)
        return cls(GermKind.LEGENDRE_UNIFORM, center, half)

    @property
    def n_components(self) -> int:
        return int(self.center.size)

    @property
    def stochastic_components(self) -> np.ndarray:
        return np.flatnonzero(self.scale > 0)

    @property
    def dimension(self) -> int:
        return int(self.stochastic_components.size)

    @property
    def variance(self) -> np.ndarray:
        return self.scale**2 * univariate_norm_squared(self.kind, DEGREE)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` realizations of the underlying random vector."""
        xi = _draw_germ(self.kind, rng, (size, self.n_components))
        return self.center + self.scale * univariate_eval(self.kind, DEGREE, xi)


def _draw_germ(kind: GermKind, rng: np.random.Generator, shape) -> np.ndarray:
    if kind is GermKind.HERMITE_GAUSSIAN:
        return rng.standard_normal(shape)
    return rng.uniform(-1.0, 1.0, shape)


@dataclass(frozen=True)
class BasisBlock:
    label: str
    kind: GermKind | None
    start: int
    size: int

    @property
    def indices(self) -> range:
        return range(self.start, self.start + self.size)


@dataclass(frozen=True, eq=False)
class JointBasis:
    """Horizon-wide basis with ``total_terms = 1 + L_x + N * L_w`` functions."""

    horizon: int
    initial_germ: GermFamily | None
    noise_germ: GermFamily
    blocks: tuple[BasisBlock, ...] = field(init=False)
    norms: np.ndarray = field(init=False)
    kinds: tuple[GermKind | None, ...] = field(init=False)

    def __post_init__(self) -> None:
        blocks = [BasisBlock("constant", None, 0, 1)]
        start = 1
        if self.initial_germ is not None and self.initial_germ.dimension > 0:
            blocks.append(
                BasisBlock(
                    "x0", self.initial_germ.kind, start, self.initial_germ.dimension
                )
            )
            start += self.initial_germ.dimension
        else:
            blocks.append(BasisBlock("x0", None, start, 0))
        for i in range(self.horizon):
            blocks.append(
                BasisBlock(
                    f"w{i}", self.noise_germ.kind, start, self.noise_germ.dimension
                )
            )
            start += self.noise_germ.dimension

        kinds: list[GermKind | None] = [None] * start
        norms = np.ones(start)
        for block in blocks[1:]:
            for j in block.indices:
                kinds[j] = block.kind
                norms[j] = univariate_norm_squared(block.kind, DEGREE)
        norms.setflags(write=False)
        object.__setattr__(self, "blocks", tuple(blocks))
        object.__setattr__(self, "norms", norms)
        object.__setattr__(self, "kinds", tuple(kinds))

    @property
    def L_x(self) -> int:
        return self.blocks[1].size

    @property
    def L_w(self) -> int:
        return self.noise_germ.dimension

    @property
    def L(self) -> int:
        return self.L_x + self.horizon * self.L_w

    @property
    def total_terms(self) -> int:
        return self.L + 1

    def noise_block(self, i: int) -> BasisBlock:
        if not 0 <= i < self.horizon:
            raise ValidationError(
                f"noise block {i} outside horizon [0, {self.horizon - 1}]"
            )
        return self.blocks[2 + i]

    def block_of(self, j: int) -> str:
        _check_index(self, j)
        for block in self.blocks:
            if j in block.indices:
                return block.label
        raise AssertionError("unreachable: blocks cover every index")

    def is_compatible(self, other: JointBasis) -> bool:
        return self is other or (
            self.total_terms == other.total_terms
            and self.kinds == other.kinds
            and self.horizon == other.horizon
        )


def _check_index(basis: JointBasis, j: int) -> None:
    if not 0 <= j <= basis.L:
        raise ValidationError(f"basis index {j} outside [0, {basis.L}]")


def build_horizon_basis(
    initial_state_germ: GermFamily | None, noise_germ: GermFamily, horizon: int
) -> JointBasis:
    if horizon < 1:
        raise ValidationError(
            "horizon must be at least 1", details={"horizon": horizon}
        )
    return JointBasis(horizon, initial_state_germ, noise_germ)


def norm_squared(basis: JointBasis, j: int) -> float:
    _check_index(basis, j)
    return float(basis.norms[j])


def sample_germ(
    basis: JointBasis, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Draw germ values ``omega`` (one per non-constant basis function)."""
    shape = (basis.L,) if size is None else (size, basis.L)
    omega = np.empty(shape)
    for block in basis.blocks[1:]:
        if block.size:
            cols = slice(block.start - 1, block.start - 1 + block.size)
            omega[..., cols] = _draw_germ(block.kind, rng, omega[..., cols].shape)
    return omega


def evaluate_basis(basis: JointBasis, omega: np.ndarray) -> np.ndarray:
    """phi(omega) of length L+1 (or a matrix with one row per sample)."""
    omega = np.asarray(omega, dtype=float)
    phi = np.ones(omega.shape[:-1] + (basis.total_terms,))
    for block in basis.blocks[1:]:
        if block.size:
            cols = slice(block.start - 1, block.start - 1 + block.size)
            phi[..., block.start : block.start + block.size] = univariate_eval(
                block.kind, DEGREE, omega[..., cols]
            )
    return phi


def quadrature_inner_product(
    basis: JointBasis, j: int, jp: int, nodes: int = QUADRATURE_NODES
) -> float:
    """E[phi^j phi^jp] by Gauss quadrature over the germs involved."""
    _check_index(basis, j)
    _check_index(basis, jp)

    def expectation(index: int, power: int) -> float:
        if index == 0:
            return 1.0
        kind = basis.kinds[index]
        x, w = germ_quadrature(kind, nodes)
        return float(np.sum(w * univariate_eval(kind, DEGREE, x) ** power))

    if j == jp:
        return expectation(j, 2)
    return expectation(j, 1) * expectation(jp, 1)


@dataclass(frozen=True, eq=False)
class PceVector:
    """PCE coefficients of a random vector; row ``j`` multiplies ``phi^j``."""

    coefficients: np.ndarray
    basis: JointBasis

    def __post_init__(self) -> None:
        coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if coefficients.shape[0] != self.basis.total_terms:
            raise ValidationError(
                "coefficient rows must equal basis size",
                details={
                    "rows": coefficients.shape[0],
                    "total_terms": self.basis.total_terms,
                },
            )
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def mean(self) -> np.ndarray:
        return self.coefficients[0].copy()

    @property
    def variance(self) -> np.ndarray:
        norms = self.basis.norms[1:, None]
        return np.sum(self.coefficients[1:] ** 2 * norms, axis=0)

    def realize(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi) @ self.coefficients


def moments(v: PceVector) -> tuple[np.ndarray, np.ndarray]:
    return v.mean, v.variance


@dataclass(frozen=True, eq=False)
class PceTrajectory:
    """Coefficients over a time window, indexed (time, coefficient, component)."""

    coefficients: np.ndarray
    basis: JointBasis

    def __post_init__(self) -> None:
        coefficients = np.asarray(self.coefficients, dtype=float)
        if coefficients.ndim != 3 or coefficients.shape[1] != self.basis.total_terms:
            raise ValidationError(
                "PCE trajectory must have shape (time, L+1, n)",
                details={"shape": coefficients.shape},
            )
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def zeros(cls, basis: JointBasis, length: int, n: int) -> PceTrajectory:
        return cls(np.zeros((length, basis.total_terms, n)), basis)

    @classmethod
    def stack(cls, vectors: list[PceVector]) -> PceTrajectory:
        if not vectors:
            raise ValidationError("cannot stack an empty list of PCE vectors")
        basis = vectors[0].basis
        return cls(np.stack([v.coefficients for v in vectors]), basis)

    @property
    def length(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n(self) -> int:
        return self.coefficients.shape[2]

    def at(self, i: int) -> PceVector:
        return PceVector(self.coefficients[i], self.basis)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.coefficients[:, 0, :].copy()
        norms = self.basis.norms[None, 1:, None]
        variance = np.sum(self.coefficients[:, 1:, :] ** 2 * norms, axis=1)
        return mean, variance

    def realize(self, phi: np.ndarray) -> np.ndarray:
        """Realization (time, n) at one basis evaluation ``phi``."""
        return np.einsum("j,tjn->tn", np.asarray(phi), self.coefficients)


def _place_germ(
    germ: GermFamily, basis: JointBasis, block: BasisBlock, what: str
) -> PceVector:
    if germ.dimension != block.size or (block.size and germ.kind is not block.kind):
        raise ValidationError(
            f"{what} germ does not match basis block {block.label}",
            details={"germ_dimension": germ.dimension, "block_size": block.size},
        )
    coefficients = np.zeros((basis.total_terms, germ.n_components))
    coefficients[0] = germ.center
    for m, c in enumerate(germ.stochastic_components):
        coefficients[block.start + m, c] = germ.scale[c]
    return PceVector(coefficients, basis)


def canonical_noise_pce(
    germ: GermFamily, basis: JointBasis, noise_block: int
) -> PceVector:
    """Exact two-term-per-component PCE of the noise placed in ``noise_block``."""
    return _place_germ(germ, basis, basis.noise_block(noise_block), "noise")


def initial_state_pce(germ: GermFamily, basis: JointBasis) -> PceVector:
    return _place_germ(germ, basis, basis.blocks[1], "initial-state")


def noise_trajectory_pce(germ: GermFamily, basis: JointBasis) -> PceTrajectory:
    """Noise targets for prediction offsets 0..N-1, offset i in block i."""
    return PceTrajectory.stack(
        [canonical_noise_pce(germ, basis, i) for i in range(basis.horizon)]
    )
