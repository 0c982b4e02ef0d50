"""PCE optimal control problems assembled as second-order cone programs.

Variables are laid out role-major (x, u, then g or h), then by PCE coefficient
j, then by prediction offset i, then by component:

    index(x, j, i, c) = offset_x + (j * N + i) * n_x + c

The objective is 1/2 ||C z||^2 + q'z + const with ||x||_Q^2 = 1/2 x'Qx, so the
reported value is sum_i E[||X_i||_Q^2 + ||U_i||_R^2].
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from ddsmpc.core import linalg
from ddsmpc.core.errors import (
    InfeasibleSystemError,
    PersistencyOfExcitationError,
    ValidationError,
)
from ddsmpc.services.hankel import (
    BehaviorHankel,
    HankelMatrix,
    require_persistency,
    stacked_behavior_hankel,
)
from ddsmpc.services.lti_sim import DataRecord, LtiSystem
from ddsmpc.services.pce_basis import JointBasis, PceTrajectory, PceVector

logger = logging.getLogger(__name__)

CONIC_FORMAT = "ddsmpc-conic/1"
REDUCTION_TOL = 1e-8


def sigma(eps: float) -> float:
    """Back-off factor of the moment-based chance constraint."""
    if not 0.0 < eps <= 1.0:
        raise ValidationError(f"risk level must lie in (0, 1], got {eps}")
    return math.sqrt((2.0 - eps) / eps)


def causality_zero_indices(L_x: int, L_w: int, N: int, offset: int) -> frozenset[int]:
    """Coefficients of the input at ``offset`` that must vanish.

    An input may only depend on the initial-state germ and on noise blocks
    realized before it.
    """
    if not 0 <= offset <= N - 1:
        raise ValidationError(f"offset {offset} outside horizon [0, {N - 1}]")
    L = L_x + N * L_w
    return frozenset(range(L_x + offset * L_w + 1, L + 1))


@dataclass(frozen=True, eq=False)
class BoxConstraint:
    """Per-component bounds; +-inf marks an unconstrained face."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValidationError("box bounds must be vectors of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValidationError("box bounds must not be NaN")
        if np.any(lower > upper):
            raise ValidationError(
                "box is empty",
                details={"lower": lower.tolist(), "upper": upper.tolist()},
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, n: int) -> BoxConstraint:
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def on_component(cls, n: int, index: int, lower: float, upper: float):
        box_lower = np.full(n, -np.inf)
        box_upper = np.full(n, np.inf)
        box_lower[index] = lower
        box_upper[index] = upper
        return cls(box_lower, box_upper)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def active(self) -> np.ndarray:
        return np.isfinite(self.lower) | np.isfinite(self.upper)


@dataclass(frozen=True, eq=False)
class OcpSpec:
    N: int
    Q: np.ndarray
    R: np.ndarray
    state_box: BoxConstraint | None = None
    input_box: BoxConstraint | None = None
    eps_x: float = 1.0
    eps_u: float = 1.0

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValidationError("horizon N must be at least 1", details={"N": self.N})
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if not linalg.is_psd(M):
                raise ValidationError(f"{name} must be symmetric positive semidefinite")
        state_box = self.state_box or BoxConstraint.unbounded(Q.shape[0])
        input_box = self.input_box or BoxConstraint.unbounded(R.shape[0])
        if state_box.n != Q.shape[0] or input_box.n != R.shape[0]:
            raise ValidationError(
                "box dimensions must match Q and R",
                details={"state_box": state_box.n, "input_box": input_box.n},
            )
        sigma(self.eps_x)
        sigma(self.eps_u)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "state_box", state_box)
        object.__setattr__(self, "input_box", input_box)

    @property
    def n_x(self) -> int:
        return self.Q.shape[0]

    @property
    def n_u(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class VariableBlock:
    role: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 0


@dataclass(frozen=True)
class VariableLayout:
    blocks: tuple[VariableBlock, ...]

    @classmethod
    def from_shapes(cls, shapes: list[tuple[str, tuple[int, ...]]]) -> VariableLayout:
        blocks, offset = [], 0
        for role, shape in shapes:
            block = VariableBlock(role, offset, tuple(int(s) for s in shape))
            blocks.append(block)
            offset += block.size
        return cls(tuple(blocks))

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def roles(self) -> tuple[str, ...]:
        return tuple(b.role for b in self.blocks)

    def block(self, role: str) -> VariableBlock:
        for b in self.blocks:
            if b.role == role:
                return b
        raise ValidationError(f"layout has no {role!r} variables")

    def has(self, role: str) -> bool:
        return role in self.roles

    def slice(self, role: str) -> slice:
        b = self.block(role)
        return slice(b.offset, b.offset + b.size)

    def index(self, role: str, *idx: int) -> int:
        b = self.block(role)
        return b.offset + int(np.ravel_multi_index(idx, b.shape))

    def describe(self) -> list[dict[str, Any]]:
        return [
            {"role": b.role, "offset": b.offset, "shape": list(b.shape)}
            for b in self.blocks
        ]


@dataclass(frozen=True, eq=False)
class SocConstraint:
    """||F z + f||_2 <= g'z + h."""

    F: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    h: float
    tag: str = "soc"

    def violation(self, z: np.ndarray) -> float:
        lhs = float(np.linalg.norm(self.F @ z + self.f)) if self.F.shape[0] else 0.0
        return max(lhs - float(self.g @ z + self.h), 0.0)


def _coo_dict(m) -> dict[str, Any]:
    m = sp.coo_matrix(m)
    return {
        "shape": list(m.shape),
        "row": m.row.tolist(),
        "col": m.col.tolist(),
        "data": m.data.tolist(),
    }


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """min 1/2||Cz||^2 + q'z + const s.t. A z = b, cones, G z <= k, z[fixed] = val.

    ``lift`` maps this program's variables back to those of the program it was
    derived from by substitution, ``source_layout`` describes the latter.
    """

    layout: VariableLayout
    C: sp.csr_matrix
    q: np.ndarray
    const: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    row_tags: np.ndarray
    row_coeff: np.ndarray
    socs: tuple[SocConstraint, ...] = ()
    G: sp.csr_matrix | None = None
    k: np.ndarray | None = None
    fixed_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    fixed_val: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lift: tuple[sp.csr_matrix, np.ndarray] | None = None
    source_layout: VariableLayout | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.layout.size
        if self.G is None:
            object.__setattr__(self, "G", sp.csr_matrix((0, n)))
            object.__setattr__(self, "k", np.zeros(0))
        shapes = [self.C.shape[1], self.A_eq.shape[1], self.G.shape[1], self.q.size]
        if any(s != n for s in shapes) or self.b_eq.size != self.A_eq.shape[0]:
            raise ValidationError(
                "conic program blocks disagree with the variable layout",
                details={"n": n, "shapes": shapes},
            )

    @property
    def n(self) -> int:
        return self.layout.size

    @property
    def P(self) -> sp.csr_matrix:
        return (self.C.T @ self.C).tocsr()

    def objective(self, z: np.ndarray) -> float:
        Cz = self.C @ z
        return float(0.5 * Cz @ Cz + self.q @ z + self.const)

    def rows(self, tag: str, j: int | None = None) -> np.ndarray:
        mask = self.row_tags == tag
        if j is not None:
            mask &= self.row_coeff == j
        return np.flatnonzero(mask)

    def with_b_eq(self, b_eq: np.ndarray) -> ConicProgram:
        b_eq = np.asarray(b_eq, dtype=float)
        if b_eq.shape != self.b_eq.shape:
            raise ValidationError("right-hand side has the wrong length")
        return _replace(self, b_eq=b_eq)

    def lift_vector(self, z: np.ndarray) -> np.ndarray:
        if self.lift is None:
            return np.asarray(z, dtype=float)
        E, e = self.lift
        return E @ z + e

    def substitute(
        self,
        E,
        e: np.ndarray,
        layout: VariableLayout,
        drop_tags: tuple[str, ...] = (),
        tol: float = REDUCTION_TOL,
    ) -> ConicProgram:
        """Rewrite the program in y with z = E y + e.

        Equality rows tagged in ``drop_tags`` must hold identically after the
        substitution; they are checked and removed.
        """
        E = sp.csr_matrix(E)
        e = np.asarray(e, dtype=float)
        if E.shape != (self.n, layout.size) or e.size != self.n:
            raise ValidationError(
                "substitution does not match the program dimensions",
                details={"E": E.shape, "n": self.n, "layout": layout.size},
            )
        Ce = self.C @ e
        C = (self.C @ E).tocsr()
        q = E.T @ (self.q + self.C.T @ Ce)
        const = self.const + float(self.q @ e) + 0.5 * float(Ce @ Ce)

        A = (self.A_eq @ E).tocsr()
        b = self.b_eq - self.A_eq @ e
        keep = np.ones(A.shape[0], dtype=bool)
        for tag in drop_tags:
            rows = self.rows(tag)
            if rows.size == 0:
                continue
            coef = abs(A[rows]).max() if A[rows].nnz else 0.0
            resid = float(np.max(np.abs(b[rows])))
            scale = 1.0 + float(np.max(np.abs(self.b_eq[rows])))
            if max(coef, resid) > tol * scale:
                raise InfeasibleSystemError(
                    f"rows tagged {tag!r} do not vanish under the substitution",
                    residual=max(coef, resid),
                    details={"tag": tag},
                )
            keep[rows] = False

        socs: list[SocConstraint] = []
        G_rows = [(self.G @ E).tocsr()]
        k_parts = [self.k - self.G @ e]
        for soc in self.socs:
            F = (soc.F @ E).tocsr()
            F.eliminate_zeros()
            f = soc.f + soc.F @ e
            g = E.T @ soc.g
            h = soc.h + float(soc.g @ e)
            if F.nnz == 0:
                G_rows.append(sp.csr_matrix(-g.reshape(1, -1)))
                k_parts.append(np.array([h - float(np.linalg.norm(f))]))
            else:
                socs.append(SocConstraint(F, f, g, h, soc.tag))

        fixed_idx, fixed_val = [], []
        extra_rows, extra_b = [], []
        for idx, val in zip(self.fixed_idx, self.fixed_val):
            row = E.getrow(int(idx))
            row.eliminate_zeros()
            target = float(val) - float(e[idx])
            if row.nnz == 0:
                if abs(target) > tol:
                    raise InfeasibleSystemError(
                        "fixed variable contradicts the substitution",
                        residual=abs(target),
                    )
            elif row.nnz == 1 and row.data[0] == 1.0:
                fixed_idx.append(int(row.indices[0]))
                fixed_val.append(target)
            else:
                extra_rows.append(row)
                extra_b.append(target)

        A = A[keep]
        b = b[keep]
        row_tags = self.row_tags[keep]
        row_coeff = self.row_coeff[keep]
        if extra_rows:
            A = sp.vstack([A, *extra_rows]).tocsr()
            b = np.concatenate([b, extra_b])
            row_tags = np.concatenate([row_tags, ["fixed"] * len(extra_rows)])
            row_coeff = np.concatenate([row_coeff, [-1] * len(extra_rows)])

        if self.lift is None:
            lift = (E, e)
        else:
            E0, e0 = self.lift
            lift = ((E0 @ E).tocsr(), E0 @ e + e0)

        return ConicProgram(
            layout=layout,
            C=C,
            q=np.asarray(q).ravel(),
            const=const,
            A_eq=A,
            b_eq=b,
            row_tags=row_tags,
            row_coeff=row_coeff,
            socs=tuple(socs),
            G=sp.vstack(G_rows).tocsr(),
            k=np.concatenate(k_parts),
            fixed_idx=np.asarray(fixed_idx, dtype=int),
            fixed_val=np.asarray(fixed_val, dtype=float),
            lift=lift,
            source_layout=self.source_layout or self.layout,
            meta=dict(self.meta),
        )

    def to_json(self) -> str:
        """Versioned debug dump; deterministic for identical programs."""
        payload = {
            "format": CONIC_FORMAT,
            "n": self.n,
            "layout": self.layout.describe(),
            "kind": self.meta.get("kind", "unknown"),
            "objective": {
                "C": _coo_dict(self.C),
                "q": self.q.tolist(),
                "const": self.const,
            },
            "equality": {
                "A": _coo_dict(self.A_eq),
                "b": self.b_eq.tolist(),
                "tags": [str(t) for t in self.row_tags],
                "coeff": self.row_coeff.tolist(),
            },
            "soc": [
                {
                    "tag": s.tag,
                    "F": _coo_dict(s.F),
                    "f": s.f.tolist(),
                    "g": _coo_dict(sp.csr_matrix(s.g.reshape(1, -1))),
                    "h": s.h,
                }
                for s in self.socs
            ],
            "linear": {"G": _coo_dict(self.G), "k": self.k.tolist()},
            "fixed": {
                "index": self.fixed_idx.tolist(),
                "value": self.fixed_val.tolist(),
            },
        }
        return json.dumps(payload, sort_keys=True)


def _replace(program: ConicProgram, **changes) -> ConicProgram:
    values = {name: getattr(program, name) for name in program.__dataclass_fields__}
    values.update(changes)
    return ConicProgram(**values)


class _Assembler:
    """Collects sparse constraint blocks for a fixed layout."""

    def __init__(self, layout: VariableLayout) -> None:
        self.layout = layout
        self.eq_blocks: list[sp.csr_matrix] = []
        self.b: list[np.ndarray] = []
        self.tags: list[np.ndarray] = []
        self.coeffs: list[np.ndarray] = []
        self.socs: list[SocConstraint] = []
        self.G_rows: list[sp.csr_matrix] = []
        self.k: list[float] = []
        self.fixed: dict[int, float] = {}

    def place(self, role: str, M) -> sp.csr_matrix:
        """Embed ``M`` (acting on one role's variables) into full-width columns."""
        M = sp.coo_matrix(M)
        offset = self.layout.block(role).offset
        return sp.csr_matrix(
            (M.data, (M.row, M.col + offset)), shape=(M.shape[0], self.layout.size)
        )

    def equality(self, parts: list[tuple[str, Any]], rhs, tag: str, coeff) -> None:
        block = self.place(*parts[0])
        for role, M in parts[1:]:
            block = block + self.place(role, M)
        rhs = np.asarray(rhs, dtype=float).ravel()
        self.eq_blocks.append(block.tocsr())
        self.b.append(rhs)
        self.tags.append(np.full(rhs.size, tag))
        self.coeffs.append(np.broadcast_to(np.asarray(coeff), rhs.shape).astype(int))

    def linear_le(self, index: int, sign: float, bound: float) -> None:
        row = sp.csr_matrix(([sign], ([0], [index])), shape=(1, self.layout.size))
        self.G_rows.append(row)
        self.k.append(bound)

    def chance(
        self,
        role: str,
        i: int,
        c: int,
        free_coeffs: list[int],
        norms: np.ndarray,
        s: float,
        lower: float,
        upper: float,
        tag: str,
    ) -> None:
        n = self.layout.size
        mean_idx = self.layout.index(role, 0, i, c)
        if free_coeffs:
            cols = [self.layout.index(role, j, i, c) for j in free_coeffs]
            vals = s * np.sqrt(norms[free_coeffs])
            F = sp.csr_matrix(
                (vals, (np.arange(len(cols)), cols)), shape=(len(cols), n)
            )
        for sign, bound in ((1.0, upper), (-1.0, -lower)):
            if not np.isfinite(bound):
                continue
            if not free_coeffs:
                self.linear_le(mean_idx, sign, bound)
                continue
            g = np.zeros(n)
            g[mean_idx] = -sign
            self.socs.append(SocConstraint(F, np.zeros(len(cols)), g, bound, tag))

    def build(self, C: sp.csr_matrix, meta: dict[str, Any]) -> ConicProgram:
        n = self.layout.size
        fixed_idx = np.array(sorted(self.fixed), dtype=int)
        return ConicProgram(
            layout=self.layout,
            C=C,
            q=np.zeros(n),
            const=0.0,
            A_eq=sp.vstack(self.eq_blocks).tocsr(),
            b_eq=np.concatenate(self.b),
            row_tags=np.concatenate(self.tags),
            row_coeff=np.concatenate(self.coeffs),
            socs=tuple(self.socs),
            G=sp.vstack(self.G_rows).tocsr() if self.G_rows else None,
            k=np.asarray(self.k, dtype=float) if self.G_rows else None,
            fixed_idx=fixed_idx,
            fixed_val=np.array([self.fixed[i] for i in fixed_idx], dtype=float),
            meta=meta,
        )


def _check_targets(
    spec: OcpSpec,
    basis: JointBasis,
    x_init: PceVector,
    w_coeffs: PceTrajectory,
) -> None:
    if spec.N != basis.horizon:
        raise ValidationError(
            "OCP horizon must equal the basis horizon",
            details={"N": spec.N, "basis_horizon": basis.horizon},
        )
    if not (x_init.basis.is_compatible(basis) and w_coeffs.basis.is_compatible(basis)):
        raise ValidationError("initial-state and noise PCEs must use the OCP basis")
    if x_init.coefficients.shape[1] != spec.n_x or w_coeffs.n != spec.n_x:
        raise ValidationError("initial-state/noise dimension does not match Q")
    if w_coeffs.length < spec.N:
        raise ValidationError(
            "noise coefficient trajectory shorter than the horizon",
            details={"length": w_coeffs.length, "N": spec.N},
        )


def _assemble_common(
    asm: _Assembler, spec: OcpSpec, basis: JointBasis, x_init: PceVector
) -> sp.csr_matrix:
    """Initial-state pinning, objective, chance constraints and causality zeros."""
    N, J = spec.N, basis.total_terms
    n_x, n_u = spec.n_x, spec.n_u
    norms = basis.norms

    pin = sp.kron(sp.eye(J), sp.eye(n_x, N * n_x))
    asm.equality(
        [("x", pin)], x_init.coefficients, "x_init", np.repeat(np.arange(J), n_x)
    )

    weight = sp.diags(np.sqrt(norms))
    Cx = sp.kron(weight, sp.kron(sp.eye(N), linalg.psd_factor(spec.Q)))
    Cu = sp.kron(weight, sp.kron(sp.eye(N), linalg.psd_factor(spec.R)))
    C = sp.vstack([asm.place("x", Cx), asm.place("u", Cu)]).tocsr()

    s_x, s_u = sigma(spec.eps_x), sigma(spec.eps_u)
    for i in range(1, N):
        for c in np.flatnonzero(spec.state_box.active):
            asm.chance(
                "x", i, int(c), list(range(1, J)), norms, s_x,
                spec.state_box.lower[c], spec.state_box.upper[c], "chance_x",
            )
    for i in range(N):
        zeros = causality_zero_indices(basis.L_x, basis.L_w, N, i)
        for j in zeros:
            for c in range(n_u):
                asm.fixed[asm.layout.index("u", j, i, c)] = 0.0
        free = [j for j in range(1, J) if j not in zeros]
        for c in np.flatnonzero(spec.input_box.active):
            asm.chance(
                "u", i, int(c), free, norms, s_u,
                spec.input_box.lower[c], spec.input_box.upper[c], "chance_u",
            )
    return C


def build_model_based(
    sys: LtiSystem,
    spec: OcpSpec,
    basis: JointBasis,
    x_init_coeffs: PceVector,
    w_coeffs_traj: PceTrajectory,
) -> ConicProgram:
    _check_targets(spec, basis, x_init_coeffs, w_coeffs_traj)
    if sys.n_x != spec.n_x or sys.n_u != spec.n_u:
        raise ValidationError("system dimensions do not match Q and R")
    N, J, n_x, n_u = spec.N, basis.total_terms, sys.n_x, sys.n_u
    layout = VariableLayout.from_shapes([("x", (J, N, n_x)), ("u", (J, N, n_u))])
    asm = _Assembler(layout)
    C = _assemble_common(asm, spec, basis, x_init_coeffs)

    if N > 1:
        nxt = sp.eye(N - 1, N, k=1)
        cur = sp.eye(N - 1, N)
        Dx = sp.kron(nxt, sp.eye(n_x)) - sp.kron(cur, sys.A)
        Du = -sp.kron(cur, sys.B)
        w = w_coeffs_traj.coefficients[: N - 1].transpose(1, 0, 2)
        asm.equality(
            [("x", sp.kron(sp.eye(J), Dx)), ("u", sp.kron(sp.eye(J), Du))],
            w,
            "dyn",
            np.repeat(np.arange(J), (N - 1) * n_x),
        )
    program = asm.build(C, {"kind": "model_based", "N": N})
    logger.debug(
        "ocp_built kind=model_based n=%d eq=%d soc=%d",
        program.n,
        program.A_eq.shape[0],
        len(program.socs),
    )
    return program


def build_data_driven(
    data: DataRecord,
    spec: OcpSpec,
    basis: JointBasis,
    x_init_coeffs: PceVector,
    w_coeffs_traj: PceTrajectory,
) -> ConicProgram:
    """Hankel-based program: H_N(x) g^j = x^j, H_N(u) g^j = u^j, H_N(w) g^j = w^j.

    Noise-free records (w_hat identically zero) carry no noise rows; the inputs
    alone must then be persistently exciting and the noise targets zero.
    """
    _check_targets(spec, basis, x_init_coeffs, w_coeffs_traj)
    if data.n_x != spec.n_x or data.n_u != spec.n_u:
        raise ValidationError("data record dimensions do not match Q and R")
    N, J, n_x, n_u = spec.N, basis.total_terms, spec.n_x, spec.n_u
    if data.T < N:
        raise ValidationError(
            "data record shorter than the horizon", details={"T": data.T, "N": N}
        )
    noise_free = not np.any(data.w_hat)
    if noise_free and np.any(w_coeffs_traj.coefficients[:N]):
        raise ValidationError("noise-free data cannot represent nonzero noise targets")
    require_persistency(data.u, None if noise_free else data.w_hat, n_x + N)
    behavior = stacked_behavior_hankel(data.x, data.u, data.w_hat, N)
    cols = behavior.columns

    layout = VariableLayout.from_shapes(
        [("x", (J, N, n_x)), ("u", (J, N, n_u)), ("g", (J, cols))]
    )
    asm = _Assembler(layout)
    C = _assemble_common(asm, spec, basis, x_init_coeffs)

    eye_J = sp.eye(J)
    w = w_coeffs_traj.coefficients[:N].transpose(1, 0, 2)
    for role, H, n in (("x", behavior.H_x, n_x), ("u", behavior.H_u, n_u)):
        asm.equality(
            [
                ("g", sp.kron(eye_J, sp.csr_matrix(H.matrix))),
                (role, -sp.eye(J * N * n)),
            ],
            np.zeros(J * N * n),
            role,
            np.repeat(np.arange(J), N * n),
        )
    if not noise_free:
        asm.equality(
            [("g", sp.kron(eye_J, sp.csr_matrix(behavior.H_w.matrix)))],
            w,
            "w",
            np.repeat(np.arange(J), N * n_x),
        )
    meta = {"kind": "data_driven", "N": N, "hankel": behavior, "noise_free": noise_free}
    program = asm.build(C, meta)
    logger.debug(
        "ocp_built kind=data_driven n=%d eq=%d soc=%d T=%d",
        program.n,
        program.A_eq.shape[0],
        len(program.socs),
        data.T,
    )
    return program


def apply_nullspace_reduction(
    program: ConicProgram, H_w: HankelMatrix | np.ndarray, w_coeffs: PceTrajectory
) -> ConicProgram:
    """Replace each g^j by M_w h^j + H_w^+ w^j and drop the noise equalities."""
    H = np.asarray(getattr(H_w, "matrix", H_w), dtype=float)
    rank = linalg.numerical_rank(H)
    if rank < H.shape[0]:
        raise PersistencyOfExcitationError(
            "noise Hankel matrix is not of full row rank",
            required_order=getattr(H_w, "depth", 0),
            rank=rank,
            required_rank=H.shape[0],
        )
    layout = program.layout
    g_block = layout.block("g")
    J, cols = g_block.shape
    if cols != H.shape[1]:
        raise ValidationError("noise Hankel matrix does not match the g variables")
    M_w = linalg.null_space(H)
    depth = H.shape[0] // w_coeffs.n
    w = w_coeffs.coefficients[:depth].transpose(1, 0, 2).reshape(J, -1)
    offsets = w @ linalg.pinv(H).T

    new_layout = VariableLayout.from_shapes(
        [(b.role, b.shape) for b in layout.blocks if b.role != "g"]
        + [("h", (J, M_w.shape[1]))]
    )
    keep = layout.size - g_block.size
    E = sp.block_diag(
        [sp.eye(keep), sp.kron(sp.eye(J), sp.csr_matrix(M_w))], format="csr"
    )
    e = np.zeros(layout.size)
    e[layout.slice("g")] = offsets.ravel()
    reduced = program.substitute(E, e, new_layout, drop_tags=("w",))
    logger.debug("nullspace_reduced g_dim=%d h_dim=%d", cols, M_w.shape[1])
    return reduced


def build_reduced_data_driven(
    data: DataRecord,
    spec: OcpSpec,
    basis: JointBasis,
    x_init_coeffs: PceVector,
    w_coeffs_traj: PceTrajectory,
) -> ConicProgram:
    program = build_data_driven(data, spec, basis, x_init_coeffs, w_coeffs_traj)
    if program.meta["noise_free"]:
        return program
    behavior: BehaviorHankel = program.meta["hankel"]
    return apply_nullspace_reduction(program, behavior.H_w, w_coeffs_traj)


def pin_initial_state(basis: JointBasis, x_k) -> PceVector:
    """Deterministic PCE of a measured state: mean x_k, higher coefficients zero."""
    x_k = np.asarray(x_k, dtype=float).reshape(-1)
    coefficients = np.zeros((basis.total_terms, x_k.size))
    coefficients[0] = x_k
    return PceVector(coefficients, basis)


@dataclass(frozen=True, eq=False)
class OcpSolution:
    x_coeffs: PceTrajectory
    u_coeffs: PceTrajectory
    g_coeffs: np.ndarray | None
    objective_value: float
    status: str
    report: Any = None


def solution_from_vector(
    program: ConicProgram, z: np.ndarray, basis: JointBasis, report: Any = None
) -> OcpSolution:
    full = program.lift_vector(z)
    layout = program.source_layout or program.layout
    x_block, u_block = layout.block("x"), layout.block("u")
    x = full[layout.slice("x")].reshape(x_block.shape).transpose(1, 0, 2)
    u = full[layout.slice("u")].reshape(u_block.shape).transpose(1, 0, 2)
    g = None
    if layout.has("g"):
        g = full[layout.slice("g")].reshape(layout.block("g").shape)
    status = getattr(getattr(report, "status", None), "value", "unknown")
    return OcpSolution(
        PceTrajectory(x, basis),
        PceTrajectory(u, basis),
        g,
        program.objective(z),
        status,
        report,
    )


def _expected_quadratic(traj: PceTrajectory, W: np.ndarray) -> float:
    """sum_i E[1/2 X_i' W X_i] computed from mean and covariance."""
    mean, _ = traj.moments()
    higher = traj.coefficients[:, 1:, :]
    norms = traj.basis.norms[1:]
    cov = np.einsum("tja,j,tjb->tab", higher, norms, higher)
    return 0.5 * float(
        np.einsum("ta,ab,tb->", mean, W, mean) + np.einsum("ab,tba->", W, cov)
    )


def objective_from_moments(solution: OcpSolution, Q, R) -> float:
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    return _expected_quadratic(solution.x_coeffs, Q) + _expected_quadratic(
        solution.u_coeffs, R
    )


def batch_lq_oracle(sys: LtiSystem, Q, R, x0, N: int):
    """Deterministic finite-horizon LQ solution by batch least squares.

    Minimizes sum_{i<N} 1/2 (x_i'Qx_i + u_i'Ru_i) with x_0 fixed and
    x_{i+1} = A x_i + B u_i for i < N - 1. Returns (x, u, value).
    """
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    n_x, n_u = sys.n_x, sys.n_u
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    Phi = np.vstack([np.linalg.matrix_power(sys.A, i) for i in range(N)])
    Gamma = np.zeros((N * n_x, N * n_u))
    for i in range(1, N):
        for m in range(i):
            Gamma[i * n_x : (i + 1) * n_x, m * n_u : (m + 1) * n_u] = (
                np.linalg.matrix_power(sys.A, i - 1 - m) @ sys.B
            )
    Qbar = np.kron(np.eye(N), Q)
    Rbar = np.kron(np.eye(N), R)
    H = Gamma.T @ Qbar @ Gamma + Rbar
    u = -np.linalg.solve(H, Gamma.T @ Qbar @ Phi @ x0)
    x = Phi @ x0 + Gamma @ u
    value = 0.5 * float(x @ Qbar @ x + u @ Rbar @ u)
    return x.reshape(N, n_x), u.reshape(N, n_u), value
