"""Dense complex linear algebra for small composite Hilbert spaces.

Everything here works on explicit numpy matrices (hbar = 1 throughout).
States and operators carry a :class:`HilbertLayout` describing the ordered
tensor factors of the composite space; the first factor is always the
two-level work medium wherever a composite engine state is involved.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

#: Hard cap on the total dense dimension; keeps density-matrix evolution tractable.
DIMENSION_CAP = 4096

#: Tolerances for density-matrix invariants.
HERM_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_SLACK = 1e-8

# Debug-mode validation: assert state invariants after every state-producing
# operation.  Off by default; costs an eigendecomposition per call.
VALIDATE = os.environ.get("QOTTO_VALIDATE", "0") not in ("", "0", "false")


class LinalgError(ValueError):
    """Raised on layout mismatches, cap violations or invalid states."""


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered subsystem dimensions of a composite Hilbert space."""

    factors: tuple[int, ...]

    def __post_init__(self):
        if not self.factors:
            raise LinalgError("layout needs at least one factor")
        if any(int(d) < 1 for d in self.factors):
            raise LinalgError(f"every factor dimension must be >= 1, got {self.factors}")
        object.__setattr__(self, "factors", tuple(int(d) for d in self.factors))
        if self.dim > DIMENSION_CAP:
            raise LinalgError(
                f"total dimension {self.dim} exceeds the dense cap {DIMENSION_CAP}"
            )

    @property
    def dim(self) -> int:
        return math.prod(self.factors)

    def __add__(self, other: "HilbertLayout") -> "HilbertLayout":
        return HilbertLayout(self.factors + other.factors)


@dataclass
class Operator:
    """Dense square matrix on a composite space (dimensionless or energy units)."""

    layout: HilbertLayout
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.shape != (self.layout.dim, self.layout.dim):
            raise LinalgError(
                f"operator shape {self.data.shape} does not match layout dim {self.layout.dim}"
            )


@dataclass
class DensityMatrix:
    """Hermitian, unit-trace, (numerically) positive matrix on a composite space."""

    layout: HilbertLayout
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.shape != (self.layout.dim, self.layout.dim):
            raise LinalgError(
                f"state shape {self.data.shape} does not match layout dim {self.layout.dim}"
            )
        if VALIDATE:
            self.validate()

    def validate(self, herm_tol: float = HERM_TOL, trace_tol: float = TRACE_TOL,
                 positivity_slack: float = POSITIVITY_SLACK) -> None:
        herm = np.max(np.abs(self.data - self.data.conj().T))
        if herm > herm_tol:
            raise LinalgError(f"state not Hermitian: max |rho - rho^dag| = {herm:.3e}")
        tr = complex(np.trace(self.data))
        if abs(tr - 1.0) > trace_tol:
            raise LinalgError(f"state trace {tr} deviates from 1 beyond {trace_tol}")
        lam_min = float(np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0])
        if lam_min < -positivity_slack:
            raise LinalgError(f"state has eigenvalue {lam_min:.3e} below -{positivity_slack}")


def _layout_of(x) -> HilbertLayout:
    return x.layout


def tensor(a, b):
    """Kronecker product of two operators (or two states); layouts concatenate.

    Basis ordering is fixed: the left factor is the major index.
    """
    layout = _layout_of(a) + _layout_of(b)  # cap enforced by the layout itself
    data = np.kron(a.data, b.data)
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(layout, data)
    return Operator(layout, data)


def coherent_ket(alpha: complex, n_max: int) -> np.ndarray:
    """Normalized truncated coherent state vector on n_max+1 levels."""
    n = np.arange(n_max + 1)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, n_max + 1)))))
    if alpha == 0:
        ket = np.zeros(n_max + 1, dtype=np.complex128)
        ket[0] = 1.0
        return ket
    log_amp = n * np.log(np.abs(alpha)) - 0.5 * log_fact
    amp = np.exp(log_amp - log_amp.max())
    phase = np.exp(1j * np.angle(alpha) * n)
    ket = amp * phase
    return ket / np.linalg.norm(ket)


def coherent_state(alpha: complex, n_max: int) -> DensityMatrix:
    """Pure truncated coherent state |alpha><alpha| on n_max+1 levels.

    Warns when the top Fock level carries more than 1e-6 of the population and
    refuses cutoffs where it exceeds 1e-3 (the truncation is then meaningless).
    """
    ket = coherent_ket(alpha, n_max)
    top = float(np.abs(ket[-1]) ** 2)
    if n_max > 0 or alpha != 0:
        if top > 1e-3:
            raise LinalgError(
                f"oscillator cutoff n_max={n_max} too small for |alpha|={abs(alpha):.4g}: "
                f"top-level population {top:.3e}"
            )
        if top > 1e-6:
            warnings.warn(
                f"coherent state with |alpha|={abs(alpha):.4g} has top-level population "
                f"{top:.3e} at n_max={n_max}",
                stacklevel=2,
            )
    return DensityMatrix(HilbertLayout((n_max + 1,)), np.outer(ket, ket.conj()))


def thermal_state(n_bar: float, n_max: int) -> DensityMatrix:
    """Truncated thermal oscillator state with mean occupation n_bar (renormalized)."""
    if n_bar <= 0:
        data = np.zeros((n_max + 1, n_max + 1), dtype=np.complex128)
        data[0, 0] = 1.0
        return DensityMatrix(HilbertLayout((n_max + 1,)), data)
    r = n_bar / (n_bar + 1.0)
    p = r ** np.arange(n_max + 1)
    p /= p.sum()
    return DensityMatrix(HilbertLayout((n_max + 1,)), np.diag(p.astype(np.complex128)))


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Trace out all factors not listed in ``keep`` (indices into the layout)."""
    keep = tuple(int(k) for k in keep)
    nf = len(rho.layout.factors)
    if any(k < 0 or k >= nf for k in keep) or len(set(keep)) != len(keep):
        raise LinalgError(f"invalid keep indices {keep} for {nf} factors")
    dims = rho.layout.factors
    t = rho.data.reshape(dims + dims)
    # Trace the dropped factors pairwise, highest index first so positions stay valid.
    for k in sorted(set(range(nf)) - set(keep), reverse=True):
        t = np.trace(t, axis1=k, axis2=k + nf)
        nf -= 1
    kept_sorted = sorted(keep)
    kept_dims = tuple(dims[k] for k in kept_sorted)
    d = math.prod(kept_dims)
    t = t.reshape(kept_dims + kept_dims)
    # Restore the caller's factor order if it differs from the layout order.
    if list(keep) != kept_sorted:
        perm = [kept_sorted.index(k) for k in keep]
        nk = len(keep)
        t = np.transpose(t, perm + [p + nk for p in perm])
    return DensityMatrix(HilbertLayout(tuple(dims[k] for k in keep)), t.reshape(d, d))


def herm_expm_action(h: Operator, dt: float, rho: DensityMatrix,
                     herm_tol: float = 1e-9) -> DensityMatrix:
    """Apply exp(-i h dt) rho exp(+i h dt) via eigendecomposition of Hermitian h."""
    if h.layout.dim != rho.layout.dim:
        raise LinalgError("operator and state dimensions differ")
    dev = np.max(np.abs(h.data - h.data.conj().T))
    if dev > herm_tol:
        raise LinalgError(f"generator not Hermitian: max |h - h^dag| = {dev:.3e}")
    w, v = np.linalg.eigh(0.5 * (h.data + h.data.conj().T))
    phases = np.exp(-1j * w * dt)
    u = (v * phases) @ v.conj().T
    return DensityMatrix(rho.layout, u @ rho.data @ u.conj().T)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """(1/2) * trace norm of (a - b); the difference is Hermitian so eigvalsh suffices."""
    if a.layout.factors != b.layout.factors:
        raise LinalgError(f"layout mismatch: {a.layout.factors} vs {b.layout.factors}")
    diff = a.data - b.data
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def annihilation(n_levels: int) -> np.ndarray:
    """Truncated bosonic annihilation operator b on n_levels Fock states."""
    return np.diag(np.sqrt(np.arange(1, n_levels)), k=1).astype(np.complex128)


def expect(op: np.ndarray, rho: np.ndarray) -> complex:
    """Tr{op rho} for raw matrices."""
    return complex(np.einsum("ij,ji->", op, rho))
