"""GRAPPA kernel calibration and missing-line interpolation.

Phase-encode lines are grid columns. A kernel for acceleration ``R`` predicts
each missing column at offset ``o`` (``1 <= o < R``) from the nearest
acquired lattice column ``a = c - o`` by combining ``source_lines`` lattice
columns ``a + k R`` (``k = -(S/2 - 1) .. S/2``) and ``taps`` neighbouring rows,
across all coils.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AcsTooSmallError, DomainError, GeometryError, ShapeError, SingularFitError
from .kcore import ComplexGrid, Domain, ifft2c_array
from .sampling import Mask, rng_for

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class KernelGeometry:
    source_lines: int = 4
    taps: int = 5
    accel: int = 2
    coils: int = 1

    def __post_init__(self):
        if self.source_lines < 2 or self.source_lines % 2:
            raise ValueError(f"source_lines must be a positive even integer, got {self.source_lines}")
        if self.taps < 1 or self.taps % 2 == 0:
            raise ValueError(f"taps must be a positive odd integer, got {self.taps}")
        if self.accel < 2:
            raise ValueError(f"accel must be >= 2, got {self.accel}")
        if self.coils < 1:
            raise ValueError(f"coils must be >= 1, got {self.coils}")

    @property
    def unknowns(self) -> int:
        """Weights per target coil and offset."""
        return self.coils * self.source_lines * self.taps

    def source_steps(self) -> np.ndarray:
        """Lattice steps ``k`` of the source columns relative to the base column."""
        half = self.source_lines // 2
        return np.arange(-(half - 1), half + 1)

    def to_dict(self) -> dict:
        return {"source_lines": self.source_lines, "taps": self.taps, "accel": self.accel, "coils": self.coils}


@dataclass(frozen=True, eq=False)
class GrappaKernel:
    geometry: KernelGeometry
    weights: np.ndarray  # [accel - 1, coils, coils * source_lines * taps]
    fit_residual: float = 0.0

    def __post_init__(self):
        g = self.geometry
        w = np.array(self.weights, dtype=np.complex128, copy=True)
        expected = (g.accel - 1, g.coils, g.unknowns)
        if w.shape != expected:
            raise ShapeError(f"kernel weights shape {w.shape} != {expected}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class CoilStack:
    """``N_c`` same-sized grids in one domain, stored as a ``(coils, H, W)`` array."""

    data: np.ndarray
    domain: Domain

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex128, copy=True)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ShapeError(f"CoilStack needs a (coils, H, W) array, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "domain", Domain(self.domain))

    @classmethod
    def from_grids(cls, grids) -> CoilStack:
        grids = list(grids)
        if not grids:
            raise ShapeError("CoilStack needs at least one coil")
        dom = grids[0].domain
        if any(g.domain is not dom for g in grids):
            raise DomainError("coil grids disagree on domain")
        if any(g.shape != grids[0].shape for g in grids):
            raise ShapeError("coil grids disagree on shape")
        return cls(np.stack([g.data for g in grids]), dom)

    @property
    def coils(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    def grids(self) -> list[ComplexGrid]:
        return [ComplexGrid(c, self.domain) for c in self.data]


def as_stack(y) -> CoilStack:
    if isinstance(y, CoilStack):
        return y
    return CoilStack(y.data, y.domain)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def _calibration_system(block: np.ndarray, geom: KernelGeometry, offset: int, lattice_offset):
    """Source matrix ``A`` and target matrix ``B`` for one missing-line offset."""
    nc, h, w = block.shape
    R = geom.accel
    ht = geom.taps // 2
    steps = geom.source_steps()
    lo = -steps[0] * R
    hi = steps[-1] * R
    bases = np.arange(lo, w - hi)
    bases = bases[bases + offset < w]
    if lattice_offset is not None:
        bases = bases[(bases - lattice_offset) % R == 0]
    rows = np.arange(ht, h - ht)
    if bases.size == 0 or rows.size == 0:
        return np.zeros((0, geom.unknowns), complex), np.zeros((0, nc), complex)
    cols = []
    for coil in range(nc):
        for k in steps:
            for t in range(geom.taps):
                sub = block[coil][np.ix_(rows + t - ht, bases + k * R)]
                cols.append(sub.ravel())
    A = np.stack(cols, axis=1)
    B = np.stack([block[coil][np.ix_(rows, bases + offset)].ravel() for coil in range(nc)], axis=1)
    return A, B


def estimate_kernel(acs, geom: KernelGeometry, ridge: float = DEFAULT_RIDGE, lattice_offset: int | None = None) -> GrappaKernel:
    """Fit GRAPPA weights by Tikhonov-regularized least squares on the ACS block.

    Every window that fits inside the block contributes one equation per
    target coil. ``ridge`` is scaled by the mean diagonal of the normal
    matrix. When ``lattice_offset`` is given, only windows whose base column
    satisfies ``(base - lattice_offset) % accel == 0`` are used; this matches
    data that is linear only with respect to a fixed sampling lattice.
    """
    acs = as_stack(acs)
    if acs.domain is not Domain.KSPACE:
        raise DomainError("calibration data must be k-space")
    if acs.coils != geom.coils:
        raise ShapeError(f"kernel geometry expects {geom.coils} coils, ACS has {acs.coils}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    n = geom.unknowns
    weights = np.zeros((geom.accel - 1, geom.coils, n), dtype=np.complex128)
    res_num = 0.0
    res_den = 0.0
    for o in range(1, geom.accel):
        A, B = _calibration_system(acs.data, geom, o, lattice_offset)
        if A.shape[0] < 2 * n:
            raise AcsTooSmallError(
                f"ACS block {acs.shape} gives {A.shape[0]} equations for offset {o}, need {2 * n}"
            )
        AhA = A.conj().T @ A
        AhB = A.conj().T @ B
        scale = float(np.real(np.trace(AhA))) / n
        if scale <= 0 or not np.isfinite(scale):
            raise SingularFitError("normal matrix is zero; ACS carries no signal")
        if ridge == 0 and np.linalg.cond(AhA) > 1.0 / (np.finfo(float).eps * n):
            raise SingularFitError("normal equations are singular at ridge = 0")
        lam = ridge * scale
        try:
            W = np.linalg.solve(AhA + lam * np.eye(n), AhB)
        except np.linalg.LinAlgError as exc:
            raise SingularFitError(str(exc)) from exc
        weights[o - 1] = W.T
        res_num += float(np.sum(np.abs(A @ W - B) ** 2))
        res_den += float(np.sum(np.abs(B) ** 2))
    resid = np.sqrt(res_num / res_den) if res_den > 0 else 0.0
    return GrappaKernel(geom, weights, float(resid))


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def lattice_offset(m: Mask, accel: int) -> int:
    """Column offset ``p`` of the uniform acquisition lattice of ``m``.

    Raises GeometryError unless the mask is column-constant and, outside its
    ACS, samples exactly the columns with ``(c - p) % accel == 0``.
    """
    if not m.is_column_constant():
        raise GeometryError("GRAPPA needs whole phase-encode lines (column-constant mask)")
    cols = m.keep[0]
    outside = np.ones(m.width, dtype=bool)
    outside[m.acs.col_slice] = False
    idx = np.arange(m.width)
    if cols.all():
        return (m.width // 2) % accel
    for p in range(accel):
        lattice = (idx - p) % accel == 0
        if np.all(cols[lattice]) and np.array_equal(cols[outside], lattice[outside]):
            return p
    raise GeometryError(f"mask is not uniformly undersampled at R={accel} outside the ACS")


@dataclass(frozen=True)
class _FillPlan:
    """Precomputed gather indices for one (mask, kernel geometry) pair."""

    offsets: tuple  # per missing-offset: (o, target_cols, base_cols)
    pad_rows: int
    pad_cols: int
    geom: KernelGeometry
    keep: np.ndarray


def _plan(m: Mask, geom: KernelGeometry) -> _FillPlan:
    p = lattice_offset(m, geom.accel)
    missing = np.flatnonzero(~m.keep[0])
    groups = []
    for o in range(1, geom.accel):
        tgt = missing[(missing - p) % geom.accel == o]
        groups.append((o, tgt, tgt - o))
    steps = geom.source_steps()
    pad_cols = int(max(abs(steps[0]), abs(steps[-1])) * geom.accel + geom.accel)
    return _FillPlan(tuple(groups), geom.taps // 2, pad_cols, geom, m.keep)


def _fill(data: np.ndarray, plan: _FillPlan, weights: np.ndarray) -> np.ndarray:
    """Predicted values at missing columns; zeros elsewhere."""
    geom = plan.geom
    nc, h, w = data.shape
    pr, pc = plan.pad_rows, plan.pad_cols
    padded = np.zeros((nc, h + 2 * pr, w + 2 * pc), dtype=np.complex128)
    padded[:, pr : pr + h, pc : pc + w] = data
    out = np.zeros_like(data, dtype=np.complex128)
    steps = geom.source_steps()
    for o, tgt, base in plan.offsets:
        if tgt.size == 0:
            continue
        src = np.empty((nc, len(steps), geom.taps, h, tgt.size), dtype=np.complex128)
        for si, k in enumerate(steps):
            cols = base + k * geom.accel + pc
            for t in range(geom.taps):
                src[:, si, t] = padded[:, t : t + h, cols]
        src = src.reshape(geom.unknowns, h, tgt.size)
        out[:, :, tgt] = np.tensordot(weights[o - 1], src, axes=(1, 0))
    return out


def _fill_adjoint(g: np.ndarray, plan: _FillPlan, weights: np.ndarray) -> np.ndarray:
    geom = plan.geom
    nc, h, w = g.shape
    pr, pc = plan.pad_rows, plan.pad_cols
    padded = np.zeros((nc, h + 2 * pr, w + 2 * pc), dtype=np.complex128)
    steps = geom.source_steps()
    for o, tgt, base in plan.offsets:
        if tgt.size == 0:
            continue
        # back-project each target value onto its sources with conjugate weights
        back = np.tensordot(weights[o - 1].conj().T, g[:, :, tgt], axes=(1, 0))
        back = back.reshape(nc, len(steps), geom.taps, h, tgt.size)
        for si, k in enumerate(steps):
            cols = base + k * geom.accel + pc
            for t in range(geom.taps):
                padded[:, t : t + h, cols] += back[:, si, t]
    return padded[:, pr : pr + h, pc : pc + w]


class GrappaOperator:
    """Linear fill operator for a fixed mask and kernel.

    ``forward(y) = keep * y + fill(y)``; :meth:`adjoint` is its exact
    conjugate transpose, used for back-propagating losses through the fill.
    """

    def __init__(self, m: Mask, kernel: GrappaKernel):
        if m.shape[0] < 1:
            raise GeometryError("empty mask")
        self.kernel = kernel
        self.plan = _plan(m, kernel.geometry)
        self.keep = m.keep

    def forward(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data)
        squeeze = data.ndim == 2
        if squeeze:
            data = data[None]
        self._check(data)
        out = np.where(self.keep, data, 0) + _fill(data, self.plan, self.kernel.weights)
        return out[0] if squeeze else out

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g)
        squeeze = g.ndim == 2
        if squeeze:
            g = g[None]
        self._check(g)
        out = np.where(self.keep, g, 0) + _fill_adjoint(g, self.plan, self.kernel.weights)
        return out[0] if squeeze else out

    def _check(self, data):
        if data.shape[1:] != self.keep.shape:
            raise ShapeError(f"data {data.shape[1:]} does not match mask {self.keep.shape}")
        if data.shape[0] != self.kernel.geometry.coils:
            raise GeometryError(f"kernel is for {self.kernel.geometry.coils} coils, data has {data.shape[0]}")


def apply_kernel(y_u, m: Mask, k: GrappaKernel) -> CoilStack:
    """Fill the unsampled phase-encode lines of ``y_u``; sampled entries are copied."""
    y_u = as_stack(y_u)
    if y_u.domain is not Domain.KSPACE:
        raise DomainError("apply_kernel expects k-space data")
    return CoilStack(GrappaOperator(m, k).forward(y_u.data), Domain.KSPACE)


def calibration_block(y_u, m: Mask) -> CoilStack:
    y_u = as_stack(y_u)
    return CoilStack(y_u.data[:, m.acs.row_slice, m.acs.col_slice], Domain.KSPACE)


def estimate_from_mask(y_u, m: Mask, geom: KernelGeometry, ridge: float = DEFAULT_RIDGE) -> GrappaKernel:
    """Calibrate on the ACS block of ``m`` using the mask's lattice phase."""
    p = lattice_offset(m, geom.accel)
    c0 = m.acs.col_slice.start
    return estimate_kernel(calibration_block(y_u, m), geom, ridge, lattice_offset=(p - c0) % geom.accel)


def combine_coils(images: np.ndarray) -> np.ndarray:
    """Root-sum-of-squares; a single coil keeps its complex phase."""
    if images.shape[0] == 1:
        return images[0]
    return np.sqrt(np.sum(np.abs(images) ** 2, axis=0)).astype(np.complex128)


def grappa_reconstruct(y_u, m: Mask, geom: KernelGeometry | None = None, ridge: float = DEFAULT_RIDGE) -> ComplexGrid:
    """Calibrate, fill, inverse transform and coil-combine."""
    y_u = as_stack(y_u)
    if geom is None:
        geom = KernelGeometry(accel=m.accel or 2, coils=y_u.coils)
    if y_u.domain is not Domain.KSPACE:
        raise DomainError("grappa_reconstruct expects k-space data")
    if m.keep.all():
        filled = y_u.data
    else:
        kernel = estimate_from_mask(y_u, m, geom, ridge)
        filled = GrappaOperator(m, kernel).forward(y_u.data)
    return ComplexGrid(combine_coils(ifft2c_array(filled)), Domain.IMAGE)


# ---------------------------------------------------------------------------
# synthetic oracle data
# ---------------------------------------------------------------------------


def _mirror(z: np.ndarray) -> np.ndarray:
    """``z(-f)`` on a centered grid (index ``j`` maps to ``(N - j) % N``)."""
    return np.roll(np.flip(z, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))


def _direct_fill(full: np.ndarray, geom: KernelGeometry, weights: np.ndarray, p: int) -> np.ndarray:
    """Entry-by-column reference evaluation of the kernel on lattice data."""
    nc, h, w = full.shape
    R, ht = geom.accel, geom.taps // 2
    out = full.copy()
    steps = geom.source_steps()
    for c in range(w):
        o = (c - p) % R
        if o == 0:
            continue
        a = c - o
        for i in range(h):
            vec = np.zeros(geom.unknowns, dtype=np.complex128)
            n = 0
            for coil in range(nc):
                for k in steps:
                    col = a + k * R
                    for t in range(geom.taps):
                        row = i + t - ht
                        if 0 <= row < h and 0 <= col < w:
                            vec[n] = full[coil, row, col]
                        n += 1
            out[:, i, c] = weights[o - 1] @ vec
    return out


def make_linear_data(dims, geom: KernelGeometry, seed: int = 0, real_image: bool = False):
    """Synthesize k-space that a known kernel reproduces exactly.

    Lattice columns (``(c - W//2) % R == 0``) are random; every other column is
    the truth-kernel combination of its zero-padded lattice sources.

    With ``real_image=True`` (R = 2, one coil) the lattice data is made
    conjugate symmetric, band-limited along rows and zero on the Nyquist
    column, and the kernel is real and point symmetric, so the full k-space
    is the spectrum of a real image.

    Returns
    -------
    (CoilStack, GrappaKernel)
        Fully sampled k-space and the kernel that generated it.
    """
    h, w = dims
    rng = rng_for(seed, 7)
    R = geom.accel
    p = (w // 2) % R
    lattice = (np.arange(w) - p) % R == 0
    n = geom.unknowns
    if real_image:
        if R != 2 or geom.coils != 1:
            raise ValueError("real_image data needs accel = 2 and a single coil")
        z = rng.standard_normal((1, h, w)) + 1j * rng.standard_normal((1, h, w))
        lat = 0.5 * (z + np.conj(_mirror(z)))
        f_row = np.abs(np.arange(h) - h // 2)
        lat[:, f_row >= h // 2 - geom.taps // 2, :] = 0
        lat[:, :, 0] = 0
        half = rng.standard_normal((geom.source_lines, geom.taps)) / np.sqrt(n)
        sym = 0.5 * (half + half[::-1, ::-1])
        weights = sym.reshape(1, 1, n).astype(np.complex128)
    else:
        lat = rng.standard_normal((geom.coils, h, w)) + 1j * rng.standard_normal((geom.coils, h, w))
        weights = (rng.standard_normal((R - 1, geom.coils, n)) + 1j * rng.standard_normal((R - 1, geom.coils, n)))
        weights /= np.sqrt(2 * n)
    lat = np.where(lattice, lat, 0)
    full = _direct_fill(lat, geom, weights, p)
    return CoilStack(full, Domain.KSPACE), GrappaKernel(geom, weights, 0.0)
