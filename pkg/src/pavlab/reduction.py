"""Reduction of paving arbitrary elements to paving constant-diagonal projections.

The pipeline: split into self-adjoint components, center and rescale,
map affinely into the spectral window [1/3, 1/2], slice the expectation
into bands and flatten it to the band anchors, split each band into four
equal-trace corners, dilate each corner to an honest projection with
constant diagonal (using a Fourier sub-corner so the off-corner part has
exactly constant diagonal), pave each projection through a callback, and
recombine.  Every certified inequality along the way is re-checked
numerically and recorded in a ReductionTrace.

Exact trace matching for the dilation is impossible on a discrete trace
grid; the corner element is shifted by a scalar gamma < t/(s+m) so the
dilated g is an exact projection with exactly constant diagonal at the
shifted anchor, and gamma is recorded.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .finite_vn import (
    MasaFrame,
    TracedMatrix,
    _as_entries,
    conditional_expectation,
    op_norm,
    perpendicular_frame,
)
from .paving import Partition, PavingReport, paving_defect, refine

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class Stage:
    label: str
    measured: float
    bound: float
    ok: bool
    detail: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "measured": self.measured,
            "bound": self.bound,
            "ok": self.ok,
            "detail": self.detail,
        }


@dataclass
class ReductionTrace:
    eps: float
    stages: list = field(default_factory=list)
    band_count: int = 0
    anchors: tuple = ()

    def add(self, label: str, measured: float, bound: float, **detail) -> None:
        self.stages.append(Stage(label, float(measured), float(bound),
                                 bool(measured <= bound), detail))

    @property
    def all_ok(self) -> bool:
        return all(s.ok for s in self.stages)

    def to_json_dict(self) -> dict:
        return {
            "eps": self.eps,
            "band_count": self.band_count,
            "anchors": list(self.anchors),
            "stages": [s.to_json_dict() for s in self.stages],
        }


def split_real_imag(x) -> tuple[TracedMatrix, TracedMatrix]:
    """x = y1 + i y2 with both components self-adjoint, norms <= ||x||."""
    a = _as_entries(x)
    y1 = (a + a.conj().T) / 2
    y2 = (a - a.conj().T) / 2j
    return TracedMatrix(y1), TracedMatrix(y2)


def normalize_selfadjoint(x, frame: MasaFrame) -> TracedMatrix:
    """y0 = (x + 5)/12 for centered unit-norm self-adjoint x.

    The affine map puts the spectrum inside [1/3, 1/2] (checked within
    1e-10); paving is invariant under the map, so nothing is lost.
    """
    a = _as_entries(x)
    if np.abs(a - a.conj().T).max() > 1e-10:
        raise ValueError("input must be self-adjoint")
    if np.abs(conditional_expectation(a, frame).entries).max() > 1e-10:
        raise ValueError("input must have zero expectation on the MASA")
    y0 = (a + 5.0 * np.eye(a.shape[0])) / 12.0
    ev = np.linalg.eigvalsh(y0)
    if ev.min() < 1 / 3 - 1e-10 or ev.max() > 0.5 + 1e-10:
        raise ValueError("spectrum escaped [1/3, 1/2]; caller must rescale to unit norm")
    return TracedMatrix(y0)


@dataclass(frozen=True)
class Band:
    index: int          # 1-based band number
    anchor: float       # t_k = 1/3 + (k-1) eps/6, the band's left endpoint
    slots: np.ndarray   # frame-basis indices whose expectation lies in the band


def band_slices(a, eps: float, frame: MasaFrame | None = None) -> list[Band]:
    """Spectral bands [1/3 + (k-1) eps/6, 1/3 + k eps/6) of a MASA element.

    Nonzero bands only; their count is at most 1/eps + 1 because the
    window [1/3, 1/2] has width 1/6.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    m = _as_entries(a)
    if frame is None:
        frame = MasaFrame.identity(m.shape[0])
    d = np.real(np.diagonal(frame.to_frame(m)))
    if d.min() < 1 / 3 - 1e-9 or d.max() > 0.5 + 1e-9:
        raise ValueError("expectation values must lie in [1/3, 1/2]")
    width = eps / 6
    ks = np.floor((np.clip(d, 1 / 3, None) - 1 / 3) / width).astype(np.int64) + 1
    bands = []
    for k in sorted(set(ks.tolist())):
        slots = np.flatnonzero(ks == k)
        bands.append(Band(index=int(k), anchor=1 / 3 + (k - 1) * width, slots=slots))
    if len(bands) > 1 / eps + 1:
        raise AssertionError(f"band count {len(bands)} exceeds 1/eps + 1")
    return bands


@dataclass(frozen=True)
class FlattenResult:
    y: TracedMatrix
    scaling: np.ndarray     # the diagonal of b, in frame coordinates
    drift: float            # ||y0 - y||
    transfer: float         # ||(y0 - y) - E_A(y0 - y)||, the paving-relevant part


def flatten(y0, bands: list[Band], eps: float, frame: MasaFrame | None = None) -> FlattenResult:
    """y = b^(-1/2) y0 b^(-1/2) with b = sum_k a_k / t_k.

    Makes the expectation exactly constant (the band anchor) on every
    band, moving y0 by at most eps/4 in operator norm.
    """
    m = _as_entries(y0)
    if frame is None:
        frame = MasaFrame.identity(m.shape[0])
    z = frame.to_frame(m)
    d = np.real(np.diagonal(z))
    b = np.zeros(m.shape[0])
    covered = np.zeros(m.shape[0], dtype=bool)
    for band in bands:
        b[band.slots] = d[band.slots] / band.anchor
        covered[band.slots] = True
    if not covered.all():
        raise ValueError("bands do not cover every slot")
    if b.min() < 1 - 1e-12 or b.max() > 1 + eps / 2 + 1e-12:
        raise ValueError("band scaling escaped [1, 1 + eps/2]; slots assigned to wrong bands")
    scale = 1.0 / np.sqrt(b)
    y = frame.from_frame(z * np.outer(scale, scale))
    drift = op_norm(m - y)
    if drift > eps / 4 + 1e-12:
        raise AssertionError(f"flatten drift {drift:.3e} exceeds eps/4")
    delta = m - y
    transfer = op_norm(delta - conditional_expectation(delta, frame).entries)
    yy = frame.to_frame(y)
    for band in bands:
        dev = np.abs(np.real(np.diagonal(yy))[band.slots] - band.anchor).max()
        if dev > 1e-9:
            raise AssertionError(f"flattened expectation deviates {dev:.3e} on band {band.index}")
    return FlattenResult(TracedMatrix(y), b, float(drift), float(transfer))


# ---------------------------------------------------------------------------
# Dilation to a constant-diagonal projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DilationResult:
    g: TracedMatrix          # the projection, full size, frame conjugated
    corner: np.ndarray       # (s+m) x (s+m) block: [e-part, p-part] coordinates
    e_slots: np.ndarray
    p_slots: np.ndarray
    anchor: float            # t' = t - shift: the exact constant diagonal of g
    shift: float             # gamma, the scalar absorbed to match the trace grid
    g2_dev: float
    diag_dev: float


def _fourier_basis(m: int) -> np.ndarray:
    if m == 1:
        return np.ones((1, 1), dtype=np.complex128)
    return perpendicular_frame(m).basis


def dilate_to_projection(y, e_slots, t_k: float, frame: MasaFrame | None = None,
                         p_slots=None) -> DilationResult:
    """Dilate the corner y restricted to e_slots into a projection g.

    g agrees with the (shifted) corner on e, maps the complement of the
    corner through a partial isometry into a Fourier sub-corner on
    p_slots, and has exactly constant diagonal t' = t_k - gamma on its
    support, gamma < t_k/(s+m) being the trace-grid rounding shift.
    """
    a = _as_entries(y)
    dim = a.shape[0]
    if frame is None:
        frame = MasaFrame.identity(dim)
    z = frame.to_frame(a)
    e_slots = np.asarray(e_slots, dtype=np.int64)
    s = e_slots.size
    if s == 0:
        raise ValueError("empty corner")
    r = z[np.ix_(e_slots, e_slots)]
    if np.abs(r - r.conj().T).max() > 1e-9:
        raise ValueError("corner element must be self-adjoint")
    lam_r, w = np.linalg.eigh(r)
    if lam_r.min() < 1e-9 or lam_r.max() > 1 - 1e-9:
        raise ValueError("corner spectrum must lie strictly inside (0, 1)")
    tr_comp = float(np.sum(1.0 - lam_r))
    m = int(np.ceil(tr_comp / t_k - 1e-12))
    if p_slots is None:
        free = np.setdiff1d(np.arange(dim), e_slots)
        if free.size < m:
            raise ValueError(f"insufficient room: need {m} fresh slots, have {free.size}")
        p_slots = free[:m]
    else:
        p_slots = np.asarray(p_slots, dtype=np.int64)
        if p_slots.size < m:
            raise ValueError(f"insufficient room: need {m} fresh slots, given {p_slots.size}")
        p_slots = p_slots[:m]
    if np.intersect1d(e_slots, p_slots).size:
        raise ValueError("p slots must be disjoint from the corner")

    gamma = (t_k * m - tr_comp) / (s + m)
    if not -1e-12 <= gamma < t_k / (s + m) + 1e-12:
        raise AssertionError(f"rounding shift gamma {gamma:.3e} out of range")
    t_prime = t_k - gamma
    lam_shift = lam_r - gamma            # spectrum of the shifted corner
    if lam_shift.min() < 1e-12:
        raise ValueError("rounding shift pushed the corner spectrum to zero")
    comp = 1.0 - lam_shift               # eigenvalues of e - y'
    f = _fourier_basis(m)
    iso = f[:, :s] @ w.conj().T          # maps the corner onto the Fourier sub-corner
    r_shift = (w * lam_shift) @ w.conj().T
    k_block = (w * np.sqrt(lam_shift * comp)) @ w.conj().T @ iso.conj().T
    c_block = (f[:, :s] * comp) @ f[:, :s].conj().T

    size = s + m
    corner = np.zeros((size, size), dtype=np.complex128)
    corner[:s, :s] = r_shift
    corner[:s, s:] = k_block
    corner[s:, :s] = k_block.conj().T
    corner[s:, s:] = c_block
    g2_dev = float(np.abs(corner @ corner - corner).max())
    diag_dev = float(np.abs(np.real(np.diagonal(corner)) - t_prime).max()
                     + np.abs(np.imag(np.diagonal(corner))).max())

    full = np.zeros((dim, dim), dtype=np.complex128)
    slots = np.concatenate([e_slots, p_slots])
    full[np.ix_(slots, slots)] = corner
    g = TracedMatrix(frame.from_frame(full))
    return DilationResult(
        g=g, corner=corner, e_slots=e_slots, p_slots=np.asarray(p_slots),
        anchor=float(t_prime), shift=float(gamma),
        g2_dev=g2_dev, diag_dev=diag_dev,
    )


# ---------------------------------------------------------------------------
# The full pipeline
# ---------------------------------------------------------------------------

def _quarter_split(slots: np.ndarray) -> list[np.ndarray]:
    """Four contiguous quarters in frame order, remainders to the first."""
    return [q for q in np.array_split(slots, 4) if q.size]


def _pave_component(z: np.ndarray, eps: float, projection_paver, frame: MasaFrame,
                    seed: int, trace: ReductionTrace) -> np.ndarray:
    """Assign every slot a piece label realizing the reduction paving of z.

    z must be self-adjoint, centered, unit operator norm.
    """
    dim = frame.dim
    y0 = normalize_selfadjoint(z, frame).entries
    ev = np.linalg.eigvalsh(y0)
    trace.add("normalize_window", max(1 / 3 - ev.min(), ev.max() - 0.5), 1e-10,
              lo=float(ev.min()), hi=float(ev.max()))

    a = conditional_expectation(y0, frame)
    bands = band_slices(a, eps, frame)
    trace.band_count = max(trace.band_count, len(bands))
    trace.anchors = tuple(sorted(set(trace.anchors) | {b.anchor for b in bands}))
    trace.add("band_count", len(bands), 1 / eps + 1)

    flat = flatten(y0, bands, eps, frame)
    trace.add("flatten_drift", flat.drift, eps / 4)
    y = frame.to_frame(flat.y.entries)

    # the affine normalization is undone by a factor 12, so corner defects
    # plus the flatten transfer must fit into eps/12
    target_abs = max(1e-9, 0.9 * (eps / 12 - flat.transfer))
    assignment = np.full(dim, -1, dtype=np.int64)
    next_label = 0
    worst_g2 = worst_diag = 0.0
    worst_gamma = (0.0, 1.0)  # (gamma, its per-corner bound t/(s+m))
    worst_corner = 0.0
    n_proj_max = 0
    corner_id = 0
    for band in bands:
        for quarter in _quarter_split(band.slots):
            corner_id += 1
            dil = dilate_to_projection(flat.y, quarter, band.anchor, frame)
            worst_g2 = max(worst_g2, dil.g2_dev)
            worst_diag = max(worst_diag, dil.diag_dev)
            if dil.shift >= worst_gamma[0]:
                worst_gamma = (dil.shift, band.anchor / (quarter.size + dil.p_slots.size))
            base_g = max(1.0 - dil.anchor, dil.anchor)
            target_ratio = max(0.0, (target_abs - dil.shift)) / base_g
            part = projection_paver(dil.corner, target_ratio, seed + corner_id)
            n_proj_max = max(n_proj_max, part.effective_blocks)
            s = quarter.size
            # restrict the corner paving to the e-part of the corner
            for i in range(part.n_blocks):
                pos = part.block_indices(i)
                epos = pos[pos < s]
                if epos.size:
                    assignment[quarter[epos]] = next_label
                    next_label += 1
            # measured corner defect on y against the band anchor
            local = part.assignment[:s]
            mask = local[:, None] == local[None, :]
            corner_y = y[np.ix_(quarter, quarter)]
            comp = corner_y * mask
            worst_corner = max(worst_corner, op_norm(comp - band.anchor * np.eye(s)))
    trace.add("dilation_idempotent", worst_g2, 1e-8)
    trace.add("dilation_constant_diagonal", worst_diag, 1e-8)
    trace.add("dilation_rounding_shift", worst_gamma[0], worst_gamma[1])
    trace.add("corner_defect", worst_corner, target_abs + worst_gamma[0] + 1e-9,
              n_proj_max=n_proj_max)
    if (assignment < 0).any():
        raise AssertionError("pipeline left slots unassigned")
    return assignment


def reduce_and_pave(x, eps: float, projection_paver, frame: MasaFrame | None = None,
                    seed: int = 0) -> tuple[Partition, ReductionTrace, PavingReport]:
    """Full reduction pipeline; returns the partition, trace, and report.

    The projection_paver callback receives (corner matrix, target ratio,
    seed) and returns a Partition of the corner in the identity frame.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    a = _as_entries(x)
    dim = a.shape[0]
    if frame is None:
        frame = MasaFrame.identity(dim)
    trace = ReductionTrace(eps=eps)
    t0 = time.perf_counter()

    centered = a - conditional_expectation(a, frame).entries
    base = op_norm(centered)
    if base < DEGENERATE_NORM or dim <= 2:
        part = Partition.one_block(frame) if base < DEGENERATE_NORM else Partition.singletons(frame)
        report = paving_defect(a, part, eps=eps, strategy="reduction", seed=seed)
        trace.add("short_circuit", report.ratio, eps)
        return part, trace, report

    y1, y2 = split_real_imag(centered)
    reassembly = np.abs(y1.entries + 1j * y2.entries - centered).max()
    trace.add("real_imag_reassembly", reassembly, 1e-14)

    parts = []
    for label, comp in (("real", y1.entries), ("imag", y2.entries)):
        nrm = op_norm(comp)
        if nrm < DEGENERATE_NORM:
            continue
        z = comp / nrm
        assignment = _pave_component(z, eps, projection_paver, frame, seed, trace)
        _, inverse = np.unique(assignment, return_inverse=True)
        part = Partition(inverse.astype(np.int64), int(inverse.max()) + 1, frame)
        rep = paving_defect(z, part, eps=eps, strategy=f"reduction/{label}", seed=seed)
        trace.add(f"component_ratio_{label}", rep.ratio, eps)
        parts.append(part)

    combined = parts[0]
    for other in parts[1:]:
        combined = refine(combined, other)
    report = paving_defect(a, combined, eps=eps, strategy="reduction", seed=seed)
    trace.add("combined_ratio", report.ratio,
              eps if len(parts) == 1 else 2 * eps)
    report = replace(report, elapsed_ms=(time.perf_counter() - t0) * 1e3)
    return combined, trace, report
