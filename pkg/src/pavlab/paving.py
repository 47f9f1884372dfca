"""Partitions of the index set and everything paving.

A partition of {0..dim-1} in a MASA frame realizes projections p_1..p_n
summing to 1; compressing x by it and comparing against the conditional
expectation gives the paving defect.  Alongside the exact (enumerative)
paving number this module provides heuristic searches: simulated
annealing, recursive sign splitting, spectral arcs of a random unitary,
and equal shuffled blocks (the free-paving model).
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from .finite_vn import MasaFrame, TracedMatrix, _as_entries, conditional_expectation, op_norm
from .seeds import rng_for, worker_count

EXHAUSTIVE_DIM_LIMIT = 12
DEGENERATE_NORM = 1e-12

STRATEGIES = ("exhaustive", "sign_split", "arc", "anneal", "roots_of_unity")


@dataclass(frozen=True)
class Partition:
    """Assignment of basis indices to blocks, in a fixed MASA frame.

    Blocks may be empty (search moves can empty one); reports carry the
    effective count.  The derived projections are 0/1 diagonals in the
    frame, conjugated by the frame basis.
    """

    assignment: np.ndarray
    n_blocks: int
    frame: MasaFrame

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64, copy=True)
        if a.ndim != 1 or a.shape[0] != self.frame.dim:
            raise ValueError("assignment length must equal frame dim")
        if self.n_blocks < 1:
            raise ValueError("need at least one block")
        if a.size and (a.min() < 0 or a.max() >= self.n_blocks):
            raise ValueError("assignment values out of range")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def dim(self) -> int:
        return self.frame.dim

    @property
    def effective_blocks(self) -> int:
        return int(np.unique(self.assignment).size)

    def block_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == i)

    def block_traces(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_blocks) / self.dim

    def projections(self) -> list[TracedMatrix]:
        out = []
        for i in range(self.n_blocks):
            d = (self.assignment == i).astype(np.complex128)
            out.append(self.frame.diagonal_element(d))
        return out

    @classmethod
    def one_block(cls, frame: MasaFrame) -> "Partition":
        return cls(np.zeros(frame.dim, dtype=np.int64), 1, frame)

    @classmethod
    def singletons(cls, frame: MasaFrame) -> "Partition":
        return cls(np.arange(frame.dim), frame.dim, frame)


@dataclass(frozen=True)
class PavingReport:
    """Measured outcome of compressing one element by one partition."""

    n_blocks: int
    effective_blocks: int
    defect: float
    ratio: float
    spectral_tail: float
    strategy: str
    seed: int
    elapsed_ms: float

    def to_json_dict(self) -> dict:
        # fixed key order for reproducible artifacts
        return {
            "n_blocks": self.n_blocks,
            "effective_blocks": self.effective_blocks,
            "defect": self.defect,
            "ratio": self.ratio,
            "spectral_tail": self.spectral_tail,
            "strategy": self.strategy,
            "seed": self.seed,
            "elapsed_ms": self.elapsed_ms,
        }


def _same_frame(p: Partition, q: Partition) -> bool:
    return p.frame is q.frame or np.array_equal(p.frame.basis, q.frame.basis)


def _block_mask(assignment: np.ndarray) -> np.ndarray:
    return assignment[:, None] == assignment[None, :]


def compress(x, part: Partition) -> TracedMatrix:
    """Sum of p_i x p_i: in frame coordinates, zero out cross-block entries."""
    a = _as_entries(x)
    if a.shape[0] != part.dim:
        raise ValueError("dimension mismatch between matrix and partition")
    y = part.frame.to_frame(a)
    return TracedMatrix(part.frame.from_frame(y * _block_mask(part.assignment)))


def spectral_tail_mass(y, eps: float) -> float:
    """Normalized trace of the spectral projection of |y| on (eps, inf)."""
    a = _as_entries(y)
    sv = np.linalg.svd(a, compute_uv=False)
    return float(np.count_nonzero(sv > eps) / a.shape[0])


def _defect_parts(x, part: Partition) -> tuple[float, float, np.ndarray]:
    """(defect, baseline ||x - E_A x||, defect matrix in frame coords)."""
    a = _as_entries(x)
    y = part.frame.to_frame(a)
    off = y - np.diag(np.diagonal(y))
    dm = off * _block_mask(part.assignment)
    return op_norm(dm), op_norm(off), dm


def paving_defect(x, part: Partition, eps: float | None = None,
                  strategy: str = "direct", seed: int = 0) -> PavingReport:
    """Defect ||compress(x) - E_A(x)|| and its ratio to ||x - E_A(x)||.

    When the baseline norm vanishes the ratio is defined as 0.  If eps is
    given, the spectral tail of the defect matrix is measured above
    eps * ||x - E_A(x)||; otherwise above the achieved defect (tail 0).
    """
    t0 = time.perf_counter()
    defect, base, dm = _defect_parts(x, part)
    ratio = 0.0 if base < DEGENERATE_NORM else defect / base
    threshold = defect if eps is None else eps * base
    tail = spectral_tail_mass(dm, threshold + 1e-15)
    return PavingReport(
        n_blocks=part.n_blocks,
        effective_blocks=part.effective_blocks,
        defect=float(defect),
        ratio=float(ratio),
        spectral_tail=tail,
        strategy=strategy,
        seed=seed,
        elapsed_ms=(time.perf_counter() - t0) * 1e3,
    )


# ---------------------------------------------------------------------------
# Dixmier averaging
# ---------------------------------------------------------------------------

def _check_masa_unitary(v: np.ndarray, frame: MasaFrame, tol: float = 1e-10) -> np.ndarray:
    """Return the frame-diagonal of v, refusing non-unitary or off-frame input."""
    d = frame.to_frame(v)
    diag = np.diagonal(d).copy()
    if np.abs(d - np.diag(diag)).max() > tol:
        raise ValueError("averaging unitary is not diagonal in the frame")
    if np.abs(np.abs(diag) - 1.0).max() > tol:
        raise ValueError("averaging element is not unitary")
    return diag


def dixmier_average(x, unitaries, frame: MasaFrame) -> TracedMatrix:
    """T_V(x) = n^(-1) sum_i v_i x v_i* over a tuple of MASA unitaries."""
    a = _as_entries(x)
    if not unitaries:
        raise ValueError("need at least one unitary")
    y = frame.to_frame(a)
    acc = np.zeros_like(y)
    for v in unitaries:
        dv = _check_masa_unitary(_as_entries(v), frame)
        acc += y * np.outer(dv, dv.conj())
    return TracedMatrix(frame.from_frame(acc / len(unitaries)))


def roots_of_unity_tuple(part: Partition) -> list[TracedMatrix]:
    """The tuple W = (w^(j-1))_{j=1..n} with w = sum_i lambda^(i-1) p_i.

    Averaging over W reproduces the compression by the partition exactly.
    """
    n = part.n_blocks
    lam = np.exp(2j * np.pi / n)
    w = lam ** part.assignment.astype(np.complex128)
    return [part.frame.diagonal_element(w ** j) for j in range(n)]


# ---------------------------------------------------------------------------
# Structured partitions from MASA unitaries
# ---------------------------------------------------------------------------

def sign_split(u, frame: MasaFrame) -> Partition:
    """Two-block partition from the +/-1 eigenprojections of a period-2 unitary."""
    d = _check_masa_unitary(_as_entries(u), frame)
    if np.abs(d * d - 1.0).max() > 1e-10:
        raise ValueError("sign_split needs a period-2 unitary (u^2 = 1)")
    assignment = (d.real < 0).astype(np.int64)
    return Partition(assignment, 2, frame)


def arc_partition(u, n: int, frame: MasaFrame) -> Partition:
    """Partition by spectral arcs [e^(2 pi i (k-1)/n), e^(2 pi i k/n)) of u.

    Angles live in [0, 2 pi); an eigenvalue with angle exactly 0 lands in
    the first arc.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    d = _check_masa_unitary(_as_entries(u), frame)
    ang = np.mod(np.angle(d), 2 * np.pi)
    k = np.minimum((ang * n / (2 * np.pi)).astype(np.int64), n - 1)
    return Partition(k, n, frame)


def refine(p: Partition, q: Partition) -> Partition:
    """Common refinement; labels are compacted in (p-block, q-block) order."""
    if p.dim != q.dim or not _same_frame(p, q):
        raise ValueError("partitions must share dimension and frame")
    pairs = p.assignment * q.n_blocks + q.assignment
    _, inverse = np.unique(pairs, return_inverse=True)
    return Partition(inverse.astype(np.int64), int(inverse.max()) + 1, p.frame)


# ---------------------------------------------------------------------------
# Exact paving number by exhaustive enumeration
# ---------------------------------------------------------------------------

def _rgs_with_blocks(dim: int, k: int):
    """Restricted-growth strings on dim symbols with exactly k blocks."""
    a = [0] * dim

    def rec(i: int, used: int):
        if dim - i < k - used:
            return
        if i == dim:
            if used == k:
                yield tuple(a)
            return
        for v in range(min(used + 1, k)):
            a[i] = v
            yield from rec(i + 1, max(used, v + 1))

    yield from rec(1, 1)


class _Objective:
    """Defect of a masked off-diagonal matrix, evaluated per assignment.

    The masked matrix is block diagonal up to permutation, so its norm is
    the max over per-block norms; that keeps large-dimension sweeps cheap.
    """

    def __init__(self, x, frame: MasaFrame):
        y = frame.to_frame(_as_entries(x))
        self.off = y - np.diag(np.diagonal(y))
        self.base = op_norm(self.off)
        self.frame = frame
        self.dim = y.shape[0]

    def defect(self, assignment: np.ndarray) -> float:
        worst = 0.0
        for label in np.unique(assignment):
            idx = np.flatnonzero(assignment == label)
            if idx.size < 2:
                continue
            worst = max(worst, op_norm(self.off[np.ix_(idx, idx)]))
        return worst

    def ratio(self, assignment: np.ndarray) -> float:
        if self.base < DEGENERATE_NORM:
            return 0.0
        return self.defect(assignment) / self.base


def paving_number_exact(x, eps: float, frame: MasaFrame, max_n: int | None = None):
    """Smallest block count achieving ratio <= eps, by full enumeration.

    Only available up to dim 12 (Bell-number explosion).  Returns None
    when no partition within max_n blocks achieves the target.
    """
    a = _as_entries(x)
    dim = a.shape[0]
    if dim > EXHAUSTIVE_DIM_LIMIT:
        raise ValueError(f"exhaustive mode capped at dim {EXHAUSTIVE_DIM_LIMIT}")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if max_n is None:
        max_n = dim
    obj = _Objective(a, frame)
    if obj.base < DEGENERATE_NORM:
        return 1
    for n in range(1, min(max_n, dim) + 1):
        for rgs in _rgs_with_blocks(dim, n):
            if obj.ratio(np.array(rgs, dtype=np.int64)) <= eps:
                return n
    return None


# ---------------------------------------------------------------------------
# Heuristic search
# ---------------------------------------------------------------------------

def _random_assignment(dim: int, n: int, rng) -> np.ndarray:
    """Balanced-as-possible random assignment with every block nonempty."""
    base = np.repeat(np.arange(n), dim // n)
    extra = rng.choice(n, size=dim - base.size, replace=False) if dim - base.size else np.empty(0, int)
    a = np.concatenate([base, extra]).astype(np.int64)
    rng.shuffle(a)
    return a


def _anneal_once(obj: _Objective, n: int, eps: float, budget: int, rng) -> tuple[float, np.ndarray]:
    dim = obj.dim
    cur = _random_assignment(dim, n, rng)
    cur_d = obj.defect(cur)
    best, best_d = cur.copy(), cur_d
    temp = max(cur_d, 1e-6)
    target = eps * obj.base
    spent = 0
    while spent < budget and best_d > target:
        spent += 1
        trial = cur.copy()
        if n >= 2 and rng.random() < 0.5:
            i, j = rng.integers(0, dim, size=2)
            trial[i], trial[j] = trial[j], trial[i]
        else:
            trial[rng.integers(0, dim)] = rng.integers(0, n)
        d = obj.defect(trial)
        delta = d - cur_d
        if delta <= 0 or rng.random() < np.exp(-delta / max(temp, 1e-12)):
            cur, cur_d = trial, d
            if d < best_d:
                best, best_d = trial.copy(), d
        temp *= 0.995
    # greedy polish: first-improvement single-index passes
    improved = True
    while improved and spent < budget and best_d > target:
        improved = False
        for i in range(dim):
            orig = best[i]
            for v in range(n):
                if v == orig:
                    continue
                spent += 1
                best[i] = v
                d = obj.defect(best)
                if d < best_d - 1e-15:
                    best_d = d
                    improved = True
                    break
                best[i] = orig
                if spent >= budget or best_d <= target:
                    break
            if spent >= budget or best_d <= target:
                break
    return best_d, best


def _search_anneal(obj, eps, budget, seed, n, restarts=4):
    results = []
    for w in range(restarts):
        rng = rng_for(seed, 0x5EA, n, w)
        results.append((*_anneal_once(obj, n, eps, max(1, budget // restarts), rng), w))
        if results[-1][0] <= eps * obj.base:
            break
    results.sort(key=lambda t: (t[0], t[2]))
    return results[0][0], results[0][1]


def _search_roots(obj, eps, budget, seed, n, tries=8):
    best_d, best_a = np.inf, None
    for w in range(max(1, min(tries, budget))):
        rng = rng_for(seed, 0x700, n, w)
        order = rng.permutation(obj.dim)
        a = np.empty(obj.dim, dtype=np.int64)
        for i, chunk in enumerate(np.array_split(order, n)):
            a[chunk] = i
        d = obj.defect(a)
        if d < best_d:
            best_d, best_a = d, a
    return best_d, best_a


def _search_arc(obj, eps, budget, seed, n, tries=8):
    best_d, best_a = np.inf, None
    for w in range(max(1, min(tries, budget))):
        rng = rng_for(seed, 0xA5C, n, w)
        ang = rng.uniform(0.0, 2 * np.pi, size=obj.dim)
        a = np.minimum((ang * n / (2 * np.pi)).astype(np.int64), n - 1)
        d = obj.defect(a)
        if d < best_d:
            best_d, best_a = d, a
    return best_d, best_a


def _search_sign_split(obj, eps, budget, seed):
    """Recursive halving by balanced sign vectors tuned by local search."""
    dim = obj.dim
    assignment = np.zeros(dim, dtype=np.int64)
    n = 1
    best_d = obj.defect(assignment)
    spent = 0
    level = 0
    while n < dim and best_d > eps * obj.base and spent < budget:
        level += 1
        rng = rng_for(seed, 0x516, level)
        signs = np.empty(dim, dtype=np.int64)
        for b in range(n):
            idx = np.flatnonzero(assignment == b)
            half = idx.size // 2
            s = np.array([0] * half + [1] * (idx.size - half), dtype=np.int64)
            rng.shuffle(s)
            signs[idx] = s
        trial = assignment * 2 + signs
        d = obj.defect(trial)
        spent += 1
        # pairwise +/- swaps within blocks, first-improvement
        stuck = 0
        while spent < budget and d > eps * obj.base and stuck < 2 * dim:
            b = int(rng.integers(0, n))
            idx = np.flatnonzero(assignment == b)
            plus = idx[signs[idx] == 0]
            minus = idx[signs[idx] == 1]
            if plus.size == 0 or minus.size == 0:
                stuck += 1
                continue
            i = int(plus[rng.integers(0, plus.size)])
            j = int(minus[rng.integers(0, minus.size)])
            signs[i], signs[j] = signs[j], signs[i]
            cand = assignment * 2 + signs
            cd = obj.defect(cand)
            spent += 1
            if cd < d - 1e-15:
                d, trial = cd, cand
                stuck = 0
            else:
                signs[i], signs[j] = signs[j], signs[i]
                stuck += 1
        assignment = trial
        n *= 2
        best_d = d
    return best_d, assignment, n


def pave_search(x, eps: float, strategy: str, budget: int, seed: int,
                frame: MasaFrame | None = None,
                max_n: int | None = None) -> tuple[Partition, PavingReport]:
    """Search for a small partition paving x at ratio <= eps.

    Deterministic given (strategy, budget, seed).  Except for sign_split
    (which doubles blocks), strategies sweep the block count upward and
    return at the first count achieving the target; the best partition
    found is returned even when the target is missed.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if budget <= 0:
        raise ValueError("budget must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    a = _as_entries(x)
    if frame is None:
        frame = MasaFrame.identity(a.shape[0])
    t0 = time.perf_counter()
    obj = _Objective(a, frame)
    dim = obj.dim
    if max_n is None:
        max_n = dim

    def finish(part: Partition) -> tuple[Partition, PavingReport]:
        rep = paving_defect(a, part, eps=eps, strategy=strategy, seed=seed)
        return part, replace(rep, elapsed_ms=(time.perf_counter() - t0) * 1e3)

    if obj.base < DEGENERATE_NORM:
        return finish(Partition.one_block(frame))

    if strategy == "exhaustive":
        if dim > EXHAUSTIVE_DIM_LIMIT:
            raise ValueError(f"exhaustive mode capped at dim {EXHAUSTIVE_DIM_LIMIT}")
        for n in range(1, min(max_n, dim) + 1):
            for rgs in _rgs_with_blocks(dim, n):
                cand = np.array(rgs, dtype=np.int64)
                if obj.ratio(cand) <= eps:
                    return finish(Partition(cand, n, frame))
        return finish(Partition.singletons(frame))

    if strategy == "sign_split":
        d, assignment, n = _search_sign_split(obj, eps, budget, seed)
        _, inverse = np.unique(assignment, return_inverse=True)
        return finish(Partition(inverse.astype(np.int64), int(inverse.max()) + 1, frame))

    step = {"anneal": _search_anneal, "roots_of_unity": _search_roots, "arc": _search_arc}[strategy]
    best = (np.inf, Partition.one_block(frame).assignment, 1)
    for n in range(1, min(max_n, dim) + 1):
        if n == 1:
            d, cand = obj.defect(best[1]), best[1]
        elif n == dim:
            d, cand = 0.0, np.arange(dim)
        else:
            d, cand = step(obj, eps, budget, seed, n)
        if d < best[0]:
            best = (d, cand, n)
        if d <= eps * obj.base:
            return finish(Partition(np.asarray(cand, dtype=np.int64), n, frame))
    return finish(Partition(np.asarray(best[1], dtype=np.int64), best[2], frame))
