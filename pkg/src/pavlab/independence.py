"""Trace-moment independence diagnostics and constructive partition builders.

Two families of letters drive everything here: centered elements of the
block algebra of a partition (projections minus their traces, and powers
of the block roots-of-unity unitary), and centered test elements.  A
family is k-independent when every alternating word of length up to k has
zero trace; the builders below search for partitions making the measured
residuals small, and the certificate checker turns the measured residual
into the deterministic inequality suite it implies.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .finite_vn import MasaFrame, TracedMatrix, _as_entries, conditional_expectation, l2_norm
from .paving import Partition
from .seeds import rng_for

MAX_WORD_LEVEL = 4


@dataclass(frozen=True)
class WordSpec:
    """An alternating word a_1 x_1 a_2 x_2 ... of block letters and test elements.

    Indices point into the two letter families; the compact label form
    ("a1.x0.a3.x1") reproduces a failing word in logs.
    """

    a_indices: tuple
    x_indices: tuple

    def __post_init__(self):
        if len(self.a_indices) != len(self.x_indices):
            raise ValueError("word letters must alternate a, x pairwise")
        if not 1 <= len(self.a_indices) <= MAX_WORD_LEVEL:
            raise ValueError(f"word level must lie in 1..{MAX_WORD_LEVEL}")

    @property
    def level(self) -> int:
        return len(self.a_indices)

    def label(self) -> str:
        return ".".join(f"a{a}.x{x}" for a, x in zip(self.a_indices, self.x_indices))


@dataclass(frozen=True)
class IndependenceReport:
    max_k: int
    residual_per_level: dict
    word_count: int
    achieved_alpha: float
    coverage_per_level: dict = field(default_factory=dict)
    worst_word: str = ""

    def to_json_dict(self) -> dict:
        return {
            "max_k": self.max_k,
            "residual_per_level": {str(k): v for k, v in sorted(self.residual_per_level.items())},
            "word_count": self.word_count,
            "achieved_alpha": self.achieved_alpha,
            "coverage_per_level": {str(k): v for k, v in sorted(self.coverage_per_level.items())},
            "worst_word": self.worst_word,
        }


def _center_and_normalize(X, frame: MasaFrame) -> list[np.ndarray]:
    """E_A-center each test element and scale to unit L2 norm."""
    out = []
    for x in X:
        a = _as_entries(x)
        a = a - conditional_expectation(a, frame).entries
        nrm = l2_norm(a)
        if nrm > 1e-14:
            out.append(a / nrm)
    return out


def _block_letters(part: Partition) -> tuple[list[str], list[np.ndarray]]:
    """Centered spanning letters of the block algebra, as frame diagonals.

    Powers of the roots-of-unity unitary w (centered when block traces are
    unequal) followed by the centered projections q_i - tau(q_i).
    """
    n = part.n_blocks
    labels, diags = [], []
    lam = np.exp(2j * np.pi / n) if n > 1 else 1.0
    w = lam ** part.assignment.astype(np.complex128)
    traces = part.block_traces()
    for p in range(1, n):
        d = w ** p
        d = d - d.mean()
        if np.abs(d).max() > 1e-14:
            labels.append(f"w^{p}")
            diags.append(d)
    for i in range(n):
        d = (part.assignment == i).astype(np.complex128) - traces[i]
        if np.abs(d).max() > 1e-14:
            labels.append(f"q{i}-t")
            diags.append(d)
    return labels, diags


def _letters_from(blocks, frame: MasaFrame):
    if isinstance(blocks, Partition):
        return _block_letters(blocks)
    labels, diags = [], []
    for i, b in enumerate(blocks):
        d = np.diagonal(frame.to_frame(_as_entries(b))).copy()
        d = d - d.mean()
        labels.append(f"a{i}")
        diags.append(d)
    return labels, diags


def _word_trace(a_diags, xs, dim) -> complex:
    """tau(D1 X1 D2 X2 ...): alternate diagonal scalings with matmuls."""
    m = a_diags[0][:, None] * xs[0]
    for d, x in zip(a_diags[1:], xs[1:]):
        m = m @ (d[:, None] * x)
    return complex(np.trace(m) / dim)


def k_independence_residual(blocks, X, k: int = 2, sampling_budget: int = 100_000,
                            seed: int = 0, frame: MasaFrame | None = None) -> IndependenceReport:
    """Max |tau(a_1 x_1 ... a_j x_j)| per level j <= k, scaled by the letter norms.

    Block letters come from the partition (or are given directly); test
    elements are centered and L2-normalized on entry.  Levels whose word
    count exceeds the budget are sampled uniformly, with coverage reported.
    """
    if not X:
        raise ValueError("need at least one test element")
    if isinstance(blocks, Partition):
        frame = blocks.frame
    elif frame is None:
        raise ValueError("frame required when passing raw block elements")
    if k > MAX_WORD_LEVEL:
        raise ValueError(f"word level capped at {MAX_WORD_LEVEL}")
    labels, diags = _letters_from(blocks, frame)
    xs = [frame.to_frame(x) for x in _center_and_normalize(X, frame)]
    dim = frame.dim
    norms = [float(np.linalg.norm(d) / np.sqrt(dim)) for d in diags]

    residuals, coverage = {}, {}
    worst = (0.0, "")
    total_words = 0
    if not diags or not xs:
        # nothing to test against: trivially independent at every level
        for j in range(1, k + 1):
            residuals[j] = 0.0
            coverage[j] = 1.0
        return IndependenceReport(k, residuals, 0, 0.0, coverage, "")

    n_a, n_x = len(diags), len(xs)
    rng = rng_for(seed, 0x1DE)
    for j in range(1, k + 1):
        count = (n_a * n_x) ** j
        level_best = 0.0
        if count <= sampling_budget:
            choices = itertools.product(range(n_a * n_x), repeat=j)
            coverage[j] = 1.0
            n_words = count
        else:
            picks = rng.integers(0, n_a * n_x, size=(sampling_budget, j))
            choices = (tuple(row) for row in picks)
            coverage[j] = sampling_budget / count
            n_words = sampling_budget
        for combo in choices:
            a_idx = [c // n_x for c in combo]
            x_idx = [c % n_x for c in combo]
            val = _word_trace([diags[a] for a in a_idx], [xs[x] for x in x_idx], dim)
            denom = float(np.prod([norms[a] for a in a_idx]))
            if denom < 1e-30:
                continue
            r = abs(val) / denom
            if r > level_best:
                level_best = r
            if r > worst[0]:
                worst = (r, WordSpec(tuple(a_idx), tuple(x_idx)).label())
        residuals[j] = level_best
        total_words += n_words
    return IndependenceReport(
        max_k=k,
        residual_per_level=residuals,
        word_count=total_words,
        achieved_alpha=max(residuals.values()),
        coverage_per_level=coverage,
        worst_word=worst[1],
    )


# ---------------------------------------------------------------------------
# Mixing sign-unitary search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixingSignResult:
    unitary: TracedMatrix
    signs: np.ndarray
    objective: float
    evaluations: int


class _SignObjective:
    """max of |tau(u xi1* u* xi2)| pair terms and |tau(u eta)|/||eta||_1 terms.

    Quadratic/linear forms in the sign vector, with O(dim) swap updates.
    """

    def __init__(self, xs, etas, dim):
        self.dim = dim
        self.pair_mats = []
        for x1 in xs:
            x1h = x1.conj().T
            for x2 in xs:
                self.pair_mats.append(x1h * x2.T)  # M[j,k] = (x1*)[j,k] x2[k,j]
        self.eta_diags = []
        for eta, nrm1 in etas:
            if nrm1 > 1e-14:
                self.eta_diags.append(np.diagonal(eta) / nrm1)

    def start(self, s):
        self.s = s.astype(np.float64)
        self.quads = []
        self.lefts, self.rights = [], []
        for m in self.pair_mats:
            g = m @ self.s
            h = m.T @ self.s
            self.rights.append(g)
            self.lefts.append(h)
            self.quads.append(complex(self.s @ g))
        self.lins = [complex(self.s @ d) for d in self.eta_diags]
        return self.value()

    def value(self) -> float:
        vals = [abs(q) / self.dim for q in self.quads]
        vals += [abs(l) / self.dim for l in self.lins]
        return max(vals) if vals else 0.0

    def try_swap(self, i: int, j: int) -> float:
        si, sj = self.s[i], self.s[j]
        quads = []
        for m, g, h, q in zip(self.pair_mats, self.rights, self.lefts, self.quads):
            dq = -2 * si * (g[i] + h[i]) - 2 * sj * (g[j] + h[j])
            dq += 4 * (m[i, i] + m[j, j] + si * sj * (m[i, j] + m[j, i]))
            quads.append(q + dq)
        lins = [l - 2 * si * d[i] - 2 * sj * d[j] for l, d in zip(self.lins, self.eta_diags)]
        vals = [abs(q) / self.dim for q in quads] + [abs(l) / self.dim for l in lins]
        self._pending = (i, j, quads, lins)
        return max(vals) if vals else 0.0

    def commit(self):
        i, j, quads, lins = self._pending
        si, sj = self.s[i], self.s[j]
        for m, g, h in zip(self.pair_mats, self.rights, self.lefts):
            g -= 2 * si * m[:, i] + 2 * sj * m[:, j]
            h -= 2 * si * m[i, :] + 2 * sj * m[j, :]
        self.quads = quads
        self.lins = lins
        self.s[i] = -si
        self.s[j] = -sj


def _balanced_signs(part: Partition, rng) -> np.ndarray:
    s = np.empty(part.dim, dtype=np.float64)
    for b in range(part.n_blocks):
        idx = part.block_indices(b)
        if idx.size == 0:
            continue
        half = idx.size // 2
        vals = np.array([1.0] * half + [-1.0] * half)
        rng.shuffle(vals)
        s[idx] = vals
    return s


def find_mixing_sign_unitary(X, Y, frame: MasaFrame, blocks: Partition,
                             delta: float, budget: int, seed: int,
                             restarts: int = 20) -> MixingSignResult:
    """Search balanced-per-block sign vectors for a mixing period-2 unitary.

    Minimizes max(|tau(u xi1* u* xi2)| / (||xi1||_2 ||xi2||_2),
    |tau(u eta)| / ||eta||_1) by randomized pair swaps within blocks; the
    best vector over all restarts is returned with its achieved value.
    Block sizes must be even so candidates are balanced (constant on no
    block); stops early when the target delta is reached.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    for b in range(blocks.n_blocks):
        size = blocks.block_indices(b).size
        if size % 2 != 0:
            raise ValueError(f"block {b} has odd size {size}; balanced signs need even blocks")
    xs = [frame.to_frame(x) for x in _center_and_normalize(X, frame)]
    etas = []
    for y in Y:
        a = frame.to_frame(_as_entries(y))
        sv = np.linalg.svd(a, compute_uv=False)
        etas.append((a, float(sv.sum() / frame.dim)))
    obj = _SignObjective(xs, etas, frame.dim)

    block_idx = [blocks.block_indices(b) for b in range(blocks.n_blocks) if blocks.block_indices(b).size > 0]
    best: tuple[float, np.ndarray, int] = (np.inf, np.empty(0), -1)
    spent = 0
    per_restart = max(1, budget // max(1, restarts))
    for w in range(restarts):
        rng = rng_for(seed, 0x516, w)
        s = _balanced_signs(blocks, rng)
        cur = obj.start(s)
        local = per_restart
        while local > 0 and cur > delta:
            idx = block_idx[int(rng.integers(0, len(block_idx)))]
            sub = obj.s[idx]
            plus = idx[sub > 0]
            minus = idx[sub < 0]
            if plus.size == 0 or minus.size == 0:
                local -= 1
                continue
            i = int(plus[rng.integers(0, plus.size)])
            j = int(minus[rng.integers(0, minus.size)])
            cand = obj.try_swap(i, j)
            spent += 1
            local -= 1
            if cand < cur - 1e-15:
                obj.commit()
                cur = cand
        if cur < best[0]:
            best = (cur, obj.s.copy(), w)
        if best[0] <= delta:
            break
    signs = best[1]
    u = frame.diagonal_element(signs.astype(np.complex128))
    return MixingSignResult(unitary=u, signs=signs, objective=float(best[0]), evaluations=spent)


# ---------------------------------------------------------------------------
# Recursive doubling and its certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionCheck:
    bound: float
    measured: float
    ok: bool

    @property
    def margin(self) -> float:
        return self.bound - self.measured


@dataclass(frozen=True)
class Cor37Report:
    n_levels: int
    measured_alpha: float
    conditions: dict

    @property
    def all_hold(self) -> bool:
        return all(c.ok for c in self.conditions.values())

    def to_json_dict(self) -> dict:
        return {
            "n_levels": self.n_levels,
            "measured_alpha": self.measured_alpha,
            "conditions": {
                k: {"bound": c.bound, "measured": c.measured, "ok": c.ok}
                for k, c in sorted(self.conditions.items())
            },
        }


def _measured_alpha(part: Partition, xs: list[np.ndarray], etas: list[np.ndarray]):
    """Exact sup over the block algebra of the defining residuals.

    The powers w^p of the roots-of-unity unitary are an orthonormal L2
    basis of the traceless block algebra when block traces are equal, so
    the level-2 sup is the largest singular value of the form matrix
    [tau(w^p xi1 w^q xi2)]; level-1 residuals are measured against both
    letter families with operator-norm scaling.
    """
    n = part.n_blocks
    dim = part.dim
    lam = np.exp(2j * np.pi / n)
    w = lam ** part.assignment.astype(np.complex128)
    vand = np.array([w ** p for p in range(1, n)])  # (n-1, dim)
    alpha_a = 0.0
    for x1 in xs:
        for x2 in xs:
            m = x1 * x2.T
            b = vand @ m @ vand.T / dim
            alpha_a = max(alpha_a, float(np.linalg.svd(b, compute_uv=False)[0]) if b.size else 0.0)
    alpha_b = 0.0
    t = 1.0 / n
    for eta in etas:
        d = np.diagonal(eta)
        vals = np.abs(vand @ d) / dim  # |tau(eta w^p)|, ||w^p|| = 1
        if vals.size:
            alpha_b = max(alpha_b, float(vals.max()))
        for i in range(n):
            sel = part.assignment == i
            num = abs(d[sel].sum() / dim - t * d.sum() / dim)
            alpha_b = max(alpha_b, num / (1.0 - t))  # ||q_i - t|| = 1 - t
    return alpha_a, alpha_b


def check_cor37(part: Partition, X, Y=()) -> Cor37Report:
    """Measure alpha and verify the whole consequence suite it implies.

    Conditions (with t = 2^-n the common block trace, xi unit L2):
      a2: | ||q_i xi q_j||_2^2 - t^2 | <= 3 t alpha
      b2: | tau(eta q_i) - tau(eta) t | <= alpha
      c2: ||q_i xi q_i||_2 <= (t^(1/2) + 2 alpha^(1/2)) sqrt(t)
          and ||sum_i q_i xi q_i||_2^2 <= t + 3 alpha
      d2: ||q_i xi q_i||_1 <= (t^(1/2) + 2 alpha^(1/2)) t
    """
    traces = part.block_traces()
    if np.abs(traces - traces[0]).max() > 1e-12:
        raise ValueError("certificate requires equal block traces")
    frame = part.frame
    dim = part.dim
    n = part.n_blocks
    t = 1.0 / n
    xs = [frame.to_frame(x) for x in _center_and_normalize(X, frame)]
    xs_full = []
    for x in xs:
        xs_full.append(x)
        xs_full.append(x.conj().T)
    etas = [frame.to_frame(_as_entries(y)) for y in Y]
    etas_full = list(etas)
    for a in xs_full:
        for b in xs_full:
            etas_full.append(a @ b.conj().T)

    alpha_a, alpha_b = _measured_alpha(part, xs_full, etas_full)
    alpha = max(alpha_a, alpha_b)
    slack = 1e-9

    worst_a2 = worst_c2a = worst_c2b = worst_d2 = 0.0
    masks = [part.assignment == i for i in range(n)]
    for x in xs:
        comp_sq = 0.0
        for i, mi in enumerate(masks):
            for j, mj in enumerate(masks):
                blk = x[np.ix_(mi, mj)]
                nsq = float(np.linalg.norm(blk) ** 2 / dim)
                worst_a2 = max(worst_a2, abs(nsq - t * t))
                if i == j:
                    comp_sq += nsq
                    worst_c2a = max(worst_c2a, np.sqrt(nsq))
                    sv = np.linalg.svd(blk, compute_uv=False)
                    worst_d2 = max(worst_d2, float(sv.sum() / dim))
        worst_c2b = max(worst_c2b, comp_sq)
    worst_b2 = 0.0
    for eta in etas_full:
        d = np.diagonal(eta)
        tau_eta = d.sum() / dim
        for mi in masks:
            worst_b2 = max(worst_b2, abs(d[mi].sum() / dim - tau_eta * t))

    level = int(round(np.log2(n))) if n > 1 else 0
    conditions = {
        "a2_l2_blocks": ConditionCheck(3 * t * alpha, worst_a2, worst_a2 <= 3 * t * alpha + slack),
        "b2_trace_products": ConditionCheck(alpha, worst_b2, worst_b2 <= alpha + slack),
        "c2_corner_l2": ConditionCheck(
            (np.sqrt(t) + 2 * np.sqrt(alpha)) * np.sqrt(t),
            worst_c2a,
            worst_c2a <= (np.sqrt(t) + 2 * np.sqrt(alpha)) * np.sqrt(t) + slack,
        ),
        "c2_compression_l2sq": ConditionCheck(t + 3 * alpha, worst_c2b, worst_c2b <= t + 3 * alpha + slack),
        "d2_corner_l1": ConditionCheck(
            (np.sqrt(t) + 2 * np.sqrt(alpha)) * t,
            worst_d2,
            worst_d2 <= (np.sqrt(t) + 2 * np.sqrt(alpha)) * t + slack,
        ),
    }
    return Cor37Report(n_levels=level, measured_alpha=float(alpha), conditions=conditions)


def build_independent_partition(X, Y, n: int, alpha_target: float, frame: MasaFrame,
                                budget: int, seed: int) -> tuple[Partition, IndependenceReport]:
    """n rounds of halving by mixing sign unitaries: 2^n equal-trace blocks.

    Each round searches for a balanced sign vector within the current
    blocks and splits every block by it, so the level-(k+1) partition
    refines the level-k one.  The report certifies the defining residuals
    with the achieved alpha (reported even when alpha_target is missed).
    """
    dim = frame.dim
    if n < 0:
        raise ValueError("n must be nonnegative")
    if dim % (2 ** n) != 0:
        raise ValueError(f"dim {dim} not divisible by 2^{n}")
    part = Partition.one_block(frame)
    xs_mats = _center_and_normalize(X, frame)
    etas = list(Y)
    for x in xs_mats:
        etas.append(TracedMatrix(frame.from_frame(frame.to_frame(x) @ frame.to_frame(x).conj().T)))
    evaluations = 0
    for level in range(n):
        res = find_mixing_sign_unitary(
            xs_mats, etas, frame, part,
            delta=alpha_target, budget=max(1, budget // max(1, n)),
            seed=int(rng_for(seed, 0xB1D, level).integers(0, 2 ** 63 - 1)),
        )
        evaluations += res.evaluations
        assignment = part.assignment * 2 + (res.signs < 0).astype(np.int64)
        part = Partition(assignment, 2 ** (level + 1), frame)
    if n == 0:
        report = IndependenceReport(2, {1: 0.0, 2: 0.0}, 0, 0.0, {1: 1.0, 2: 1.0}, "")
        return part, report
    xs_frame = [frame.to_frame(m) for m in xs_mats]
    xs_full = [y for x in xs_frame for y in (x, x.conj().T)]
    etas_frame = [frame.to_frame(_as_entries(y)) for y in etas]
    for a in xs_full:
        for b in xs_full:
            etas_frame.append(a @ b.conj().T)
    alpha_a, alpha_b = _measured_alpha(part, xs_full, etas_frame)
    report = IndependenceReport(
        max_k=2,
        residual_per_level={1: float(alpha_b), 2: float(alpha_a)},
        word_count=evaluations,
        achieved_alpha=float(max(alpha_a, alpha_b)),
        coverage_per_level={1: 1.0, 2: 1.0},
        worst_word="",
    )
    return part, report


# ---------------------------------------------------------------------------
# Incremental patching of a Haar-like diagonal unitary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchReport:
    power_residual: float      # eta: max |tau(v^k)|, 1 <= |k| <= n
    word_residual: float       # delta': max |tau(word)| over sampled words
    words_evaluated: int
    coverage: float
    chunk_size: int

    def to_json_dict(self) -> dict:
        return {
            "power_residual": self.power_residual,
            "word_residual": self.word_residual,
            "words_evaluated": self.words_evaluated,
            "coverage": self.coverage,
            "chunk_size": self.chunk_size,
        }


def _scrambled_cycle(dim: int, rng) -> np.ndarray:
    return np.exp(2j * np.pi * rng.permutation(dim) / dim)


def _sample_words(n_x: int, n: int, budget: int, rng):
    """Word index tuples per level k = 1, 2, 3: (power, element) pairs."""
    words = {1: [], 2: [], 3: []}
    powers = [p for p in range(-n, n + 1) if p != 0]
    for k in (1, 2, 3):
        total = (len(powers) * n_x) ** k
        quota = max(1, budget // 3)
        if total <= quota:
            combos = itertools.product(range(len(powers) * n_x), repeat=k)
            words[k] = [tuple(c) for c in combos]
        else:
            picks = rng.integers(0, len(powers) * n_x, size=(quota, k))
            words[k] = [tuple(row) for row in picks]
    return words, powers


def incremental_patch_haar(X, n: int, delta: float, order_L: int, budget: int,
                           seed: int) -> tuple[TracedMatrix, PatchReport]:
    """Build a diagonal unitary with small power traces and word traces.

    Entries are order_L-th roots of unity assigned chunk by chunk; each
    chunk choice minimizes the running objective (power traces plus
    sampled level-1/2 word traces) over candidate phase chunks, and the
    level-3 words enter the final report.  With no test elements the
    result is a scrambled full cycle of dim-th roots of unity, whose
    nonzero power traces vanish identically.
    """
    frame_dim = None
    xs = []
    rng = rng_for(seed, 0x9A7)
    if X:
        dims = {(_as_entries(x)).shape[0] for x in X}
        if len(dims) != 1:
            raise ValueError("test elements must share a dimension")
        frame_dim = dims.pop()
        frame = MasaFrame.identity(frame_dim)
        xs = _center_and_normalize(X, frame)
    if not xs:
        dim = frame_dim if frame_dim else max(order_L // 8, 2)
        v = _scrambled_cycle(dim, rng)
        eta = max(abs(np.sum(v ** k)) / dim for k in range(1, dim)) if dim > 1 else 0.0
        report = PatchReport(float(eta), 0.0, 0, 1.0, dim)
        return TracedMatrix(np.diag(v)), report

    dim = frame_dim
    if order_L < dim or order_L % dim != 0:
        raise ValueError("order_L must be a multiple of dim")
    if n < 1:
        raise ValueError("n must be >= 1")
    chunk = max(1, dim // 32)
    roots = np.exp(2j * np.pi * np.arange(order_L) / order_L)
    words, powers = _sample_words(len(xs), n, budget, rng)
    n_x = len(xs)

    # pair matrices for level-2 words: M[j,k] = x1[j,k] x2[k,j]
    pair_mats = {}
    for x1 in range(n_x):
        for x2 in range(n_x):
            pair_mats[(x1, x2)] = xs[x1] * xs[x2].T

    v = np.zeros(dim, dtype=np.complex128)
    power_sums = {k: 0.0 + 0.0j for k in range(1, n + 1)}
    # running level-2 word sums
    l2_words = []
    for w in words[2]:
        p1, x1 = powers[w[0] // n_x], w[0] % n_x
        p2, x2 = powers[w[1] // n_x], w[1] % n_x
        l2_words.append({"p": (p1, p2), "m": pair_mats[(x1, x2)], "sum": 0.0 + 0.0j})

    starts = list(range(0, dim, chunk))
    for s0 in starts:
        idx = np.arange(s0, min(s0 + chunk, dim))
        csize = idx.size
        n_cands = 64
        if order_L ** csize <= n_cands:
            cands = [np.array(c) for c in itertools.product(roots, repeat=csize)]
        else:
            cands = [roots[rng.integers(0, order_L, size=csize)] for _ in range(n_cands)]
        # per-word chunk coupling terms, fixed during this chunk
        pre = []
        for wd in l2_words:
            p1, p2 = wd["p"]
            m = wd["m"]
            d1 = v ** p1 if p1 > 0 else np.conj(v) ** (-p1)
            d2 = v ** p2 if p2 > 0 else np.conj(v) ** (-p2)
            r1 = m[idx, :] @ d2          # delta1 . r1
            r2 = d1 @ m[:, idx]          # r2 . delta2
            mcc = m[np.ix_(idx, idx)]
            pre.append((r1, r2, mcc))
        best_val, best_cand, best_state = np.inf, None, None
        for cand in cands:
            terms = []
            for k in range(1, n + 1):
                pk = power_sums[k] + np.sum(cand ** k)
                terms.append(abs(pk) / dim)
            sums = []
            for wd, (r1, r2, mcc) in zip(l2_words, pre):
                p1, p2 = wd["p"]
                d1c = cand ** p1 if p1 > 0 else np.conj(cand) ** (-p1)
                d2c = cand ** p2 if p2 > 0 else np.conj(cand) ** (-p2)
                snew = wd["sum"] + d1c @ r1 + r2 @ d2c + d1c @ mcc @ d2c
                sums.append(snew)
                terms.append(abs(snew) / dim)
            val = max(terms)
            if val < best_val - 1e-15:
                best_val, best_cand, best_state = val, cand, sums
        v[idx] = best_cand
        for k in range(1, n + 1):
            power_sums[k] += np.sum(best_cand ** k)
        for wd, snew in zip(l2_words, best_state):
            wd["sum"] = snew

    # final verification: powers, and all sampled words including level 3
    eta = max(abs(np.sum(v ** k)) / dim for k in range(1, n + 1))
    delta_prime = 0.0
    evaluated = 0
    diag_cache = {}

    def vpow(p):
        if p not in diag_cache:
            diag_cache[p] = v ** p if p > 0 else np.conj(v) ** (-p)
        return diag_cache[p]

    for k in (1, 2, 3):
        for wtuple in words[k]:
            ps = [powers[c // n_x] for c in wtuple]
            xi = [xs[c % n_x] for c in wtuple]
            m = vpow(ps[0])[:, None] * xi[0]
            for p, x in zip(ps[1:], xi[1:]):
                m = m @ (vpow(p)[:, None] * x)
            delta_prime = max(delta_prime, abs(np.trace(m)) / dim)
            evaluated += 1
    total_possible = sum((len(powers) * n_x) ** k for k in (1, 2, 3))
    report = PatchReport(
        power_residual=float(eta),
        word_residual=float(delta_prime),
        words_evaluated=evaluated,
        coverage=evaluated / total_possible,
        chunk_size=chunk,
    )
    return TracedMatrix(np.diag(v)), report
