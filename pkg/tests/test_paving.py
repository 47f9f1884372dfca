"""Compression, defects, Dixmier averaging, and the partition searches."""

import itertools

import numpy as np
import pytest

from pavlab import (
    MasaFrame,
    Partition,
    TracedMatrix,
    arc_partition,
    compress,
    conditional_expectation,
    dixmier_average,
    l1_norm,
    l2_norm,
    normalized_trace,
    op_norm,
    pave_search,
    paving_defect,
    paving_number_exact,
    refine,
    roots_of_unity_tuple,
    sign_split,
    spectral_tail_mass,
)


def random_matrix(dim, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))


def zero_diag(a):
    return a - np.diag(np.diagonal(a))


FLIP = np.array([[0, 1], [1, 0]], dtype=complex)


# -- Partition invariants ----------------------------------------------------

def test_projections_resolve_identity():
    frame = MasaFrame.identity(6)
    part = Partition(np.array([0, 1, 1, 2, 0, 2]), 3, frame)
    ps = [p.entries for p in part.projections()]
    assert np.abs(sum(ps) - np.eye(6)).max() < 1e-12
    for i, pi in enumerate(ps):
        for j, pj in enumerate(ps):
            want = pi if i == j else np.zeros_like(pi)
            assert np.abs(pi @ pj - want).max() < 1e-12


def test_empty_blocks_are_allowed():
    part = Partition(np.zeros(4, dtype=int), 3, MasaFrame.identity(4))
    assert part.n_blocks == 3
    assert part.effective_blocks == 1


def test_partition_validation():
    frame = MasaFrame.identity(3)
    with pytest.raises(ValueError):
        Partition(np.array([0, 1, 2]), 2, frame)
    with pytest.raises(ValueError):
        Partition(np.array([0, 1]), 2, frame)


# -- compress ----------------------------------------------------------------

def test_compress_singletons_is_conditional_expectation():
    frame = MasaFrame.identity(5)
    x = random_matrix(5, 0)
    c = compress(x, Partition.singletons(frame))
    assert np.allclose(c.entries, conditional_expectation(x, frame).entries, atol=1e-12)


def test_compress_one_block_is_identity_map():
    frame = MasaFrame.identity(4)
    x = random_matrix(4, 1)
    assert np.allclose(compress(x, Partition.one_block(frame)).entries, x, atol=1e-14)


def test_compress_kills_flip():
    part = Partition.singletons(MasaFrame.identity(2))
    assert np.abs(compress(FLIP, part).entries).max() == 0


def test_compress_contracts_and_fixes_expectation():
    rng = np.random.default_rng(7)
    for seed in range(15):
        dim = int(rng.integers(4, 64))
        frame = MasaFrame.identity(dim)
        x = random_matrix(dim, 50 + seed)
        part = Partition(rng.integers(0, 3, size=dim), 3, frame)
        c = compress(x, part)
        assert op_norm(c) <= op_norm(x) + 1e-9
        assert l2_norm(c) <= l2_norm(x) + 1e-9
        assert l1_norm(c) <= l1_norm(x) + 1e-9
        assert abs(normalized_trace(c) - normalized_trace(x)) < 1e-12
        assert np.allclose(
            conditional_expectation(c, frame).entries,
            conditional_expectation(x, frame).entries,
            atol=1e-12,
        )


# -- paving_defect -----------------------------------------------------------

def test_defect_zero_for_diagonal():
    frame = MasaFrame.identity(4)
    part = Partition(np.array([0, 0, 1, 1]), 2, frame)
    rep = paving_defect(np.diag([1.0, 2.0, 3.0, 4.0]).astype(complex), part)
    assert rep.defect == 0 and rep.ratio == 0


def test_defect_flip_singletons():
    rep = paving_defect(FLIP, Partition.singletons(MasaFrame.identity(2)))
    assert rep.defect == 0 and rep.ratio == 0


def test_defect_allones_two_blocks_dense_oracle():
    # zero-diagonal all-ones, blocks {0,1},{2,3}: compare against a dense
    # computation assembled from explicit projection sandwiches
    x = np.ones((4, 4), dtype=complex) - np.eye(4)
    frame = MasaFrame.identity(4)
    part = Partition(np.array([0, 0, 1, 1]), 2, frame)
    rep = paving_defect(x, part)
    acc = np.zeros_like(x)
    for p in part.projections():
        acc += p.entries @ x @ p.entries
    oracle = np.linalg.norm(acc - conditional_expectation(x, frame).entries, 2)
    assert rep.defect == pytest.approx(oracle, abs=1e-12)
    assert rep.defect == pytest.approx(1.0, abs=1e-12)
    assert rep.ratio == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_report_invariants_random():
    for seed in range(10):
        x = random_matrix(12, seed)
        frame = MasaFrame.identity(12)
        rng = np.random.default_rng(seed)
        part = Partition(rng.integers(0, 4, size=12), 4, frame)
        rep = paving_defect(x, part, eps=0.5)
        base = op_norm(zero_diag(x))
        assert abs(rep.ratio * base - rep.defect) < 1e-9
        assert 0.0 <= rep.spectral_tail <= 1.0


# -- spectral_tail_mass ------------------------------------------------------

def test_tail_examples():
    assert spectral_tail_mass(np.zeros((3, 3)), 0.1) == 0
    assert spectral_tail_mass(np.eye(4), 0.5) == 1.0
    assert spectral_tail_mass(np.diag([0.1, 0.9]).astype(complex), 0.5) == 0.5


# -- dixmier_average ---------------------------------------------------------

def test_dixmier_single_identity():
    frame = MasaFrame.identity(3)
    x = random_matrix(3, 2)
    out = dixmier_average(x, [np.eye(3)], frame)
    assert np.allclose(out.entries, x, atol=1e-14)


def test_dixmier_sign_average_kills_offdiagonal():
    frame = MasaFrame.identity(2)
    u = np.diag([1.0, -1.0]).astype(complex)
    out = dixmier_average(FLIP, [np.eye(2), u], frame)
    assert np.abs(out.entries).max() < 1e-14


def test_dixmier_rejects_bad_input():
    frame = MasaFrame.identity(2)
    with pytest.raises(ValueError):
        dixmier_average(FLIP, [np.diag([2.0, 1.0])], frame)  # not unitary
    with pytest.raises(ValueError):
        dixmier_average(FLIP, [FLIP], frame)  # unitary but off the MASA


def test_dixmier_contraction_bimodular_commuting():
    frame = MasaFrame.identity(8)
    rng = np.random.default_rng(4)
    x = random_matrix(8, 9)
    tu = [frame.diagonal_element(np.exp(2j * np.pi * rng.random(8))).entries for _ in range(3)]
    tv = [frame.diagonal_element(np.exp(2j * np.pi * rng.random(8))).entries for _ in range(2)]
    out_uv = dixmier_average(dixmier_average(x, tv, frame), tu, frame)
    out_vu = dixmier_average(dixmier_average(x, tu, frame), tv, frame)
    assert np.allclose(out_uv.entries, out_vu.entries, atol=1e-12)
    assert op_norm(out_uv) <= op_norm(x) + 1e-9
    a = frame.diagonal_element(rng.standard_normal(8)).entries
    b = frame.diagonal_element(rng.standard_normal(8)).entries
    lhs = dixmier_average(a @ x @ b, tu, frame).entries
    rhs = a @ dixmier_average(x, tu, frame).entries @ b
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_w_tuple_identity():
    # averaging over W = (w^(j-1)) with w the roots-of-unity unitary of the
    # partition reproduces the compression exactly
    for n, dim, seed in [(2, 8, 0), (3, 8, 1), (5, 16, 2), (8, 16, 3)]:
        rng = np.random.default_rng(seed)
        frame = MasaFrame.identity(dim)
        part = Partition(rng.integers(0, n, size=dim), n, frame)
        x = random_matrix(dim, 100 + seed)
        tw = dixmier_average(x, roots_of_unity_tuple(part), frame)
        assert np.abs(tw.entries - compress(x, part).entries).max() < 1e-12


# -- sign_split and arc_partition --------------------------------------------

def test_sign_split_identity_unitary():
    part = sign_split(np.eye(3), MasaFrame.identity(3))
    assert part.n_blocks == 2 and part.effective_blocks == 1


def test_sign_split_exact_cancellation():
    frame = MasaFrame.identity(2)
    part = sign_split(np.diag([1.0, -1.0]).astype(complex), frame)
    c = np.abs(normalized_trace(FLIP.conj().T @ np.diag([1, -1]) @ FLIP @ np.diag([1, -1])))
    assert c == pytest.approx(1.0)
    assert np.abs(compress(FLIP, part).entries).max() < 1e-14


def test_sign_split_rejects_non_involution():
    with pytest.raises(ValueError):
        sign_split(np.diag([1j, 1.0]), MasaFrame.identity(2))


def test_sign_split_l2_bound_random():
    # ||p1 xi p1 + p2 xi p2||_2 <= sqrt((1+c)/2) ||xi||_2 with
    # c = |tau(xi* u xi u*)| / ||xi||_2^2; deterministic inequality
    frame = MasaFrame.identity(32)
    rng = np.random.default_rng(11)
    for trial in range(30):
        xi = zero_diag(random_matrix(32, 300 + trial))
        s = np.ones(32)
        s[rng.permutation(32)[:16]] = -1.0
        u = np.diag(s).astype(complex)
        c = abs(normalized_trace(xi.conj().T @ u @ xi @ u.conj().T)) / l2_norm(xi) ** 2
        part = sign_split(u, frame)
        lhs = l2_norm(compress(xi, part))
        assert lhs <= np.sqrt((1 + c) / 2) * l2_norm(xi) + 1e-12


def test_arc_partition_trivial_cases():
    frame = MasaFrame.identity(5)
    part = arc_partition(np.eye(5), 4, frame)
    assert part.effective_blocks == 1
    assert part.block_indices(0).size == 5  # angle 0 goes to the first arc
    part1 = arc_partition(np.diag(np.exp(2j * np.pi * np.linspace(0, 0.9, 5))), 1, frame)
    assert part1.n_blocks == 1 and part1.effective_blocks == 1


def test_arc_partition_rejects_non_unitary():
    with pytest.raises(ValueError):
        arc_partition(np.diag([0.5, 1.0]), 2, MasaFrame.identity(2))


def test_arc_partition_covers_and_bounds():
    frame = MasaFrame.identity(64)
    rng = np.random.default_rng(13)
    u = np.diag(np.exp(2j * np.pi * rng.random(64)))
    part = arc_partition(u, 8, frame)
    assert np.bincount(part.assignment, minlength=8).sum() == 64
    angles = np.mod(np.angle(np.diagonal(u)), 2 * np.pi)
    for idx, k in enumerate(part.assignment):
        assert 2 * np.pi * k / 8 <= angles[idx] < 2 * np.pi * (k + 1) / 8 + 1e-12


def test_arc_partition_l2_bound_filtered():
    # small-scale version of the Lemma 3.1 2deg gate: instances filtered to
    # c <= 2^-7 must compress to at most 3/4 in L2 with n = 128 arcs
    dim, n = 256, 128
    frame = MasaFrame.identity(dim)
    rng = np.random.default_rng(17)
    done = 0
    trial = 0
    while done < 5 and trial < 50:
        trial += 1
        u = np.diag(np.exp(2j * np.pi * rng.random(dim)))
        xi = zero_diag(random_matrix(dim, 800 + trial))
        c = (normalized_trace(xi.conj().T @ u @ xi @ u.conj().T) / l2_norm(xi) ** 2).real
        if c > 2 ** -7:
            continue
        done += 1
        part = arc_partition(u, n, frame)
        assert l2_norm(compress(xi, part)) <= 0.75 * l2_norm(xi)
    assert done == 5


# -- refine --------------------------------------------------------------

def test_refine_with_one_block_returns_same_blocks():
    frame = MasaFrame.identity(6)
    p = Partition(np.array([0, 1, 0, 2, 1, 2]), 3, frame)
    r = refine(p, Partition.one_block(frame))
    assert np.array_equal(r.assignment, p.assignment)
    r2 = refine(p, p)
    assert np.array_equal(r2.assignment, p.assignment)


def test_refine_composition_identity():
    rng = np.random.default_rng(23)
    frame = MasaFrame.identity(16)
    for seed in range(10):
        x = random_matrix(16, 600 + seed)
        p = Partition(rng.integers(0, 3, size=16), 3, frame)
        q = Partition(rng.integers(0, 4, size=16), 4, frame)
        lhs = compress(x, refine(p, q)).entries
        rhs = compress(compress(x, p), q).entries
        assert np.abs(lhs - rhs).max() < 1e-12


def test_refine_never_increases_defect():
    rng = np.random.default_rng(29)
    frame = MasaFrame.identity(12)
    for seed in range(25):
        x = random_matrix(12, 700 + seed)
        p = Partition(rng.integers(0, 3, size=12), 3, frame)
        q = Partition(rng.integers(0, 3, size=12), 3, frame)
        assert paving_defect(x, refine(p, q)).defect <= paving_defect(x, p).defect + 1e-9


def test_refine_rejects_frame_mismatch():
    p = Partition.one_block(MasaFrame.identity(4))
    from pavlab import perpendicular_frame

    q = Partition.one_block(perpendicular_frame(4))
    with pytest.raises(ValueError):
        refine(p, q)


# -- paving_number_exact ------------------------------------------------------

def all_set_partitions(items):
    """Independent enumeration for the brute-force cross-check."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in all_set_partitions(rest):
        for i in range(len(smaller)):
            yield smaller[:i] + [[first] + smaller[i]] + smaller[i + 1:]
        yield [[first]] + smaller


def test_paving_number_flip():
    frame = MasaFrame.identity(2)
    assert paving_number_exact(FLIP, 0.1, frame) == 2


def test_paving_number_diagonal():
    frame = MasaFrame.identity(3)
    assert paving_number_exact(np.diag([1.0, 2.0, 3.0]), 0.05, frame) == 1


def test_paving_number_matches_independent_enumeration():
    x = np.ones((4, 4), dtype=complex) - np.eye(4)
    frame = MasaFrame.identity(4)
    got = paving_number_exact(x, 0.5, frame)
    # independent oracle over all 15 set partitions of {0,1,2,3}
    base = np.linalg.norm(x, 2)
    best = None
    count = 0
    for blocks in all_set_partitions(list(range(4))):
        count += 1
        acc = np.zeros_like(x)
        for b in blocks:
            sel = np.zeros((4, 4))
            for i in b:
                sel[i, i] = 1.0
            acc += sel @ x @ sel
        if np.linalg.norm(acc, 2) <= 0.5 * base:
            best = len(blocks) if best is None else min(best, len(blocks))
    assert count == 15
    assert got == best == 2


def test_paving_number_monotone_in_eps():
    rng = np.random.default_rng(31)
    frame = MasaFrame.identity(5)
    for seed in range(6):
        x = random_matrix(5, 900 + seed)
        values = [paving_number_exact(x, e, frame) for e in (0.2, 0.3, 0.5, 0.7, 0.9)]
        assert all(v is not None for v in values)
        assert all(a >= b for a, b in zip(values, values[1:]))


def test_paving_number_respects_max_n():
    x = np.ones((4, 4), dtype=complex) - np.eye(4)
    frame = MasaFrame.identity(4)
    assert paving_number_exact(x, 0.01, frame, max_n=1) is None


def test_paving_number_dim_guard():
    with pytest.raises(ValueError):
        paving_number_exact(np.eye(13), 0.5, MasaFrame.identity(13))


# -- pave_search ---------------------------------------------------------

def test_search_diagonal_any_strategy():
    frame = MasaFrame.identity(6)
    x = np.diag(np.arange(6.0))
    for strategy in ("exhaustive", "sign_split", "arc", "anneal", "roots_of_unity"):
        part, rep = pave_search(x, 0.5, strategy, budget=100, seed=1, frame=frame)
        assert rep.ratio == 0 and part.effective_blocks == 1


def test_search_flip_anneal():
    part, rep = pave_search(FLIP, 0.3, "anneal", budget=200, seed=5)
    assert rep.ratio == 0
    assert part.effective_blocks == 2


def test_search_unknown_strategy_and_bad_budget():
    with pytest.raises(ValueError):
        pave_search(FLIP, 0.5, "magic", budget=10, seed=0)
    with pytest.raises(ValueError):
        pave_search(FLIP, 0.5, "anneal", budget=0, seed=0)
    with pytest.raises(ValueError):
        pave_search(np.eye(20) * 0 + random_matrix(20, 0), 0.5, "exhaustive", budget=10, seed=0)


def test_search_deterministic_given_seed():
    x = zero_diag(random_matrix(24, 42))
    p1, r1 = pave_search(x, 0.4, "anneal", budget=400, seed=9)
    p2, r2 = pave_search(x, 0.4, "anneal", budget=400, seed=9)
    assert np.array_equal(p1.assignment, p2.assignment)
    d1, d2 = r1.to_json_dict(), r2.to_json_dict()
    d1.pop("elapsed_ms"), d2.pop("elapsed_ms")
    assert d1 == d2


def test_search_anneal_matches_exact_small():
    rng = np.random.default_rng(47)
    frame = MasaFrame.identity(5)
    for seed in range(8):
        x = random_matrix(5, 1200 + seed)
        for eps in (0.4, 0.6):
            n_star = paving_number_exact(x, eps, frame)
            part, rep = pave_search(x, eps, "anneal", budget=3000, seed=seed, frame=frame)
            assert rep.ratio <= eps
            assert part.effective_blocks == n_star


def test_search_beats_random_baseline():
    # Haar-model zero-diagonal at dim 64: the annealed report must be at
    # least as good as a random 4-block partition drawn from the same seed
    rng = np.random.default_rng(77)
    z = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    q, r = np.linalg.qr(z)
    u = q * (np.abs(np.diagonal(r)) / np.diagonal(r))
    x = zero_diag(u)
    x /= np.linalg.norm(x, 2)
    part, rep = pave_search(x, 0.6, "anneal", budget=10_000, seed=3)
    baseline = Partition(np.random.default_rng(3).integers(0, 4, size=64), 4, part.frame)
    assert rep.ratio <= paving_defect(x, baseline).ratio + 1e-12


def test_composition_refinement_small():
    # double paving: refine(P, Q) achieves ratio <= r1 * r2 on x
    rng = np.random.default_rng(53)
    frame = MasaFrame.identity(12)
    for seed in range(5):
        x = random_matrix(12, 1500 + seed)
        p, rep1 = pave_search(x, 0.6, "anneal", budget=800, seed=seed, frame=frame)
        y = compress(x, p)
        q, rep2 = pave_search(y.entries, 0.6, "anneal", budget=800, seed=seed + 1, frame=frame)
        combined = paving_defect(x, refine(p, q))
        assert combined.ratio <= rep1.ratio * rep2.ratio + 1e-9
