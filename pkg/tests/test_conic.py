import numpy as np
import pytest
import scipy.sparse as sp

from momentot.conic import (ConeBlock, ConicProgram, export_sdpa,
                            packed_to_matrix, psd_pack_indices, solve)

from sdpa_check import reconstruct_program, validate_sdpa


def min_t_program():
    # minimize t s.t. [[t, 1], [1, t]] >= 0
    blocks = [ConeBlock("free", 1), ConeBlock("psd", 2)]
    A = sp.csr_matrix(np.array([
        [-1.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0]]))
    b = np.array([0.0, 1.0, 0.0])
    c = np.array([1.0, 0.0, 0.0, 0.0])
    return ConicProgram(blocks, c, A, b)


def test_min_t_psd():
    z, rep = solve(min_t_program())
    assert rep.status == "optimal"
    assert z[0] == pytest.approx(1.0, abs=1e-6)


def test_nonneg_equality():
    # minimize c.z with z in Nonneg(1) and z = 3
    prog = ConicProgram([ConeBlock("nonneg", 1)], np.array([2.0]),
                        sp.csr_matrix(np.array([[1.0]])), np.array([3.0]))
    z, rep = solve(prog)
    assert rep.status == "optimal"
    assert z[0] == pytest.approx(3.0, abs=1e-7)
    assert rep.primal_objective == pytest.approx(6.0, abs=1e-6)


def test_validation_errors():
    with pytest.raises(ValueError):
        ConicProgram([ConeBlock("psd", 2)], np.zeros(2),
                     sp.csr_matrix((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        ConicProgram([ConeBlock("nonneg", 1)], np.zeros(1),
                     sp.csr_matrix((1, 1)), np.array([np.inf]))
    with pytest.raises(ValueError):
        ConeBlock("weird", 1)


def _random_feasible_program(rng, n_free=3, psd=3, nonneg=2, m=4):
    blocks = [ConeBlock("free", n_free), ConeBlock("psd", psd),
              ConeBlock("nonneg", nonneg)]
    npack = psd * (psd + 1) // 2
    n = n_free + npack + nonneg
    # z* strictly in the cone
    zs = np.empty(n)
    zs[:n_free] = rng.normal(size=n_free)
    W = rng.normal(size=(psd, psd))
    S = W @ W.T + psd * np.eye(psd)
    k = 0
    for (i, j) in psd_pack_indices(psd):
        zs[n_free + k] = S[i, j]
        k += 1
    zs[n_free + npack:] = rng.uniform(0.5, 2.0, nonneg)
    A = sp.csr_matrix(rng.normal(size=(m, n)))
    b = A @ zs
    # bounded objective: c = A' mu + s with s in the dual cone
    mu = rng.normal(size=m)
    s = np.zeros(n)
    V = rng.normal(size=(psd, psd))
    Sd = V @ V.T + 0.1 * np.eye(psd)
    k = 0
    for (i, j) in psd_pack_indices(psd):
        s[n_free + k] = Sd[i, j] * (1.0 if i == j else 2.0)
        k += 1
    s[n_free + npack:] = rng.uniform(0.1, 1.0, nonneg)
    c = A.T @ mu + s
    return ConicProgram(blocks, c, A, b), zs, float(c @ zs), float(mu @ b)


def test_random_feasible_programs_bounded_and_solved():
    rng = np.random.default_rng(42)
    for trial in range(5):
        prog, zs, upper, lower = _random_feasible_program(rng)
        z, rep = solve(prog, tol=1e-8)
        assert rep.status == "optimal", (trial, rep)
        assert rep.primal_objective <= upper + 1e-6
        assert rep.primal_objective >= lower - 1e-6
        assert rep.primal_residual <= 1e-7
        assert rep.cone_residual <= 1e-7
        assert prog.equality_residual(z) <= 1e-7


def test_solver_deterministic():
    rng = np.random.default_rng(3)
    prog, *_ = _random_feasible_program(rng)
    z1, rep1 = solve(prog)
    z2, rep2 = solve(prog)
    assert np.array_equal(z1, z2)
    assert rep1.as_dict() == rep2.as_dict()


def test_duplicate_and_dependent_rows_handled():
    base = min_t_program()
    A = sp.vstack([base.A, base.A[0], base.A[0] + base.A[2]]).tocsr()
    b = np.concatenate([base.b, [base.b[0]], [base.b[0] + base.b[2]]])
    prog = ConicProgram(base.blocks, base.c, A, b)
    z, rep = solve(prog)
    assert rep.status == "optimal"
    assert z[0] == pytest.approx(1.0, abs=1e-6)


def test_inconsistent_rows_infeasible():
    base = min_t_program()
    A = sp.vstack([base.A, base.A[1]]).tocsr()
    b = np.concatenate([base.b, [base.b[1] + 1.0]])
    prog = ConicProgram(base.blocks, base.c, A, b)
    z, rep = solve(prog)
    assert rep.status == "infeasible"


def test_infeasible_psd_program():
    # [[ -1, t], [t, -1]] >= 0 is impossible
    blocks = [ConeBlock("free", 1), ConeBlock("psd", 2)]
    A = sp.csr_matrix(np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0]]))
    b = np.array([-1.0, 0.0, -1.0])
    prog = ConicProgram(blocks, np.array([1.0, 0, 0, 0]), A, b)
    z, rep = solve(prog)
    assert rep.status == "infeasible"


def test_packed_matrix_helpers():
    vec = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    M = packed_to_matrix(vec, 3)
    assert M[0, 1] == M[1, 0] == 2.0
    assert M[2, 2] == 6.0
    assert psd_pack_indices(2) == [(0, 0), (0, 1), (1, 1)]


# -- SDPA export ---------------------------------------------------------------

def test_export_header_example():
    prog = ConicProgram([ConeBlock("psd", 2)], np.zeros(3),
                        sp.csr_matrix(np.array([[1.0, 0.0, 1.0]])),
                        np.array([1.0]))
    text = export_sdpa(prog)
    body = [ln for ln in text.splitlines() if not ln.startswith('"')]
    assert body[0] == "1"
    assert body[1] == "1"
    assert body[2] == "2"


def test_export_empty_objective_has_no_f0_lines():
    prog = ConicProgram([ConeBlock("psd", 2)], np.zeros(3),
                        sp.csr_matrix(np.array([[1.0, 0.0, 1.0]])),
                        np.array([0.0]))
    text = export_sdpa(prog)
    data_lines = [ln for ln in text.splitlines()[5:] if ln.strip()]
    assert all(not ln.startswith("0 ") for ln in data_lines)
    # objective vector line is all zeros
    body = [ln for ln in text.splitlines() if not ln.startswith('"')]
    assert set(body[3].split()) == {"0"}


def test_export_roundtrip_bit_exact():
    rng = np.random.default_rng(11)
    prog, *_ = _random_feasible_program(rng)
    text = export_sdpa(prog)
    validate_sdpa(text)
    blocks, c, A, b = reconstruct_program(text)
    assert blocks == [(bl.kind, bl.size) for bl in prog.blocks]
    assert np.array_equal(c, prog.c)
    assert np.array_equal(b, prog.b)
    assert (A != prog.A).nnz == 0


def test_export_byte_stable(tmp_path):
    rng = np.random.default_rng(12)
    prog, *_ = _random_feasible_program(rng)
    p1 = tmp_path / "a.dat-s"
    p2 = tmp_path / "b.dat-s"
    export_sdpa(prog, p1)
    export_sdpa(prog, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_export_reimport_objective_matches():
    prog = min_t_program()
    text = export_sdpa(prog)
    blocks, c, A, b = reconstruct_program(text)
    prog2 = ConicProgram([ConeBlock(k, s) for k, s in blocks], c, A, b)
    z1, rep1 = solve(prog)
    z2, rep2 = solve(prog2)
    assert rep1.primal_objective == pytest.approx(rep2.primal_objective,
                                                  abs=1e-6)


def test_program_serialize_deterministic():
    rng = np.random.default_rng(13)
    prog, *_ = _random_feasible_program(rng)
    assert prog.serialize() == prog.serialize()
