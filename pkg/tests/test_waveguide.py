import math

import numpy as np
import pytest
import scipy.sparse as sp

from twistband.band_structure import ground_state
from twistband.eigensolve import solve_lowest
from twistband.fiber_assembly import assemble_matrices
from twistband.geometry import triangulate
from twistband.twist_profile import make_profile
from twistband.waveguide import (StripDiscretization, WaveguideError, assemble_waveguide,
                                 axial_matrices, convergence_study, discrete_rayleigh,
                                 eigenvector_slice_csv, richardson, slab_mass,
                                 solve_bound_states, transverse_modes, trial_vector)


@pytest.fixture(scope="module")
def coarse(square):
    return assemble_matrices(triangulate(square, 0.2))


@pytest.fixture(scope="module")
def coarse_gs(coarse):
    return ground_state(coarse, 1.0)


@pytest.fixture(scope="module")
def bump_pencil(coarse, bump):
    return assemble_waveguide(coarse, bump, StripDiscretization.with_density(20.0, 5))


@pytest.fixture(scope="module")
def bump_solution(bump_pencil, coarse_gs):
    return solve_bound_states(bump_pencil, coarse_gs.E, k=2, return_vectors=True)


def test_strip_validation():
    with pytest.raises(WaveguideError):
        StripDiscretization(0.0, 10)
    with pytest.raises(WaveguideError):
        StripDiscretization(1.0, 1)
    s = StripDiscretization.with_density(4.0, 10)
    assert s.n_s == 40 and s.ds == pytest.approx(0.2)
    assert len(s.interior_s) == 39


def test_axial_matrices_untwisted_are_p1(bump):
    strip = StripDiscretization(5.0, 50)
    flat = make_profile("cosine_bump", 0.0, 1.0, c=0.0)
    Ks, Ms, Ws, Gs = axial_matrices(strip, flat)
    assert abs(Ws).max() == 0 and abs(Gs).max() == 0
    h = strip.ds
    assert Ks[3, 3] == pytest.approx(2 / h) and Ks[3, 4] == pytest.approx(-1 / h)
    assert Ms[3, 3] == pytest.approx(2 * h / 3) and Ms[3, 4] == pytest.approx(h / 6)
    # uniform twist: W = beta0^2 M away from the support
    Ks, Ms, Ws, Gs = axial_matrices(strip, bump)
    assert Ws[0, 0] == pytest.approx(Ms[0, 0], rel=1e-13)


def test_pencil_symmetry(bump_pencil):
    H, M = bump_pencil.H, bump_pencil.M
    assert abs(H - H.T).max() <= 1e-13 * abs(H).max()
    assert abs(M - M.T).max() <= 1e-13 * abs(M).max()


def test_pencil_floor(bump_pencil, rng):
    # H >= lambda_1(omega) Mhat since the form is a sum of squares
    for _ in range(5):
        x = rng.standard_normal(bump_pencil.dim)
        assert discrete_rayleigh(bump_pencil, x) >= bump_pencil.lower_bound


def test_separation_of_variables(coarse):
    flat = make_profile("cosine_bump", 0.0, 1.0, c=0.0)
    strip = StripDiscretization(4.0, 40)
    pen = assemble_waveguide(coarse, flat, strip)
    lam = solve_bound_states(pen, 0.0, k=1).eigenvalues[0]
    lam_t = solve_lowest(coarse.K, coarse.M, 1, sigma=0.0).values[0]
    # lowest P1 eigenvalue of -d^2/ds^2 on (-L, L) with Dirichlet ends
    h, k = strip.ds, math.pi / (2 * strip.L)
    mu = 6 / h ** 2 * (1 - math.cos(k * h)) / (2 + math.cos(k * h))
    assert lam == pytest.approx(lam_t + mu, rel=1e-9)
    assert mu == pytest.approx(k ** 2, rel=1e-3)


def test_bound_state_below_threshold(bump_solution, coarse_gs):
    rep, _ = bump_solution
    assert rep.certified
    assert rep.eigenvalues[0] < coarse_gs.E - rep.error_budget
    assert all(r <= 1e-8 for r in rep.residuals)


def test_trial_function_upper_bound(bump_pencil, bump_solution, coarse_gs):
    rep, _ = bump_solution
    s = bump_pencil.strip.interior_s
    phi = np.exp(-0.1 * np.abs(s)) - math.exp(-0.1 * bump_pencil.strip.L)
    x = trial_vector(bump_pencil, coarse_gs.f, phi)
    assert discrete_rayleigh(bump_pencil, x) >= rep.eigenvalues[0]


def test_eigenvector_positive_and_localized(bump_pencil, bump_solution):
    _, vecs = bump_solution
    X = bump_pencil.expand(vecs[:, 0])
    X = X * np.sign(X.sum())
    assert X.min() > -1e-10 * abs(X).max()
    near, far = slab_mass(bump_pencil, vecs[:, 0], [0.0, 5.0, 15.0, 20.0])[::2]
    assert far < near


def test_unperturbed_and_repulsive_no_bound_state(coarse, coarse_gs):
    strip = StripDiscretization.with_density(10.0, 5)
    for prof in (make_profile("cosine_bump", 1.0, 1.0, c=0.0),
                 make_profile("sine", 1.0, 1.0, c=0.3)):
        rep = solve_bound_states(assemble_waveguide(coarse, prof, strip), coarse_gs.E)
        assert not rep.certified
        assert rep.verdict == "no certified bound state"
        assert rep.eigenvalues[0] > coarse_gs.E


def test_monotone_in_L(coarse, coarse_gs, bump):
    basis = transverse_modes(coarse, 1.0, 12)
    lam = []
    for L in (5.0, 10.0, 20.0):
        pen = assemble_waveguide(coarse, bump, StripDiscretization.with_density(L, 5),
                                 basis=basis)
        lam.append(solve_bound_states(pen, coarse_gs.E, k=1).eigenvalues[0])
    assert lam[0] >= lam[1] >= lam[2]


def test_compression_is_upper_bound(coarse, coarse_gs, bump, bump_solution):
    full = bump_solution[0].eigenvalues[0]
    strip = StripDiscretization.with_density(20.0, 5)
    prev = math.inf
    for m in (4, 8, 16):
        pen = assemble_waveguide(coarse, bump, strip, n_modes=m)
        assert pen.dim == (strip.n_s - 1) * m
        lam = solve_bound_states(pen, coarse_gs.E, k=1).eigenvalues[0]
        assert full - 1e-9 <= lam <= prev + 1e-9
        prev = lam
    assert prev - full < 1e-3


def test_trial_vector_with_basis(coarse, coarse_gs, bump, bump_pencil):
    pen = assemble_waveguide(coarse, bump, bump_pencil.strip, n_modes=6)
    phi = np.cos(np.pi * bump_pencil.strip.interior_s / 40.0)
    full = discrete_rayleigh(bump_pencil, trial_vector(bump_pencil, coarse_gs.f, phi))
    comp = discrete_rayleigh(pen, trial_vector(pen, coarse_gs.f, phi))
    # the transverse ground state is the first mode, so both trials coincide
    assert comp == pytest.approx(full, rel=1e-9)


def test_guards(coarse, bump):
    with pytest.raises(WaveguideError, match="exceeds the cap"):
        assemble_waveguide(coarse, bump, StripDiscretization(5.0, 50), cap=100)
    with pytest.raises(WaveguideError, match="must exceed"):
        assemble_waveguide(coarse, bump, StripDiscretization(1.0, 50))


def test_richardson():
    h = np.array([0.4, 0.2, 0.1])
    ex, err = richardson(3.0 + 2.0 * h ** 2, ratio=2.0, order=2)
    assert ex == pytest.approx(3.0, abs=1e-14) and err < 1e-14
    ex, err = richardson([1.0, 0.5], ratio=2.0, order=1)
    assert ex == 0.0 and err == 0.5


def test_slice_csv(bump_pencil, bump_solution):
    _, vecs = bump_solution
    text = eigenvector_slice_csv(bump_pencil, vecs[:, 0], s_stride=50)
    lines = text.strip().split("\n")
    assert lines[0] == "s,t2,t3,value"
    n_slices = len(range(0, len(bump_pencil.strip.interior_s), 50))
    assert len(lines) == 1 + n_slices * bump_pencil.n_t


def test_convergence_study_small(square, bump):
    rep = convergence_study(square, bump, [0.2, 0.1], [10.0, 20.0, 40.0], per_unit=5)
    assert [r["L"] for r in rep.truncation_table] == [10.0, 20.0, 40.0]
    assert len(rep.mesh_table) == 2
    assert rep.monotone_in_L
    assert rep.error_budget == pytest.approx(sum(rep.budget_terms.values()))
    assert rep.certified or rep.inconclusive


def test_convergence_study_unperturbed(square):
    flat = make_profile("cosine_bump", 1.0, 1.0, c=0.0)
    rep = convergence_study(square, flat, [0.2, 0.1], [5.0, 10.0], per_unit=5)
    assert not rep.certified and not rep.inconclusive
    assert rep.verdict == "no certified bound state"
    assert all(r["gap"] < 0 for r in rep.truncation_table)


def test_convergence_study_validation(square, bump):
    with pytest.raises(WaveguideError):
        convergence_study(square, bump, [0.2], [10.0])
    with pytest.raises(WaveguideError):
        convergence_study(square, bump, [0.2], [0.5, 10.0])


def test_sparse_types(bump_pencil):
    assert sp.issparse(bump_pencil.H) and sp.issparse(bump_pencil.M)
