import math

import numpy as np
import pytest

from twistband.band_structure import (BandData, band_diagnostics, compute_bands,
                                      default_p_grid, fiber_eigenvalues, ground_state,
                                      ground_state_csv, untwisted_lowest)
from twistband.eigensolve import rayleigh_quotient
from twistband.fiber_assembly import assemble_matrices
from twistband.geometry import CrossSectionSpec, bounding_radius, triangulate

J01_SQ = 2.404825557695773 ** 2


def test_square_untwisted(square_fine_mats):
    gs = ground_state(square_fine_mats, 0.0)
    assert gs.E == pytest.approx(2 * math.pi ** 2, rel=2e-3)
    assert gs.norm_sq == pytest.approx(1.0, abs=1e-12)
    assert gs.positivity_ok


def test_square_twisted_range(square_fine_mats, square_fine_gs):
    lam = untwisted_lowest(square_fine_mats)
    gap = square_fine_gs.E - lam
    assert 0 < gap <= math.pi ** 2 / 6 - 1.5
    assert square_fine_gs.angular_energy > 0
    # variational bound with the untwisted ground state
    f0 = ground_state(square_fine_mats, 0.0).f
    S = square_fine_mats.K + square_fine_mats.A
    assert square_fine_gs.E <= rayleigh_quotient(S, square_fine_mats.M, f0)


def test_closed_form_angular_energy_of_untwisted_state():
    # ||d_alpha f0||^2 for f0 = 2 cos(pi t2) cos(pi t3) by tensor Gauss quadrature
    x, w = np.polynomial.legendre.leggauss(40)
    x, w = 0.5 * x, 0.5 * w
    T2, T3 = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    d2 = -2 * math.pi * np.sin(math.pi * T2) * np.cos(math.pi * T3)
    d3 = -2 * math.pi * np.cos(math.pi * T2) * np.sin(math.pi * T3)
    val = np.sum(W * (T2 * d3 - T3 * d2) ** 2)
    assert val == pytest.approx(math.pi ** 2 / 6 - 1.5, rel=1e-12)


def test_disk_rotational_symmetry(disk_mats):
    es = [ground_state(disk_mats, b).E for b in (0.0, 1.0, 2.0)]
    assert max(es) - min(es) <= 1e-3 * es[0]
    assert es[0] == pytest.approx(J01_SQ, rel=1e-2)


def test_E_monotone_in_beta0(square_mats):
    es = [ground_state(square_mats, b).E for b in (0.0, 0.5, 1.0, 2.0)]
    assert all(b >= a for a, b in zip(es, es[1:]))


@pytest.mark.parametrize("spec", [
    CrossSectionSpec.rectangle(2, 1), CrossSectionSpec.ellipse(1, 0.5),
    CrossSectionSpec.ellipse(0.5, 0.5, center_offset=(0.4, 0.0))])
def test_positivity_other_sections(spec):
    mats = assemble_matrices(triangulate(spec, 0.08))
    gs = ground_state(mats, 1.0)
    assert gs.positivity_ok and gs.min_value > 0
    assert gs.angular_energy > 0


def test_negative_beta0(square_mats):
    with pytest.raises(ValueError):
        ground_state(square_mats, -1.0)


def test_untwisted_bands_shift(square_mats):
    p = np.linspace(-2, 2, 5)
    band = compute_bands(square_mats, 0.0, p, n_bands=3)
    assert np.allclose(band.bands - band.bands[2], (p ** 2)[:, None], atol=1e-10 * 50)


def test_bands_square(square_mats):
    a = bounding_radius(square_mats.mesh)
    p = np.arange(-5, 5.01, 0.5)
    band = compute_bands(square_mats, 1.0, p, n_bands=3)
    assert np.all(np.diff(band.bands, axis=1) >= 0)
    rel = np.abs(band.bands - band.bands[::-1]) / np.abs(band.bands).max()
    assert rel.max() <= 1e-9
    d = band_diagnostics(band, a)
    assert d["evenness"]["ok"] and d["lower_bound"]["ok"]
    assert d["threshold"]["ok"] and d["threshold"]["argmin_p"] == 0.0
    assert d["divergence_trend"]["ok"]
    j = int(np.argmin(np.abs(p - 5)))
    assert band.bands[j, 0] >= 25 / 1.5


def test_complex_eigenvectors(square_mats):
    vals, vecs = fiber_eigenvalues(square_mats, 1.3, 1.0, 2)
    assert np.iscomplexobj(vecs)
    vals0, _ = fiber_eigenvalues(square_mats, 0.0, 1.0, 2)
    assert vals[0] > vals0[0]


def test_grid_validation(square_mats):
    with pytest.raises(ValueError):
        compute_bands(square_mats, 1.0, [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        compute_bands(square_mats, 1.0, [-1.0, 1.0])
    with pytest.raises(ValueError):
        compute_bands(square_mats, 1.0, [1.0, 0.0, -1.0])


def test_default_grid():
    g = default_p_grid(math.sqrt(0.5), 1.0)
    assert len(g) == 41 and g[20] == 0.0
    assert g[-1] == pytest.approx(5 * (1 + math.sqrt(0.5)))


def test_diagnostics_flags_violation():
    p = np.array([-1.0, 0.0, 1.0])
    band = BandData(p, np.array([[0.5], [1.0], [0.5]]), None, 1.0, "x")
    d = band_diagnostics(band, 0.5)
    assert not d["lower_bound"]["ok"]
    assert not d["threshold"]["ok"]


def test_csv_outputs(square_mats):
    band = compute_bands(square_mats, 1.0, [-1.0, 0.0, 1.0], n_bands=2)
    lines = band.to_csv().split("\n")
    assert lines[0] == "p,eps_1,eps_2"
    gs = ground_state(square_mats, 1.0)
    text = ground_state_csv(gs, square_mats)
    assert text.startswith("node_t2,node_t3,f_value\n")
    assert len(text.strip().split("\n")) == square_mats.n + 1
