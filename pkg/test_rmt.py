# test_rmt.py
import sys
import os
from math import log

import numpy as np
import pytest
from scipy.integrate import quad

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
import services.rmt as rmt
from services.errors import ValidationError
from services.rmt import (
    DEFAULT_SEED, RmtEnsemble, ensemble_for_n, gap_ratio_surmise, load_reference_table, number_variance_asymptotic,
    pin_reference, rmt_reference, sample_levels, sample_reference_r, spacing_surmise,
)

ALL = list(RmtEnsemble)
WIGNER = [RmtEnsemble.GOE, RmtEnsemble.GUE, RmtEnsemble.GSE]


@pytest.mark.parametrize("N,expected", [
    (8, RmtEnsemble.GOE), (10, RmtEnsemble.GUE), (12, RmtEnsemble.GSE),
    (14, RmtEnsemble.GUE), (16, RmtEnsemble.GOE), (20, RmtEnsemble.GSE),
])
def test_ensemble_for_n(N, expected):
    assert ensemble_for_n(N) is expected


def test_ensemble_for_odd_n():
    with pytest.raises(ValidationError):
        ensemble_for_n(9)


@pytest.mark.parametrize("ensemble", ALL)
def test_spacing_surmise_normalized(ensemble):
    mass, _ = quad(lambda s: spacing_surmise(s, ensemble), 0, np.inf)
    mean, _ = quad(lambda s: s * spacing_surmise(s, ensemble), 0, np.inf)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("ensemble,mean_r", [
    (RmtEnsemble.GOE, 0.5359), (RmtEnsemble.GUE, 0.6027), (RmtEnsemble.GSE, 0.6762),
    (RmtEnsemble.POISSON, 2 * log(2) - 1),
])
def test_gap_ratio_surmise(ensemble, mean_r):
    mass, _ = quad(lambda r: gap_ratio_surmise(r, ensemble), 0, 1)
    mean, _ = quad(lambda r: r * gap_ratio_surmise(r, ensemble), 0, 1)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(mean_r, abs=0.005)


def test_poisson_number_variance_is_linear():
    L = np.array([0.5, 1.0, 4.0])
    assert np.array_equal(number_variance_asymptotic(L, RmtEnsemble.POISSON), L)
    assert number_variance_asymptotic(10.0, RmtEnsemble.GOE) > number_variance_asymptotic(10.0, RmtEnsemble.GUE)


@pytest.mark.parametrize("ensemble", ALL)
def test_sample_levels_shape(ensemble):
    levels = sample_levels(ensemble, 40, np.random.default_rng(0))
    assert len(levels) == 40
    assert np.all(np.diff(levels) >= 0)


@pytest.mark.parametrize("ensemble,dim,expected", [
    (RmtEnsemble.GOE, 200, 0.5307),
    (RmtEnsemble.GUE, 200, 0.5996),
    (RmtEnsemble.GSE, 100, 0.6744),
    (RmtEnsemble.POISSON, 1000, 2 * log(2) - 1),
])
def test_sampled_mean_gap_ratio(ensemble, dim, expected):
    result = sample_reference_r(ensemble, n_matrices=20, dim=dim, seed=3)
    assert result["mean_r"] == pytest.approx(expected, abs=0.015)
    assert 0 < result["stderr"] < 0.01


def test_missing_reference_table_is_sampled_and_pinned(tmp_path, monkeypatch):
    monkeypatch.setattr(rmt, "DEFAULT_MATRICES", 3)
    monkeypatch.setattr(rmt, "DEFAULT_DIM", 30)
    path = tmp_path / "reference.json"
    ref = rmt_reference(N=14, path=path)
    assert path.exists()
    table = load_reference_table(path)
    assert set(table) == {"version", "generated_by", "values", "poisson"}
    assert ref.ensemble is RmtEnsemble.GUE
    assert ref.mean_r == sample_reference_r(RmtEnsemble.GUE, 3, 30, DEFAULT_SEED + 1)["mean_r"]
    assert ref.source == str(path)
    assert table["values"]["GOE"]["n_matrices"] == 3


def test_poisson_reference_is_analytic():
    ref = rmt_reference(ensemble="Poisson")
    assert ref.mean_r == 2 * log(2) - 1
    assert ref.source == "analytic"
    with pytest.raises(ValidationError):
        rmt_reference()


def test_pin_reference(tmp_path):
    path = tmp_path / "reference.json"
    table = pin_reference(path, n_matrices=3, dim=30, seed=11)
    assert path.exists()
    assert load_reference_table(path) == table
    assert table["values"]["GSE"]["seed"] == 13
    ref = rmt_reference(ensemble=RmtEnsemble.GUE, path=path)
    assert ref.mean_r == table["values"]["GUE"]["mean_r"]
    assert 0.3 < ref.mean_r < 0.9
