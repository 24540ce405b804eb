import csv

import numpy as np
import pytest
import torch

from flexio.data import generate_scenes
from flexio.errors import InvalidInput, InvalidTarget
from flexio.metrics import best_permutation, evaluate, si_sdr, si_sdr_improvement
from flexio.model import FlexIO, preset


def orthogonal_noise(ref, power, rng):
    n = rng.standard_normal(ref.shape)
    n -= np.dot(n, ref) / np.dot(ref, ref) * ref
    return n * np.sqrt(power / np.dot(n, n))


def test_perfect_and_scaled_estimates_clamp():
    ref = np.random.default_rng(0).standard_normal(1000)
    assert si_sdr(ref, ref) == 60.0
    assert si_sdr(3 * ref, ref) == 60.0


def test_orthogonal_noise_twenty_db():
    rng = np.random.default_rng(1)
    ref = rng.standard_normal(4000)
    est = ref + orthogonal_noise(ref, np.dot(ref, ref) / 100, rng)
    assert abs(si_sdr(est, ref) - 20.0) <= 0.01


def test_lower_clamp_and_errors():
    ref = np.array([1.0, 0.0])
    assert si_sdr(np.array([0.0, 1.0]), ref) == -60.0
    with pytest.raises(InvalidTarget):
        si_sdr(np.ones(4), np.zeros(4))
    with pytest.raises(InvalidInput):
        si_sdr(np.ones(4), np.ones(5))


def test_improvement():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(2000)
    mix = ref + 0.5 * rng.standard_normal(2000)
    assert si_sdr_improvement(mix, ref, mix) == 0.0
    assert si_sdr_improvement(ref, ref, mix) == pytest.approx(60 - si_sdr(mix, ref))
    assert si_sdr_improvement(rng.standard_normal(2000), ref, mix) < 0


def test_best_permutation():
    rng = np.random.default_rng(3)
    refs = rng.standard_normal((3, 500))
    ests = refs[[2, 0, 1]] + 0.1 * rng.standard_normal((3, 500))
    perm, scores = best_permutation(ests, refs)
    assert perm == (2, 0, 1) and min(scores) > 15


def test_evaluate_table_and_report(tmp_path):
    torch.manual_seed(0)
    model = FlexIO(preset("toy"))
    scenes = generate_scenes(0, [(1, 1, 2), (2, 3, 1)], 800)
    table = evaluate(model, scenes, tmp_path / "r.csv")
    assert set(table) == {(1, 1), (2, 3)}
    assert table[(1, 1)]["count"] == 2
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0]) == ["N", "M", "count", "mean_sisdr", "mean_sisdri"]
    assert len(rows) == 2
