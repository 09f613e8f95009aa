import json

import numpy as np
import pytest

from robust_lfd.consistency import (
    INCONSISTENT, INLIER, STATE_OUTLIER, ConsistencyError, filter_consistent,
)
from robust_lfd.model import DemonstrationSet
from robust_lfd.synthlab import TeacherConfig, generate_dataset
from worlds import density_fidelity, exact_corruption, toy_problem


@pytest.fixture(scope="module")
def filtered(small_world):
    D, _ = small_world
    kept, report = filter_consistent(D, seed=2)
    return D, kept, report


def test_predicate_fidelity(filtered):
    D, kept, rep = filtered
    expect = (rep.demo_sign > 0) | (rep.state_sign < 0)
    np.testing.assert_array_equal(rep.keep, expect)
    np.testing.assert_array_equal(rep.demo_sign, np.where(rep.demo_score > 0, 1, -1))
    np.testing.assert_array_equal(kept.ids, D.ids[expect])


def test_region_partition(filtered):
    D, _, rep = filtered
    regions = rep.regions
    assert set(regions) <= {INLIER, STATE_OUTLIER, INCONSISTENT}
    removed = {int(i) for i, r in zip(rep.ids, regions) if r == INCONSISTENT}
    assert removed == set(rep.removed_ids)
    assert set(rep.kept_ids) | removed == set(int(i) for i in D.ids)
    assert not set(rep.kept_ids) & removed


def test_removal_bound(filtered):
    D, _, rep = filtered
    assert len(rep.removed_ids) <= 0.08 * len(D) + 1


def test_deterministic(small_world):
    D, _ = small_world
    a = filter_consistent(D, seed=4)[1]
    b = filter_consistent(D, seed=4)[1]
    assert a.to_lines() == b.to_lines()


def test_audit_lines(filtered):
    _, _, rep = filtered
    recs = [json.loads(line) for line in rep.to_lines()]
    assert [r["id"] for r in recs] == [int(i) for i in rep.ids]
    assert {"id", "region", "g_D_score", "g_S_score"} == set(recs[0])


def test_state_outlier_kept():
    D, _ = generate_dataset(80, TeacherConfig(p_exec=0.0), seed=8)
    S, A = D.states.copy(), D.actions.copy()
    S[0, :3] += 600.0  # far away on the table
    A[0, 14:17] *= 25.0  # and a bizarre grip
    E = DemonstrationSet(S, A, D.ids)
    _, rep = filter_consistent(E, seed=0)
    assert rep.state_sign[0] == -1
    assert rep.regions[0] in (STATE_OUTLIER, INLIER)
    assert 0 in rep.kept_ids


def test_identical_demos_kept():
    D, _ = generate_dataset(1, TeacherConfig.noiseless(), seed=1)
    n = 30
    E = DemonstrationSet(np.repeat(D.states, n, 0), np.repeat(D.actions, n, 0), np.arange(n))
    kept, rep = filter_consistent(E)
    assert len(kept) == n and not rep.removed_ids


def test_bad_nu(small_world):
    D, _ = small_world
    with pytest.raises(ConsistencyError):
        filter_consistent(D, nu_D=0.0)
    with pytest.raises(ConsistencyError):
        filter_consistent(D, nu_S=1.5)


def test_525_with_28_corrupted():
    # 28 of 525 demonstrations corrupted, as in the physical data set
    D, bad = exact_corruption(525, 28, seed=0)
    _, rep = filter_consistent(D, seed=0)
    removed = set(rep.removed_ids)
    hits = len(removed & {int(D.ids[i]) for i in bad})
    clean_removed = len(removed) - hits
    assert hits >= 22
    assert clean_removed <= 0.05 * (525 - 28)


@pytest.mark.xfail(strict=True, reason=(
    "g_D flags about nu_D = 8% of clean data while g_S exempts at most about "
    "nu_S = 5%, so at least ~3% of clean demonstrations are removed under the "
    "default nu values; measured 4.3-4.8% (see the decisions ledger)"))
def test_clean_data_near_inert():
    D, _ = generate_dataset(394, TeacherConfig(p_exec=0.0), seed=0)
    _, rep = filter_consistent(D, seed=0)
    assert len(rep.kept_ids) >= 0.99 * len(D)


def test_clean_removal_bounded_by_nu():
    # what does hold on clean data: removal stays under the nu_D ceiling
    D, _ = generate_dataset(200, TeacherConfig(p_exec=0.0), seed=3)
    _, rep = filter_consistent(D, seed=0)
    assert len(rep.removed_ids) <= 0.08 * len(D) + 1


@pytest.mark.parametrize("seed", range(4))
def test_density_rule_agreement(seed):
    Z, _ = toy_problem(seed)
    overall, _, _ = density_fidelity(Z)
    assert overall >= 0.9
