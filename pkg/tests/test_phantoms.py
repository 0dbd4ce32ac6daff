import filecmp

import numpy as np
import pytest

from idol.phantoms import (CENTER_STEP, SCT_GAMMA, build_cohort, drifted, generate_patient, load_cohort,
                           render_clean, render_fraction, sample_anatomy, save_cohort)


def centroid(mask):
    r, c = np.nonzero(mask)
    return np.array([r.mean(), c.mean()])


class TestGeneratePatient:
    @pytest.mark.parametrize("task", ["seg", "sr", "sct"])
    def test_deterministic(self, task):
        a = generate_patient(task, 11)
        b = generate_patient(task, 11)
        assert a.params == b.params
        for (xa, ya), (xb, yb) in zip(a.fractions, b.fractions):
            assert xa.tobytes() == xb.tobytes() and ya.tobytes() == yb.tobytes()

    def test_nine_fractions_prior_is_fraction0(self):
        p = generate_patient("seg", 2)
        assert len(p.fractions) == 9
        assert p.prior[0] is p.fractions[0][0]

    def test_seg_foreground_fraction(self):
        for seed in range(100):
            p = generate_patient("seg", seed)
            for _, y in p.fractions:
                assert set(np.unique(y)) <= {0.0, 1.0}
                assert 0.02 <= y.mean() <= 0.40

    def test_sct_shared_geometry(self):
        for seed in range(10):
            p = generate_patient("sct", seed)
            a = p.params
            mid = 0.5 * (a.base + a.background)
            for k in (0, 3, 8):
                x, y = p.fractions[k]
                assert np.array_equal(x > a.coeff * mid, y > mid ** SCT_GAMMA)

    def test_sr_residual(self):
        for seed in range(5):
            x, y = generate_patient("sr", seed).fractions[1]
            assert np.mean(np.abs(y - x)) > 0

    @pytest.mark.parametrize("task", ["seg", "sr", "sct"])
    def test_value_ranges_and_resolution(self, task):
        p = generate_patient(task, 4, resolution=64)
        for x, y in p.fractions:
            assert x.shape == y.shape == (64, 64)
            assert x.min() >= 0 and x.max() <= 1 and y.min() >= 0 and y.max() <= 1

    def test_bad_resolution(self):
        with pytest.raises(ValueError):
            generate_patient("seg", 1, resolution=48)


class TestRenderFraction:
    def test_fraction0_zero_drift(self):
        a = sample_anatomy("seg", 5)
        assert drifted(a, 0) == a

    def test_anatomy_inside_margins(self):
        for seed in range(200):
            a = sample_anatomy("seg", seed)
            assert a.extent_ok()
            for k in range(9):
                assert drifted(a, k).extent_ok()

    def test_drift_step_bounds(self):
        for seed in range(50):
            a = sample_anatomy("sr", seed)
            prev = a
            for k in range(1, 9):
                cur = drifted(a, k)
                assert np.hypot(cur.cx - prev.cx, cur.cy - prev.cy) <= CENTER_STEP + 1e-12
                assert abs(cur.angle - a.angle) <= 0.1 + 1e-12
                assert abs(cur.a / a.a - 1) <= 0.05 + 1e-12
                prev = cur

    def test_centroid_drift(self):
        res = 32
        for seed in range(20):
            a = sample_anatomy("seg", seed)
            _, m0 = render_fraction(a, 0, "seg", res)
            _, m1 = render_fraction(a, 1, "seg", res)
            assert np.linalg.norm(centroid(m1) - centroid(m0)) <= 0.03 * res + 1

    def test_negative_fraction(self):
        with pytest.raises(ValueError):
            render_fraction(sample_anatomy("seg", 1), -1, "seg", 32)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            render_fraction(sample_anatomy("seg", 1), 0, "ct", 32)


@pytest.mark.parametrize("task", ["seg", "sr", "sct"])
def test_prior_informativeness(task):
    patients = [generate_patient(task, 1000 + s) for s in range(20)]
    for i, p in enumerate(patients):
        intra = np.mean([np.mean(np.abs(p.fractions[0][0] - p.fractions[k][0])) for k in range(1, 9)])
        inter = np.mean([np.mean(np.abs(p.fractions[k][0] - q.fractions[k][0]))
                         for j, q in enumerate(patients) if j != i for k in range(1, 9)])
        assert intra < inter


def test_sct_mapping_is_patient_dependent():
    params = [sample_anatomy("sct", s) for s in range(200)]
    c1 = min(params, key=lambda a: a.coeff)
    c2 = max(params, key=lambda a: a.coeff)
    assert c2.coeff - c1.coeff > 0.2
    # ideal inverse for observed input u is (u / c) ** gamma
    u = 0.5
    assert (u / c1.coeff) ** SCT_GAMMA != pytest.approx((u / c2.coeff) ** SCT_GAMMA, abs=1e-3)
    assert all(0.7 <= a.coeff <= 1.3 for a in params)


class TestCohort:
    def test_small(self):
        c = build_cohort("seg", 2, 1, seed=0)
        ids = [p.patient_id for p in c.train + c.holdout]
        assert len(set(ids)) == 3
        assert not c.train_ids & {p.patient_id for p in c.holdout}

    def test_default_counts(self):
        c = build_cohort("sct", seed=1)
        x, y = c.training_samples()
        assert len(c.train) == 20 and len(c.holdout) == 5
        assert x.shape == (180, 1, 32, 32) == y.shape

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            build_cohort("seg", 1, 1)
        with pytest.raises(ValueError):
            build_cohort("seg", 3, 0)

    def test_save_deterministic_and_load(self, tmp_path):
        a = save_cohort(build_cohort("sr", 2, 1, seed=7), tmp_path / "a")
        b = save_cohort(build_cohort("sr", 2, 1, seed=7), tmp_path / "b")
        cmp = filecmp.dircmp(a, b)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes()
        assert (a / "P001" / "frac08_target.pgm").exists()
        loaded = load_cohort(a)
        orig = build_cohort("sr", 2, 1, seed=7)
        assert [p.patient_id for p in loaded.holdout] == ["P003"]
        np.testing.assert_allclose(loaded.train[0].fractions[3][0], orig.train[0].fractions[3][0], atol=0.5 / 65535)
