import numpy as np
import pytest

from snaklat import continuation as ct
from snaklat import lattice, model, spectral, studies
from snaklat.lattice import OFFSITE

NL = model.cubic_quintic()


class TestExpectedFoldSequence:
    def test_matches_orbit_sizes(self):
        seq = studies.expected_fold_sequence(19)
        assert seq[0] == ("right", (1, 1), 4)
        assert seq[1] == ("left", (2, 1), 8)
        assert seq[9] == ("left", (3, 3), 4)
        kinds = [k for k, _, _ in seq]
        assert kinds == ["right", "left"] * 9 + ["right"]
        for _, cell, count in seq:
            assert count == lattice.orbit_size(cell, OFFSITE)


class TestSnakeBranch:
    def test_short_snake_passes_folds_in_order(self):
        br = studies.snake_branch(NL, 1e-3, n_d=8, max_folds=5)
        folds = ct.detect_and_refine_folds(br, NL)
        assert len(folds) == 5
        expected = studies.expected_fold_sequence(5)
        for fold, (kind, cell, _) in zip(folds, expected):
            if kind == "right":
                assert fold.mu > 0.99
            else:
                assert fold.mu < 0.06
            assert fold.refined


class TestOnSiteSnake:
    def test_crossing_counts_match_onsite_orbits(self):
        from snaklat import spectral
        br = studies.snake_branch(NL, 1e-3, symmetry="onsite", n_d=8,
                                  max_folds=5)
        folds = ct.detect_and_refine_folds(br, NL)
        cells = [(1, 1), (2, 1), (2, 1), (2, 2), (2, 2)]
        kinds = ["right", "left", "right", "left", "right"]
        for idx, fold, cell, kind in zip(br.fold_indices(), folds, cells,
                                         kinds):
            assert fold.refined
            got = spectral.crossing_count_at_fold(
                br, idx, NL, window=2e-4 if kind == "right" else 2e-3,
                fold_point=fold)
            assert got == lattice.orbit_size(cell, "onsite")


class TestCouplingContinuation:
    def test_branch_in_d_folds_at_existence_boundary(self):
        # continued in d at fixed mu, the pattern branch turns where the
        # left-fold curve sweeps past: a fold event in the d parameter
        u = studies.prepared_state(
            NL, studies.PatternId(4, 1, studies.UBAR, OFFSITE), 0.5, 1e-3, 10)
        cfg = ct.StepConfig(max_points=500, h_max=0.02,
                            stop_after_folds=1)
        br = ct.continue_branch(u, NL, 0.5, 1e-3, parameter="d", config=cfg,
                                direction=+1.0, p_bounds=(0.0, 0.5))
        folds = ct.detect_and_refine_folds(br, NL)
        assert folds and folds[0].refined
        assert folds[0].parameter == "d"
        assert 0.05 < folds[0].d < 0.09
        assert folds[0].mu == 0.5


class TestSwitchDirections:
    def test_seven_directions_at_eight_crossing_fold(self):
        fold = studies.find_right_fold(NL, 3, 1, 1e-3, n_d=7)
        dirs = studies.switch_directions(fold, NL, OFFSITE)
        labels = {lab for lab, _ in dirs}
        assert len(dirs) == 7
        assert {"sign1", "sign2", "sign3"} <= labels
        assert sum(lab.startswith("two_dim") for lab in labels) == 4
        for lab, psi in dirs:
            tag, norms = spectral.isotypic_classify(psi, OFFSITE)
            expect = lab.split("_p")[0] if lab.startswith("two_dim") else lab
            assert tag == expect
            assert abs(np.linalg.norm(psi.values) - 1) < 1e-9


@pytest.mark.slow
class TestAsymmetricFan:
    def test_seven_branches_reconnect_at_other_folds(self):
        d = 1e-3
        fold = studies.find_right_fold(NL, 3, 1, d, n_d=8)
        cfg = ct.StepConfig(max_points=6000, h_max=0.03,
                            refine_bands=((1 - 10 * d, 2.0,
                                           (2 * d) ** 0.75 / 3.0),
                                          (-1.0, 0.14, 0.005)))
        results = studies.asymmetric_fan(fold, NL, OFFSITE, config=cfg)
        seeded = [r for r in results if r[1] is not None]
        assert len(seeded) >= 7
        reconnected = [r for r in results if r[3] is not None]
        assert len(reconnected) >= 7
        # distinct branches: mid-branch states pairwise far apart
        mids = [r[2].points[len(r[2].points) // 2].u.values
                for r in reconnected]
        for i in range(len(mids)):
            for j in range(i + 1, len(mids)):
                assert np.linalg.norm(mids[i] - mids[j]) > 0.5
        # every reconnection happens away from the originating fold
        for _, _, _, rec in reconnected:
            assert abs(rec.mu - fold.mu) > 0.1


@pytest.mark.slow
class TestIsola:
    def test_closes_before_collision_and_merges_after(self):
        br = studies.trace_pattern_isola(NL, 4, 0.12, n_d=12)
        assert br.closed
        first, last = br.points[0], br.points[-1]
        gap = np.linalg.norm(np.concatenate(
            [first.u.values - last.u.values, [first.mu - last.mu]]))
        assert gap < 1e-9  # endpoints coincide
        br2 = studies.trace_pattern_isola(NL, 4, 0.2, n_d=12,
                                          max_points=3000)
        assert not br2.closed
