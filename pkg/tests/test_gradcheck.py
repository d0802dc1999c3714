from softlog.gradcheck import relative_error, run_gradcheck

import numpy as np


class TestRelativeError:
    def test_zero_for_equal(self):
        assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_scales_by_magnitude(self):
        assert relative_error(np.array([100.0]), np.array([100.01])) < 2e-4
        assert relative_error(np.array([1e-9]), np.array([2e-9])) < 1e-2


class TestRunGradcheck:
    def test_small_run_within_tolerance(self):
        report = run_gradcheck(seed=3, n_tapes=12)
        assert report.tapes_checked == 12
        assert report.max_rel_error <= 1e-4
