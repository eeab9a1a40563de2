import math

import numpy as np
import pytest
from scipy import stats

from chlab.errors import DivisibilityError
from chlab.noise import SheetIncrements, coarsen, coarsen_to, dump, generate, load, to_beta


class TestGenerate:
    """Tests for sheet generation."""

    def test_same_key_reproduces(self):
        """Should give identical arrays for the same key."""
        a = generate(7, 3, 16, 8, 0.5)
        b = generate(7, 3, 16, 8, 0.5)
        assert a.same_values(b)
        assert a.dW.shape == (16, 8)

    def test_different_sample_index_differs(self):
        a = generate(7, 3, 16, 8, 0.5)
        b = generate(7, 4, 16, 8, 0.5)
        assert not np.array_equal(a.dW, b.dW)

    def test_moments(self):
        """Should give centred cells with variance (T/m)(pi/n) over 1e5 cells."""
        sheet = generate(2024, 0, 500, 200, 0.1)
        variance = 0.1 / 500 * math.pi / 200
        values = sheet.dW.ravel()
        assert abs(values.mean()) <= 4 * math.sqrt(variance) / math.sqrt(values.size)
        assert values.var() == pytest.approx(variance, rel=0.05)
        assert sheet.cell_variance == pytest.approx(variance)

    def test_independence_across_samples(self):
        """Should give uncorrelated samples."""
        a = generate(11, 0, 100, 100, 1.0).dW.ravel()
        b = generate(11, 1, 100, 100, 1.0).dW.ravel()
        assert abs(np.corrcoef(a, b)[0, 1]) <= 0.05

    @pytest.mark.parametrize("m, n, T", [(0, 4, 1.0), (4, 0, 1.0), (4, 4, 0.0), (4, 4, -1.0)])
    def test_rejects_bad_sizes(self, m, n, T):
        with pytest.raises(ValueError):
            generate(0, 0, m, n, T)

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            generate(-1, 0, 4, 4, 1.0)

    def test_sheet_is_read_only(self):
        sheet = generate(0, 0, 4, 4, 1.0)
        with pytest.raises(ValueError):
            sheet.dW[0, 0] = 1.0


class TestCoarsen:
    """Tests for aggregation of cells."""

    def test_identity_factors(self):
        """Should return the very same object for factors (1, 1)."""
        sheet = generate(1, 0, 8, 8, 1.0)
        assert coarsen(sheet, 1, 1) is sheet

    def test_two_by_two_block(self):
        """Should sum the four cells of a 2x2 block."""
        sheet = SheetIncrements(np.array([[1.0, 2.0], [3.0, 4.0]]), 1.0)
        coarse = coarsen(sheet, 2, 2)
        assert coarse.dW.shape == (1, 1)
        assert coarse.dW[0, 0] == 10.0

    def test_total_is_preserved(self):
        sheet = generate(5, 2, 64, 32, 0.25)
        coarse = coarsen(sheet, 8, 4)
        assert coarse.checksum() == pytest.approx(sheet.checksum(), abs=1e-12)
        assert coarse.seed == 5 and coarse.sample_index == 2

    def test_transitive(self):
        """Should commute with composition of factors."""
        sheet = generate(5, 2, 64, 32, 0.25)
        twice = coarsen(coarsen(sheet, 2, 4), 4, 2)
        once = coarsen(sheet, 8, 8)
        np.testing.assert_allclose(twice.dW, once.dW, rtol=0, atol=1e-14)

    def test_non_divisible(self):
        sheet = generate(0, 0, 12, 8, 1.0)
        with pytest.raises(DivisibilityError):
            coarsen(sheet, 5, 1)
        with pytest.raises(DivisibilityError):
            coarsen(sheet, 1, 3)
        with pytest.raises(DivisibilityError):
            coarsen_to(sheet, 12, 3)

    def test_coarsen_to_level(self):
        sheet = generate(0, 0, 12, 8, 1.0)
        assert coarsen_to(sheet, 3, 2).dW.shape == (3, 2)

    def test_coarsened_law_matches_direct_generation(self):
        """Should match the law of directly generated coarse cells (variance and KS)."""
        fine = generate(99, 0, 400, 400, 1.0)
        coarse = coarsen(fine, 4, 4).dW.ravel()
        direct = generate(99, 1, 100, 100, 1.0).dW.ravel()
        variance = 1.0 / 100 * math.pi / 100
        assert coarse.var() == pytest.approx(variance, rel=0.05)
        assert stats.ks_2samp(coarse, direct).pvalue > 0.01


class TestToBeta:
    """Tests for the scaled cell processes."""

    def test_zero_cell(self):
        sheet = SheetIncrements(np.zeros((2, 4)), 1.0)
        assert np.all(to_beta(sheet) == 0.0)

    def test_variance(self):
        """Should give variance T/m."""
        sheet = generate(3, 0, 400, 250, 0.2)
        assert to_beta(sheet).var() == pytest.approx(0.2 / 400, rel=0.05)

    def test_scaling_with_n(self):
        """Should multiply the factor by sqrt(2) when n doubles."""
        ones4 = SheetIncrements(np.ones((1, 4)), 1.0)
        ones8 = SheetIncrements(np.ones((1, 8)), 1.0)
        assert to_beta(ones8)[0, 0] / to_beta(ones4)[0, 0] == pytest.approx(math.sqrt(2))


class TestDumpLoad:
    """Tests for the binary layout."""

    def test_file_layout(self, tmp_path):
        """Should write a 40-byte header followed by 8 bytes per cell."""
        sheet = generate(12, 5, 3, 4, 0.5)
        path = tmp_path / "sheet.bin"
        dump(sheet, path)
        raw = path.read_bytes()
        assert len(raw) == 40 + 8 * 12
        assert int.from_bytes(raw[:8], "little") == 3
        assert int.from_bytes(raw[8:16], "little") == 4
        assert np.frombuffer(raw[40:48], dtype="<f8")[0] == sheet.dW[0, 0]

    def test_load_restores_everything(self, tmp_path):
        sheet = generate(2 ** 63 + 5, 9, 6, 5, 0.3)
        path = tmp_path / "sheet.bin"
        dump(sheet, path)
        loaded = load(path)
        assert loaded.same_values(sheet)
        assert (loaded.seed, loaded.sample_index, loaded.T) == (2 ** 63 + 5, 9, 0.3)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "short.bin"
        dump(generate(0, 0, 2, 2, 1.0), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load(path)
