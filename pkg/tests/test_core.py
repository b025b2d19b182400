import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from encpipe.core import (ClipIndex, DelaySpec, MatrixFormatError, TimeSeriesMatrix, decode_emx,
                          encode_emx, load_clip_index, load_matrix, save_clip_index, save_matrix,
                          split_by_clips)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadMatrix:
    def test_csv_with_header(self, tmp_path):
        m = load_matrix(_write(tmp_path, "m.csv", "a,b\n1,2\n3,4"))
        assert m.shape == (2, 2)
        assert m.channel_names == ("a", "b")
        np.testing.assert_array_equal(m.data, [[1, 2], [3, 4]])

    def test_emx_column(self, tmp_path):
        p = tmp_path / "m.emx"
        import struct

        p.write_bytes(b"EMX1" + struct.pack("<QQ", 3, 1) + struct.pack("<3d", 1, 2, 3))
        m = load_matrix(p)
        assert m.shape == (3, 1)
        np.testing.assert_array_equal(m.data[:, 0], [1, 2, 3])

    def test_ragged_row(self, tmp_path):
        with pytest.raises(MatrixFormatError, match="ragged row at line 2"):
            load_matrix(_write(tmp_path, "r.csv", "1,2\n3"))

    def test_non_numeric_cell_is_located(self, tmp_path):
        with pytest.raises(MatrixFormatError, match="line 3, col 2"):
            load_matrix(_write(tmp_path, "n.csv", "a,b\n1,2\n3,x\n"))

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(MatrixFormatError, match="non-finite"):
            load_matrix(_write(tmp_path, "n.csv", "1,nan\n"))

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            load_matrix(_write(tmp_path, "m.txt", "1"))

    def test_emx_bad_magic_and_truncation(self):
        good = encode_emx(np.ones((2, 2)))
        with pytest.raises(MatrixFormatError, match="magic"):
            decode_emx(b"XXXX" + good[4:])
        with pytest.raises(MatrixFormatError, match="expected"):
            decode_emx(good[:-8])
        with pytest.raises(MatrixFormatError, match="header"):
            decode_emx(b"EMX")


class TestSaveMatrix:
    def test_emx_roundtrip_bit_identical(self, tmp_path, rng):
        m = TimeSeriesMatrix(rng.standard_normal((7, 3)))
        save_matrix(m, tmp_path / "m.emx")
        back = load_matrix(tmp_path / "m.emx")
        assert back.data.tobytes() == m.data.tobytes()

    def test_csv_single_cell(self, tmp_path):
        save_matrix(TimeSeriesMatrix([[0.5]]), tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text() == "c0\n0.5\n"

    def test_csv_roundtrip_exact(self, tmp_path, rng):
        x = rng.standard_normal((5, 4)) * 1e3
        save_matrix(x, tmp_path / "m.csv")
        np.testing.assert_array_equal(load_matrix(tmp_path / "m.csv").data, x)

    def test_unwritable_target(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            save_matrix(TimeSeriesMatrix([[1.0]]), blocker / "m.emx")

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_emx_roundtrip_property(self, x):
        assert decode_emx(encode_emx(x)).tobytes() == np.ascontiguousarray(x).tobytes()


class TestTypes:
    def test_matrix_is_read_only_copy(self):
        src = np.zeros((2, 2))
        m = TimeSeriesMatrix(src)
        src[0, 0] = 1
        assert m.data[0, 0] == 0
        with pytest.raises(ValueError):
            m.data[0, 0] = 2

    def test_matrix_rejects_non_finite(self):
        with pytest.raises(ValueError):
            TimeSeriesMatrix([[np.inf]])

    def test_channel_name_count(self):
        with pytest.raises(ValueError):
            TimeSeriesMatrix(np.zeros((2, 2)), ("a",))

    def test_delay_spec(self):
        assert DelaySpec.coerce([3, 4]).max_abs == 4
        with pytest.raises(ValueError):
            DelaySpec(())
        with pytest.raises(ValueError):
            DelaySpec((2, 1))

    def test_clip_contiguity(self):
        with pytest.raises(ValueError, match="contiguous"):
            ClipIndex(("A", "B", "A"))
        idx = ClipIndex.from_lengths([2, 3], ["A", "B"])
        assert idx.runs() == [("A", 0, 2), ("B", 2, 3)]

    def test_clip_index_file_roundtrip(self, tmp_path):
        idx = ClipIndex.from_lengths([2, 1, 4], ["x", "y", "z"])
        save_clip_index(idx, tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "clip_id,start_row,length"
        assert load_clip_index(tmp_path / "c.csv") == idx

    def test_clip_index_file_gap(self, tmp_path):
        p = _write(tmp_path, "c.csv", "clip_id,start_row,length\nA,0,2\nB,3,1\n")
        with pytest.raises(MatrixFormatError, match="tile"):
            load_clip_index(p)


class TestSplitByClips:
    idx = ClipIndex(tuple("AABBCC"))
    m = TimeSeriesMatrix(np.arange(6.0)[:, None])

    def test_last_clip_held_out(self):
        train, test = split_by_clips(self.m, self.idx, {"C"})
        np.testing.assert_array_equal(train.data[:, 0], [0, 1, 2, 3])
        np.testing.assert_array_equal(test.data[:, 0], [4, 5])

    def test_middle_clip_held_out(self):
        train, test = split_by_clips(self.m, self.idx, {"B"})
        np.testing.assert_array_equal(train.data[:, 0], [0, 1, 4, 5])
        np.testing.assert_array_equal(test.data[:, 0], [2, 3])

    def test_all_clips_held_out(self):
        with pytest.raises(ValueError, match="empty training partition"):
            split_by_clips(self.m, self.idx, {"A", "B", "C"})

    def test_unknown_clip(self):
        with pytest.raises(KeyError):
            split_by_clips(self.m, self.idx, {"D"})

    @given(st.lists(st.integers(1, 4), min_size=2, max_size=6), st.data())
    def test_partition_reconstructs_input(self, lengths, data):
        idx = ClipIndex.from_lengths(lengths)
        n = len(idx)
        m = TimeSeriesMatrix(np.arange(n, dtype=float)[:, None])
        held = data.draw(st.sets(st.sampled_from(idx.clips), min_size=1,
                                 max_size=len(idx.clips) - 1))
        train, test = split_by_clips(m, idx, held)
        is_test = np.array([c in held for c in idx.clip_ids])
        merged = np.empty(n)
        merged[~is_test] = train.data[:, 0]
        merged[is_test] = test.data[:, 0]
        np.testing.assert_array_equal(merged, m.data[:, 0])
        # whole clips only
        test_ids = {idx.clip_ids[int(v)] for v in test.data[:, 0]}
        assert test_ids == set(held)
