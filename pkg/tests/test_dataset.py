import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obsmatch import errors
from obsmatch.dataset import (BINARY, CONTINUOUS, INDICATOR, expand_terms,
                              impute_with_indicators, load_csv, save_csv)

from conftest import make_frame


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_six_row_file(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "T,x\n1,0.1\n1,0.2\n0,0.3\n0,0.4\n0,0.5\n0,0.6\n")
        frame = load_csv(f, "T", None, ["x"])
        assert frame.n_treated == 2
        assert frame.n_control == 4
        assert frame.covariates.kind("x") == CONTINUOUS

    def test_nonbinary_treatment(self, tmp_path):
        f = write(tmp_path / "d.csv", "T,x\n1,0.1\n2,0.2\n0,0.3\n")
        with pytest.raises(errors.NonBinaryTreatment):
            load_csv(f, "T", None, ["x"])

    def test_single_empty_cell_sets_one_mask_entry(self, tmp_path):
        f = write(tmp_path / "d.csv", "T,x,z\n1,,1\n0,0.5,0\n0,0.25,1\n")
        frame = load_csv(f, "T", None, ["x", "z"])
        assert frame.covariates.missing_mask.sum() == 1
        assert frame.covariates.missing_mask[0, 0]

    def test_missing_column(self, tmp_path):
        f = write(tmp_path / "d.csv", "T,x\n1,0.1\n0,0.3\n")
        with pytest.raises(errors.MissingColumn):
            load_csv(f, "T", None, ["nope"])

    def test_unparseable_cell_carries_location(self, tmp_path):
        f = write(tmp_path / "d.csv", "T,x\n1,0.1\n0,abc\n")
        with pytest.raises(errors.UnparseableCell) as exc:
            load_csv(f, "T", None, ["x"])
        assert exc.value.row == 1
        assert exc.value.col == "x"

    def test_empty_treatment_arm(self, tmp_path):
        f = write(tmp_path / "d.csv", "T,x\n1,0.1\n1,0.3\n")
        with pytest.raises(errors.EmptyTreatmentArm):
            load_csv(f, "T", None, ["x"])

    def test_binary_kind_inferred(self, tmp_path):
        f = write(tmp_path / "d.csv", "T,b\n1,0\n0,1\n0,1\n")
        frame = load_csv(f, "T", None, ["b"])
        assert frame.covariates.kind("b") == BINARY

    def test_id_column_picked_up(self, tmp_path):
        f = write(tmp_path / "d.csv", "id,T,x\na,1,0.1\nb,0,0.3\n")
        frame = load_csv(f, "T", None, ["x"])
        assert frame.unit_ids == ["a", "b"]

    def test_round_trip_is_fixed_point(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "id,T,Y,x,z\nu1,1,3.25,0.1,\nu2,0,1.5,,1\nu3,0,-2.0,0.3,0\n")
        frame1 = load_csv(f, "T", "Y", ["x", "z"])
        save_csv(frame1, tmp_path / "w.csv", treatment_col="T", outcome_col="Y")
        frame2 = load_csv(tmp_path / "w.csv", "T", "Y", ["x", "z"])
        save_csv(frame2, tmp_path / "w2.csv", treatment_col="T", outcome_col="Y")
        assert (tmp_path / "w.csv").read_bytes() == (tmp_path / "w2.csv").read_bytes()
        np.testing.assert_array_equal(frame1.covariates.missing_mask,
                                      frame2.covariates.missing_mask)
        obs = ~frame1.covariates.missing_mask
        np.testing.assert_array_equal(frame1.covariates.values[obs],
                                      frame2.covariates.values[obs])
        np.testing.assert_array_equal(frame1.treatment, frame2.treatment)
        np.testing.assert_array_equal(frame1.outcome, frame2.outcome)
        assert frame1.unit_ids == frame2.unit_ids


class TestImpute:
    def frame_with_missing(self):
        from obsmatch.dataset import Column, CovariateTable, StudyFrame
        table = CovariateTable(columns=[Column("x0", CONTINUOUS)],
                               values=np.array([[1.0], [2.0], [np.nan]]),
                               missing_mask=np.array([[False], [False], [True]]))
        return StudyFrame(covariates=table, treatment=np.array([1, 0, 0]))

    def test_observed_mean_and_indicator(self):
        frame = impute_with_indicators(self.frame_with_missing())
        np.testing.assert_allclose(frame.column("x0"), [1.0, 2.0, 1.5])
        np.testing.assert_array_equal(frame.column("x0_missing"), [0, 0, 1])
        assert frame.covariates.kind("x0_missing") == INDICATOR
        assert not frame.covariates.missing_mask.any()
        kinds = [t.kind for t in frame.covariates.derived_terms]
        assert kinds == ["missing_indicator"]

    def test_fully_observed_identity(self):
        frame = make_frame([[1.0], [2.0]], [1, 0])
        assert impute_with_indicators(frame) is frame

    def test_all_missing_column(self):
        from obsmatch.dataset import Column, CovariateTable, StudyFrame
        table = CovariateTable(columns=[Column("x", CONTINUOUS)],
                               values=np.array([[np.nan], [np.nan]]),
                               missing_mask=np.array([[True], [True]]))
        frame = StudyFrame(covariates=table, treatment=np.array([1, 0]))
        with pytest.raises(errors.AllMissingColumn):
            impute_with_indicators(frame)

    def test_idempotent(self):
        once = impute_with_indicators(self.frame_with_missing())
        twice = impute_with_indicators(once)
        assert twice is once


class TestExpandTerms:
    def test_square(self):
        frame = make_frame([[2.0], [3.0]], [1, 0])
        out = expand_terms(frame, squares=["x0"])
        np.testing.assert_allclose(out.column("x0^2"), [4.0, 9.0])
        assert out.covariates.kind("x0^2") == CONTINUOUS

    def test_interaction(self):
        frame = make_frame([[1.0, 5.0], [0.0, 7.0]], [1, 0])
        out = expand_terms(frame, interactions=[("x0", "x1")])
        np.testing.assert_allclose(out.column("x0:x1"), [5.0, 0.0])

    def test_empty_request_identity(self):
        frame = make_frame([[1.0], [2.0]], [1, 0])
        assert expand_terms(frame) is frame

    def test_unknown_column(self):
        frame = make_frame([[1.0], [2.0]], [1, 0])
        with pytest.raises(errors.UnknownColumn):
            expand_terms(frame, squares=["ghost"])

    def test_square_of_binary_flagged(self):
        frame = make_frame([[1.0], [0.0]], [1, 0], kinds=[BINARY])
        out = expand_terms(frame, squares=["x0"])
        term = out.covariates.derived_terms[-1]
        assert term.note == "square_of_binary"
        np.testing.assert_allclose(out.column("x0^2"), out.column("x0"))

    @given(n_sq=st.integers(0, 2), n_int=st.integers(0, 2))
    def test_appends_exactly_requested_columns(self, n_sq, n_int):
        frame = make_frame([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]],
                           [1, 0, 0])
        squares = ["x0", "x1"][:n_sq]
        pairs = [("x0", "x1"), ("x1", "x2")][:n_int]
        out = expand_terms(frame, squares=squares, interactions=pairs)
        assert out.n_units == frame.n_units
        assert len(out.covariates.columns) == 3 + n_sq + n_int
