import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hlam import io
from hlam.model import ResponseData


class TestBinaryCsv:
    def test_header_and_na(self):
        t = io.parse_binary_csv("a,b\n1,NA\n0,1\n")
        assert t.header == ["a", "b"]
        np.testing.assert_array_equal(t.observed, [[True, False], [True, True]])

    def test_custom_token(self):
        t = io.parse_binary_csv("1,.\n0,1\n", na_token=".")
        assert not t.observed[0, 1]

    @pytest.mark.parametrize("text", ["", "\n\n", "a,b\n", "1,2\n", "1,0\n1\n"])
    def test_errors(self, text):
        with pytest.raises(io.InputError):
            io.parse_binary_csv(text)

    @given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 1)),
           st.data())
    def test_round_trip(self, values, data):
        observed = data.draw(arrays(np.bool_, values.shape))
        text = io.format_binary_csv(values, observed)
        t = io.parse_binary_csv(text)
        assert io.format_binary_csv(t.values, t.observed) == text

    def test_response_file_round_trip(self, tmp_path):
        R = np.array([[1, 0, 1], [0, 1, 1]], dtype=np.uint8)
        obs = np.array([[True, True, False], [True, True, True]])
        path = tmp_path / "r.csv"
        io.write_responses(ResponseData(R, obs, item_names=("x", "y", "z")), path)
        back = io.read_responses(path)
        assert back.item_names == ("x", "y", "z")
        io.write_responses(back, tmp_path / "r2.csv")
        assert (tmp_path / "r2.csv").read_text() == path.read_text()

    def test_uncovered_column(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,NA\n0,NA\n")
        with pytest.raises(io.InputError):
            io.read_responses(path)


class TestConfig:
    def test_parse(self):
        assert io.parse_config("# c\nK = 8\nmodel=and # trailing\n\n") == {"K": "8", "model": "and"}

    def test_bad_line(self):
        with pytest.raises(io.InputError):
            io.parse_config("K 8\n")

    def test_round_trip(self):
        text = "K=8\nM=3\n"
        assert io.format_config(io.parse_config(text)) == text


class TestReport:
    def _report(self):
        return io.RunReport(
            input={"N": 4, "J": 3, "missing_rate": 0.0}, config={"K": 2}, seed=5, model="and",
            Q_hat=np.array([[1, 0], [0, 1], [1, 1]], dtype=np.uint8), n_candidates=4, n_candidates_reduced=3,
            A_final=np.array([[0, 0], [1, 1]], dtype=np.uint8), p_hat=np.array([0.25, 0.75]),
            theta_plus=np.array([0.9, 0.8, 0.7]), theta_minus=np.array([0.1, 0.2, 0.3]),
            hierarchy_closure=[[1, 2]], hierarchy_reduction=[[1, 2]], indistinguishable=[],
            best_lambda=-0.4, per_lambda_table=[{"lambda": -0.4, "n_selected": 2}], converged=True,
            n_iter=7, timing={"total_seconds": 0.1}, diagnostics=["x"])

    def test_round_trip(self):
        r = self._report()
        text = r.dumps()
        back = io.RunReport.loads(text)
        assert back.dumps() == text
        np.testing.assert_array_equal(back.Q_hat, r.Q_hat)
        assert back.Q_hat.dtype == np.uint8

    def test_self_describing_shapes(self):
        d = self._report().to_dict()
        assert d["Q_hat"]["shape"] == [3, 2] and d["A_final"]["shape"] == [2, 2]

    def test_empty_matrix(self):
        m = io.matrix_from_json({"shape": [0, 3], "data": []}, np.uint8)
        assert m.shape == (0, 3)


class TestTraceAndRows:
    def test_trace_round_trip(self):
        recs = [{"iter": 1, "q_entry_changes": 4}, {"iter": 2, "q_entry_changes": 0}]
        text = io.format_trace(recs)
        assert io.parse_trace(text) == recs
        assert io.format_trace(io.parse_trace(text)) == text

    def test_rows_round_trip(self):
        rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": float("nan")}]
        text = io.format_rows(rows, ("a", "b"))
        assert io.format_rows(io.parse_rows(text), ("a", "b")) == text
