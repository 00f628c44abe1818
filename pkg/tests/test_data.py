import numpy as np
import pytest

from cstekit.data import (
    BinaryDataset,
    BinarySchema,
    DataValidationError,
    NormalizationReport,
    SurvivalDataset,
    SurvivalSchema,
    encode_treatment,
    normalize,
    parse_csv,
    serialize_csv,
    simulate_binary_dgp,
    simulate_survival_dgp,
)

BINARY_CSV = "outcome,treat,age\n1,0,34\n0,1,51\n1,1,47\n"


class TestParseCsv:
    def test_minimal_binary_file(self):
        ds = parse_csv(BINARY_CSV, BinarySchema("outcome", "treat", ("age",)))
        assert isinstance(ds, BinaryDataset)
        assert ds.n == 3 and ds.p == 1
        assert ds.row_ids == ("1", "2", "3")
        np.testing.assert_array_equal(ds.y, [1, 0, 1])

    def test_missing_cell_addressed(self):
        text = "outcome,treat,age\n1,0,34\n0,1,\n1,1,47\n"
        with pytest.raises(DataValidationError, match="row 2, column 'age'") as err:
            parse_csv(text, BinarySchema("outcome", "treat", ("age",)))
        assert err.value.row == 2 and err.value.column == "age"

    def test_trial_shaped_file_selects_schema_covariates(self):
        cols = "outcome,treat,age,wtkg,cd40,cd420,cd80,cd820"
        rows = [
            "0,1,34,70.0,400,350,900,850",
            "1,0,29,61.5,300,320,880,860",
            "0,0,41,80.2,420,410,910,905",
            "1,1,50,75.1,380,300,940,890",
        ]
        text = cols + "\n" + "\n".join(rows) + "\n"
        schema = BinarySchema(
            "outcome", "treat", ("age", "wtkg", "cd40", "cd420", "cd80", "cd820")
        )
        ds = parse_csv(text, schema)
        assert ds.p == 6
        assert ds.column_names == schema.covariates

    def test_non_binary_outcome_rejected(self):
        text = "outcome,treat,age\n2,0,34\n0,1,51\n"
        with pytest.raises(DataValidationError, match="0 or 1"):
            parse_csv(text, BinarySchema("outcome", "treat", ("age",)))

    def test_unknown_column_rejected(self):
        with pytest.raises(DataValidationError, match="'height'"):
            parse_csv(BINARY_CSV, BinarySchema("outcome", "treat", ("height",)))

    def test_crlf_accepted(self):
        ds = parse_csv(BINARY_CSV.replace("\n", "\r\n"), BinarySchema("outcome", "treat", ("age",)))
        assert ds.n == 3

    def test_id_column(self):
        text = "pid,outcome,treat,age\na17,1,0,34\nb22,0,1,51\nc3,1,1,40\n"
        ds = parse_csv(text, BinarySchema("outcome", "treat", ("age",), id="pid"))
        assert ds.row_ids == ("a17", "b22", "c3")

    def test_survival_with_dummies(self):
        text = "time,status,X,Treat1,Treat2\n1.5,1,0.2,1,0\n2.0,0,0.4,0,1\n0.7,1,0.9,0,0\n3.1,1,0.5,0,1\n"
        ds = parse_csv(text, SurvivalSchema("time", "status", "X", treatments=("Treat1", "Treat2")))
        assert isinstance(ds, SurvivalDataset)
        assert ds.n_arms == 2
        assert ds.treatment_labels == ("Treat1", "Treat2")

    def test_survival_with_categorical_treatment(self):
        text = "time,status,X,Treat\n1.5,1,0.2,1\n2.0,1,0.4,2\n0.7,1,0.9,0\n3.1,0,0.5,2\n"
        ds = parse_csv(text, SurvivalSchema("time", "status", "X", treatment="Treat"))
        assert ds.n_arms == 2
        assert ds.treatment_labels == ("1", "2")
        np.testing.assert_array_equal(ds.z[2], [0, 0])  # lowest level is the reference

    def test_survival_schema_against_binary_file(self):
        with pytest.raises(DataValidationError):
            parse_csv(BINARY_CSV, SurvivalSchema("time", "status", "X", treatments=("Treat1",)))

    def test_nonpositive_time_rejected(self):
        text = "time,status,X,T1\n0.0,1,0.2,1\n2.0,1,0.4,0\n"
        with pytest.raises(DataValidationError, match="positive"):
            parse_csv(text, SurvivalSchema("time", "status", "X", treatments=("T1",)))

    def test_roundtrip_binary(self):
        schema = BinarySchema("outcome", "treatment", ("age", "bmi"), id="id")
        text = "outcome,treatment,age,bmi,id\n1,0,34.5,22.1,s1\n0,1,51.0,27.9,s2\n1,1,40.25,24.0,s3\n"
        ds = parse_csv(text, schema)
        again = parse_csv(serialize_csv(ds, id_col="id"), BinarySchema("outcome", "treatment", ("age", "bmi"), id="id"))
        assert ds == again

    def test_roundtrip_survival(self):
        text = "time,status,X,Treat1,Treat2\n1.5,1,0.2,1,0\n2.0,0,0.4,0,1\n0.7,1,0.9,0,0\n3.125,1,0.5,0,1\n"
        schema = SurvivalSchema("time", "status", "X", treatments=("Treat1", "Treat2"))
        ds = parse_csv(text, schema)
        again = parse_csv(serialize_csv(ds), schema)
        assert ds == again


class TestDatasetInvariants:
    def test_single_outcome_level_rejected(self):
        with pytest.raises(DataValidationError, match="both 0 and 1"):
            BinaryDataset(
                y=np.ones(4, dtype=int),
                z=np.array([0, 1, 0, 1]),
                x=np.arange(4.0).reshape(4, 1),
                column_names=("a",),
                row_ids=("1", "2", "3", "4"),
            )

    def test_multiple_arms_per_row_rejected(self):
        with pytest.raises(DataValidationError, match="at most one"):
            SurvivalDataset(
                time=np.array([1.0, 2.0]),
                delta=np.array([1, 1]),
                x=np.array([0.1, 0.2]),
                z=np.array([[1, 1], [0, 0]]),
                treatment_labels=("A", "B"),
            )

    def test_arm_without_events_rejected(self):
        with pytest.raises(DataValidationError, match="no observed events"):
            SurvivalDataset(
                time=np.array([1.0, 2.0, 3.0]),
                delta=np.array([1, 0, 1]),
                x=np.array([0.1, 0.2, 0.3]),
                z=np.array([[0], [1], [0]]),
                treatment_labels=("A",),
            )


class TestNormalize:
    def test_centered_unit_column(self):
        xn, report = normalize(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(xn[:, 0], [-1.0, 0.0, 1.0], atol=1e-12)
        assert report.means == (2.0,)
        assert report.sds == (1.0,)

    def test_idempotent_on_standardized_input(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((40, 3))
        x1, _ = normalize(x)
        x2, _ = normalize(x1)
        np.testing.assert_allclose(x1, x2, atol=1e-10)

    def test_constant_column_rejected(self):
        with pytest.raises(DataValidationError, match="'wtkg'"):
            normalize(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]), column_names=("wtkg", "age"))

    def test_report_applies_to_new_data(self):
        x = np.array([[1.0], [2.0], [3.0]])
        _, report = normalize(x)
        np.testing.assert_allclose(report.apply(np.array([[4.0]])), [[2.0]])
        with pytest.raises(DataValidationError, match="columns"):
            report.apply(np.ones((2, 3)))


class TestEncodeTreatment:
    def test_three_levels_reference_zero(self):
        z, labels = encode_treatment([0, 1, 2, 0, 2], reference=0)
        assert labels == ("1", "2")
        np.testing.assert_array_equal(z[0], [0, 0])
        np.testing.assert_array_equal(z[1], [1, 0])
        np.testing.assert_array_equal(z[2], [0, 1])

    def test_binary_passthrough(self):
        z, labels = encode_treatment([0, 1, 1, 0], reference=0)
        assert z.shape == (4, 1)
        np.testing.assert_array_equal(z[:, 0], [0, 1, 1, 0])

    def test_four_levels_three_columns(self):
        z, labels = encode_treatment(list("abcd"), reference="a")
        assert z.shape == (4, 3)
        assert labels == ("b", "c", "d")

    def test_rows_have_at_most_one_indicator(self):
        rng = np.random.default_rng(5)
        raw = rng.integers(0, 5, 200)
        z, _ = encode_treatment(raw, reference=2)
        assert np.all(z.sum(axis=1) <= 1)

    def test_single_level_rejected(self):
        with pytest.raises(DataValidationError, match="two levels"):
            encode_treatment([1, 1, 1], reference=1)

    def test_unknown_reference_rejected(self):
        with pytest.raises(DataValidationError, match="reference"):
            encode_treatment([0, 1], reference=9)


class TestBinaryGenerator:
    def test_dimensions_and_levels(self):
        ds, truth = simulate_binary_dgp(2000, 20, seed=4)
        assert ds.x.shape == (2000, 20)
        assert set(np.unique(ds.y)) == {0, 1}
        assert set(np.unique(ds.z)) == {0, 1}

    def test_true_curve_roots(self):
        _, truth = simulate_binary_dgp(100, 3, seed=1)
        assert truth(0.0) == 0.0
        assert truth(1.0) == 0.0

    def test_treatment_frequency(self):
        ds, _ = simulate_binary_dgp(2000, 5, seed=9)
        assert abs(ds.z.mean() - 0.5) < 0.03

    def test_truncation_respected(self):
        ds, _ = simulate_binary_dgp(500, 4, seed=2)
        assert np.all(np.abs(ds.x) < 2.0)

    def test_seed_determinism(self):
        a, _ = simulate_binary_dgp(200, 3, seed=11)
        b, _ = simulate_binary_dgp(200, 3, seed=11)
        c, _ = simulate_binary_dgp(200, 3, seed=12)
        assert a == b
        assert a != c

    def test_small_p_rejected(self):
        with pytest.raises(ValueError, match="p must be"):
            simulate_binary_dgp(100, 2, seed=0)


class TestSurvivalGenerator:
    def test_arms_mutually_exclusive(self):
        ds, _ = simulate_survival_dgp(100, seed=3)
        assert ds.n_arms == 2
        assert np.all(ds.z.sum(axis=1) <= 1)

    def test_true_beta_values(self):
        _, truth = simulate_survival_dgp(50, seed=1)
        vals = truth(0.5)
        assert vals[0] == pytest.approx(-1.0 - np.exp(0.5))
        assert vals[1] == pytest.approx(-np.exp(0.5))

    def test_censoring_fraction(self):
        ds, _ = simulate_survival_dgp(5000, seed=8)
        frac = 1.0 - ds.delta.mean()
        assert 0.15 <= frac <= 0.25

    def test_seed_determinism(self):
        a, _ = simulate_survival_dgp(100, seed=21)
        b, _ = simulate_survival_dgp(100, seed=21)
        c, _ = simulate_survival_dgp(100, seed=22)
        assert a == b
        assert a != c

    def test_small_n_rejected(self):
        with pytest.raises(ValueError, match="n must be"):
            simulate_survival_dgp(10, seed=0)
