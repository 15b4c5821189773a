"""Feature file format: parsing, validation, and the dataset container."""
import numpy as np
import pytest

from nirvis.features import (
    FeatureDataset,
    FeatureFormatError,
    load_features,
    save_features,
)


def write(tmp_path, text, name="feats.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_basic_parse(self, tmp_path):
        path = write(
            tmp_path,
            "alice,NIR,1.0,0.0\n"
            "alice,VIS,0.5,0.5\n"
            "# a comment line\n"
            "\n"
            "bob,NIR,-1.0,2.0\n",
        )
        ds = load_features(path)
        assert ds.n == 3
        assert ds.dim == 2
        assert list(ds.ids) == ["alice", "alice", "bob"]
        assert list(ds.modalities) == ["NIR", "VIS", "NIR"]
        np.testing.assert_allclose(ds.features[2], [-1.0, 2.0])

    def test_whitespace_tolerated(self, tmp_path):
        ds = load_features(write(tmp_path, " alice , NIR , 1.0 , 2.0 \n"))
        assert list(ds.ids) == ["alice"]
        np.testing.assert_allclose(ds.features[0], [1.0, 2.0])

    def test_too_few_fields_reports_line(self, tmp_path):
        path = write(tmp_path, "alice,NIR,1.0\nbob,VIS\n")
        with pytest.raises(FeatureFormatError, match=":2:"):
            load_features(path)

    def test_bad_modality_reports_line(self, tmp_path):
        path = write(tmp_path, "alice,NIR,1.0\nbob,IR,1.0\n")
        with pytest.raises(FeatureFormatError, match=":2:.*modality"):
            load_features(path)

    def test_bad_float_reports_line(self, tmp_path):
        path = write(tmp_path, "alice,NIR,1.0\nbob,VIS,zap\n")
        with pytest.raises(FeatureFormatError, match=":2:"):
            load_features(path)

    def test_dim_mismatch_reports_line(self, tmp_path):
        path = write(tmp_path, "alice,NIR,1.0,2.0\nbob,VIS,1.0\n")
        with pytest.raises(FeatureFormatError, match=":2:.*expected 2"):
            load_features(path)

    def test_empty_file_rejected(self, tmp_path):
        path = write(tmp_path, "# nothing but comments\n")
        with pytest.raises(FeatureFormatError, match="no feature rows"):
            load_features(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(FeatureFormatError, match="no such file"):
            load_features(tmp_path / "absent.csv")


class TestRoundTrip:
    def test_save_then_load_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = FeatureDataset(
            np.array(["a", "a", "b", "b"]),
            np.array(["NIR", "VIS", "NIR", "VIS"]),
            rng.normal(size=(4, 6)),
        )
        path = tmp_path / "out.csv"
        save_features(ds, path)
        back = load_features(path)
        assert list(back.ids) == list(ds.ids)
        assert list(back.modalities) == list(ds.modalities)
        # repr() round-trips float64 exactly
        assert np.array_equal(back.features, ds.features)


class TestDataset:
    def make(self):
        return FeatureDataset(
            np.array(["b", "a", "b", "a"]),
            np.array(["NIR", "NIR", "VIS", "VIS"]),
            np.arange(8.0).reshape(4, 2),
        )

    def test_identities_in_first_appearance_order(self):
        assert self.make().identities() == ["b", "a"]

    def test_select_by_identity_and_modality(self):
        ds = self.make()
        np.testing.assert_allclose(ds.select("b"), [[0.0, 1.0], [4.0, 5.0]])
        np.testing.assert_allclose(ds.select("b", "VIS"), [[4.0, 5.0]])
        assert ds.select("missing").shape == (0, 2)

    def test_subset_identities(self):
        ds = self.make()
        sub = ds.subset_identities({"a"})
        assert set(sub.ids) == {"a"}
        assert sub.n == 2

    def test_arrays_frozen(self):
        ds = self.make()
        with pytest.raises(ValueError):
            ds.features[0, 0] = 99.0

    def test_validation(self):
        with pytest.raises(FeatureFormatError, match="2-D"):
            FeatureDataset(np.array(["a"]), np.array(["NIR"]), np.zeros(3))
        with pytest.raises(FeatureFormatError, match="disagree"):
            FeatureDataset(np.array(["a"]), np.array(["NIR", "VIS"]), np.zeros((2, 3)))
        with pytest.raises(FeatureFormatError, match="modality"):
            FeatureDataset(np.array(["a"]), np.array(["XYZ"]), np.zeros((1, 3)))
        with pytest.raises(FeatureFormatError, match="non-finite"):
            FeatureDataset(
                np.array(["a"]), np.array(["NIR"]), np.array([[np.nan, 0.0]])
            )
