"""
Security tests for the debiased ranking toolkit.

These tests feed hostile rating files, config values, archives and dataset
directories to the loaders and check that they are rejected or neutralised.
"""

import io
import zipfile
from unittest.mock import MagicMock

import numpy as np
import pandas as pd
import pytest

from src.debiased_ranking.config import RunConfig
from src.debiased_ranking.data.download import download_coat
from src.debiased_ranking.data.ratings import load_ratings
from src.debiased_ranking.data.splits import leave_one_out_split, load_split, save_split
from src.debiased_ranking.model import Hyperparams, load_params

pytestmark = pytest.mark.security


class TestRatingFileSecurity:
    """Test that hostile rating lines never become records."""

    def test_hostile_lines_are_counted_as_malformed(self, tmp_path):
        path = tmp_path / "ratings.tsv"
        lines = [
            "1\t10\t5",  # Control case
            "-1\t10\t5",  # Negative id
            "1.5\t10\t5",  # Fractional id
            "1\t10\tinf",  # Infinite rating
            "99999999999999999999\t1\t5",  # Id beyond exact float range
            "$(rm -rf /)\t1\t5",  # Command substitution
            "'; DROP TABLE ratings; --\t1\t5",  # SQL injection
            "<script>alert('xss')</script>\t1\t5",  # XSS
            "2\t11\t4",
        ]
        path.write_text("\n".join(lines) + "\n")
        raw = load_ratings(path)
        assert raw.users.tolist() == [1, 2]
        assert raw.items.tolist() == [10, 11]
        assert raw.malformed == 7

    def test_only_malformed_lines(self, tmp_path):
        path = tmp_path / "ratings.csv"
        path.write_text("a,b,c\nd,e,f\n")
        with pytest.raises(ValueError, match="zero valid records"):
            load_ratings(path, fmt="csv")

    def test_binary_garbage(self, tmp_path):
        path = tmp_path / "ratings.tsv"
        path.write_bytes(b"\xff\xfe\x80\x81" * 256)
        with pytest.raises(ValueError):
            load_ratings(path)

    def test_matrix_with_text(self, tmp_path):
        path = tmp_path / "train.ascii"
        path.write_text("1 0 2\n0 x 1\n")
        with pytest.raises(ValueError, match="Unreadable rating matrix"):
            load_ratings(path, fmt="ascii_matrix")

    def test_matrix_non_finite_cells_are_ignored(self, tmp_path):
        path = tmp_path / "train.ascii"
        path.write_text("1 inf 0\nnan 0 4\n")
        raw = load_ratings(path, fmt="ascii_matrix")
        assert list(zip(raw.users.tolist(), raw.items.tolist())) == [(0, 0), (1, 2)]

    def test_column_map_out_of_range(self, tmp_path):
        path = tmp_path / "ratings.tsv"
        path.write_text("1\t2\t3\n")
        with pytest.raises(ValueError, match="Column index out of range"):
            load_ratings(path, column_map=(0, 1, 7))


class TestConfigSecurity:
    """Test that config values are stored as data and validated."""

    @pytest.mark.parametrize("value", ["nan", "inf", "-inf", "1e999"])
    def test_non_finite_numbers(self, value):
        with pytest.raises(ValueError, match="must be finite"):
            RunConfig.from_mapping({"lr": value})

    def test_injected_loss_name_is_rejected(self):
        cfg = RunConfig.from_mapping({"loss": "$(whoami)"})
        assert cfg.loss == "$(whoami)"
        with pytest.raises(ValueError):
            cfg.hyperparams()

    def test_newline_injection_does_not_add_keys(self, tmp_path):
        cfg = RunConfig(dataset_dir="data\nalpha=6.0")
        reloaded = RunConfig.from_file(cfg.write_snapshot(tmp_path))
        assert reloaded.alpha == cfg.alpha
        assert reloaded.dataset_dir == cfg.dataset_dir

    def test_unknown_keys_in_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("PATH=/tmp/evil\nalpha=1.0\n")
        with pytest.raises(ValueError, match="Unknown config keys: PATH"):
            RunConfig.from_file(path)

    @pytest.mark.parametrize("alpha", [6.5, -1.0])
    def test_alpha_bounds(self, alpha):
        with pytest.raises(ValueError, match="alpha"):
            Hyperparams(alpha=alpha)


class TestArchiveSecurity:
    """Test that archive member paths cannot escape the destination."""

    def test_path_traversal_members_are_flattened(self, mocker, tmp_path):
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w") as archive:
            archive.writestr("../../evil/train.ascii", b"1 0\n")
            archive.writestr("/abs/test.ascii", b"0 1\n")
        response = MagicMock()
        response.content = buffer.getvalue()
        mocker.patch("src.debiased_ranking.data.download.httpx.get", return_value=response)

        dest = tmp_path / "a" / "b"
        download_coat(dest, url="https://test.example.org/coat.zip")
        assert (dest / "train.ascii").read_bytes() == b"1 0\n"
        assert (dest / "test.ascii").read_bytes() == b"0 1\n"
        assert not (tmp_path / "evil").exists()
        assert sorted(p.name for p in dest.iterdir()) == ["test.ascii", "train.ascii"]


class TestDatasetDirectorySecurity:
    """Test that tampered dataset directories and checkpoints are rejected."""

    @pytest.fixture
    def saved_split(self, small_dataset, tmp_path):
        split = leave_one_out_split(small_dataset, seed=0)
        save_split(split, tmp_path / "data")
        return split, tmp_path / "data"

    def test_held_out_item_leaking_into_train(self, saved_split):
        split, directory = saved_split
        train_item = int(split.train.user_items(0)[0])
        frame = pd.read_csv(directory / "test.csv")
        frame.loc[frame["user"] == 0, "item"] = train_item
        frame.to_csv(directory / "test.csv", index=False)
        with pytest.raises(ValueError, match="must not be train positives"):
            load_split(directory)

    @pytest.mark.parametrize("column, value", [("user", 10_000), ("item", -5)])
    def test_out_of_range_held_out_rows(self, saved_split, column, value):
        _, directory = saved_split
        frame = pd.read_csv(directory / "validation.csv")
        frame.loc[0, column] = value
        frame.to_csv(directory / "validation.csv", index=False)
        with pytest.raises(ValueError, match="outside"):
            load_split(directory)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_split(tmp_path)

    def test_pickled_checkpoint_is_refused(self, tmp_path):
        path = tmp_path / "checkpoint.npz"
        with open(path, "wb") as handle:
            np.save(handle, np.array([{"payload": "x"}], dtype=object), allow_pickle=True)
        with pytest.raises(ValueError, match="Unreadable checkpoint"):
            load_params(path)

    def test_checkpoint_without_factors(self, tmp_path):
        path = tmp_path / "checkpoint.npz"
        np.savez(path, weights=np.zeros(3))
        with pytest.raises(ValueError, match="Unreadable checkpoint"):
            load_params(path)
