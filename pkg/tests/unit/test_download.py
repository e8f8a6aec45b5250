"""
Unit tests for the Coat archive download, with httpx mocked out.
"""

import io
import zipfile
from unittest.mock import MagicMock

import httpx
import pytest

from src.debiased_ranking.data.download import (
    DEFAULT_COAT_URL,
    coat_files_present,
    download_coat,
)

pytestmark = pytest.mark.unit

TRAIN = b"0 4 0\n1 0 5\n"
TEST = b"5 0 0\n0 0 3\n"


def _zip(members):
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:
        for name, data in members.items():
            archive.writestr(name, data)
    return buffer.getvalue()


def _response(content):
    response = MagicMock()
    response.content = content
    response.raise_for_status.return_value = None
    return response


@pytest.fixture
def mock_get(mocker):
    return mocker.patch("src.debiased_ranking.data.download.httpx.get")


class TestDownloadCoat:
    """Test download_coat."""

    def test_extracts_nested_members(self, mock_get, tmp_path):
        mock_get.return_value = _response(
            _zip({"coat/train.ascii": TRAIN, "coat/test.ascii": TEST, "coat/README": b"x"})
        )
        dest = download_coat(tmp_path / "coat")
        assert (dest / "train.ascii").read_bytes() == TRAIN
        assert (dest / "test.ascii").read_bytes() == TEST
        assert not (dest / "README").exists()
        assert coat_files_present(dest)

    def test_default_url_and_timeout(self, mock_get, tmp_path, monkeypatch):
        monkeypatch.delenv("RANKING_COAT_URL", raising=False)
        monkeypatch.delenv("RANKING_DOWNLOAD_TIMEOUT", raising=False)
        mock_get.return_value = _response(_zip({"train.ascii": TRAIN, "test.ascii": TEST}))
        download_coat(tmp_path)
        mock_get.assert_called_once_with(DEFAULT_COAT_URL, timeout=60.0, follow_redirects=True)

    def test_environment_overrides(self, mock_env_vars, mock_get, tmp_path):
        mock_get.return_value = _response(_zip({"train.ascii": TRAIN, "test.ascii": TEST}))
        download_coat(tmp_path)
        mock_get.assert_called_once_with(
            "https://test.example.org/coat.zip", timeout=5.0, follow_redirects=True
        )

    def test_skips_when_present(self, mock_get, tmp_path):
        (tmp_path / "train.ascii").write_bytes(TRAIN)
        (tmp_path / "test.ascii").write_bytes(TEST)
        download_coat(tmp_path)
        mock_get.assert_not_called()

    def test_force_downloads_again(self, mock_get, tmp_path):
        (tmp_path / "train.ascii").write_bytes(b"old")
        (tmp_path / "test.ascii").write_bytes(b"old")
        mock_get.return_value = _response(_zip({"train.ascii": TRAIN, "test.ascii": TEST}))
        download_coat(tmp_path, force=True)
        assert (tmp_path / "train.ascii").read_bytes() == TRAIN

    def test_http_error_propagates(self, mock_get, tmp_path):
        mock_get.side_effect = httpx.ConnectError("connection refused")
        with pytest.raises(httpx.HTTPError):
            download_coat(tmp_path / "coat")
        assert not coat_files_present(tmp_path / "coat")

    def test_not_a_zip(self, mock_get, tmp_path):
        mock_get.return_value = _response(b"<html>not found</html>")
        with pytest.raises(ValueError, match="not a zip file"):
            download_coat(tmp_path)

    def test_missing_member(self, mock_get, tmp_path):
        mock_get.return_value = _response(_zip({"train.ascii": TRAIN}))
        with pytest.raises(ValueError, match="lacks test.ascii"):
            download_coat(tmp_path)
