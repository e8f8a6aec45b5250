"""
Debiased Ranking - Coat Dataset Download.

Fetches the Coat shopping archive (an MNAR train matrix plus a missing-at-random
test matrix) and extracts the two rating matrices.
"""

import io
import logging
import os
import zipfile
from pathlib import Path
from typing import Optional, Union

import httpx

logger = logging.getLogger(__name__)

DEFAULT_COAT_URL = "https://www.cs.cornell.edu/~schnabts/mnar/coat.zip"
DEFAULT_DOWNLOAD_TIMEOUT = 60.0
COAT_FILES = ("train.ascii", "test.ascii")


def coat_files_present(directory: Union[str, Path]) -> bool:
    directory = Path(directory)
    return all((directory / name).is_file() for name in COAT_FILES)


def download_coat(
    dest: Union[str, Path],
    url: Optional[str] = None,
    timeout: Optional[float] = None,
    force: bool = False,
) -> Path:
    """
    Download and extract the Coat rating matrices into `dest`.

    Args:
        dest: Target directory; created if missing
        url: Archive URL (defaults to RANKING_COAT_URL or the public mirror)
        timeout: HTTP timeout in seconds (defaults to RANKING_DOWNLOAD_TIMEOUT)
        force: Re-download even if the matrices already exist

    Returns:
        The directory holding train.ascii and test.ascii
    """
    dest = Path(dest)
    if coat_files_present(dest) and not force:
        logger.info(f"Coat matrices already present in {dest}")
        return dest

    url = url or os.getenv("RANKING_COAT_URL", DEFAULT_COAT_URL)
    timeout = timeout or float(os.getenv("RANKING_DOWNLOAD_TIMEOUT", DEFAULT_DOWNLOAD_TIMEOUT))

    try:
        logger.info(f"Downloading Coat archive from {url}...")
        response = httpx.get(url, timeout=timeout, follow_redirects=True)
        response.raise_for_status()
    except httpx.HTTPError as e:
        logger.error(f"Failed to download Coat archive: {e}")
        raise

    dest.mkdir(parents=True, exist_ok=True)
    try:
        archive = zipfile.ZipFile(io.BytesIO(response.content))
    except zipfile.BadZipFile as e:
        raise ValueError(f"Archive from {url} is not a zip file") from e

    with archive:
        members = {Path(name).name: name for name in archive.namelist()}
        missing = [name for name in COAT_FILES if name not in members]
        if missing:
            raise ValueError(f"Archive from {url} lacks {', '.join(missing)}")
        for name in COAT_FILES:
            # Member paths are flattened so nothing is written outside dest.
            (dest / name).write_bytes(archive.read(members[name]))

    logger.info(f"Extracted {', '.join(COAT_FILES)} to {dest}")
    return dest
