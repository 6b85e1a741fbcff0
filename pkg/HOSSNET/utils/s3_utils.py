import hashlib
import logging
import os
import tarfile
import tempfile
from pathlib import Path
from typing import List, Optional
from urllib.parse import urlparse

import boto3
import requests
from botocore.exceptions import BotoCoreError, ClientError

ARCHIVE_SUFFIXES = (".tar.gz", ".tgz", ".tar")


class S3FileDownloader:
    """Downloads dataset archives from S3 and verifies their checksums."""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        try:
            self.s3_client = boto3.client("s3")
        except Exception as e:
            self.logger.warning(f"Failed to initialize boto3 S3 client: {e}")
            self.s3_client = None

    def download_file_from_s3_url(
        self, s3_url: str, local_path: Optional[str] = None, suffix: str = ".tar.gz"
    ) -> Optional[str]:
        """
        Download a file from S3 using either boto3 or a plain HTTPS request.

        Parameters
        ----------
        s3_url : str
            S3 URL (s3:// or https://)
        local_path : Optional[str]
            Optional local file path. If None, a temporary file with ``suffix``
            is used.
        suffix : str
            Suffix of the temporary file

        Returns
        -------
        Optional[str]
            Path to downloaded file or None if failed
        """
        if not local_path:
            temp_file = tempfile.NamedTemporaryFile(delete=False, suffix=suffix)
            local_path = temp_file.name
            temp_file.close()
        try:
            if s3_url.startswith("s3://"):
                return self._download_with_boto3(s3_url, local_path)
            elif s3_url.startswith("https://"):
                return self._download_with_requests(s3_url, local_path)
            else:
                self.logger.error(f"Unsupported dataset URL format: {s3_url}")
                _remove(local_path)
                return None
        except Exception as e:
            self.logger.error(f"Failed to download file from {s3_url}: {e}")
            _remove(local_path)
            return None

    def _download_with_boto3(self, s3_url: str, local_path: str) -> Optional[str]:
        if not self.s3_client:
            self.logger.error("boto3 S3 client not available")
            _remove(local_path)
            return None

        parsed_url = urlparse(s3_url)
        bucket_name = parsed_url.netloc
        object_key = parsed_url.path.lstrip("/")
        try:
            self.logger.info(f"Downloading {bucket_name}/{object_key} to {local_path}")
            self.s3_client.download_file(bucket_name, object_key, local_path)
            return local_path
        except (BotoCoreError, ClientError) as e:
            self.logger.error(f"boto3 download failed: {e}")
            _remove(local_path)
            return None

    def _download_with_requests(self, s3_url: str, local_path: str) -> Optional[str]:
        """Stream a public or pre-signed HTTPS URL to disk."""
        try:
            self.logger.info(f"Downloading {s3_url} to {local_path}")
            response = requests.get(s3_url, stream=True, timeout=30)
            response.raise_for_status()
            with open(local_path, "wb") as f:
                for chunk in response.iter_content(chunk_size=1 << 20):
                    f.write(chunk)
            return local_path
        except requests.RequestException as e:
            self.logger.error(f"HTTP download failed: {e}")
            _remove(local_path)
            return None

    def calculate_file_checksum(self, file_path: str, algorithm: str = "sha256") -> Optional[str]:
        """
        Calculate the checksum of a file.

        Parameters
        ----------
        file_path : str
            Path to the file
        algorithm : str
            Hash algorithm to use (e.g., 'sha256', 'md5')

        Returns
        -------
        Optional[str]
            Hexadecimal checksum, or None if the file cannot be read
        """
        try:
            return update_hash(hashlib.new(algorithm), file_path).hexdigest()
        except Exception as e:
            self.logger.error(f"Failed to calculate checksum for {file_path}: {e}")
            return None

    def verify_checksum(
        self, file_path: str, expected_checksum: str, algorithm: str = "sha256"
    ) -> bool:
        actual_checksum = self.calculate_file_checksum(file_path, algorithm)
        if not actual_checksum:
            return False

        match = actual_checksum.lower() == expected_checksum.lower()
        if match:
            self.logger.info(f"Checksum verification passed for {file_path}")
        else:
            self.logger.error(
                f"Checksum verification failed for {file_path}. "
                f"Expected: {expected_checksum}, Actual: {actual_checksum}"
            )
        return match

    def download_and_extract_archive(
        self, s3_url: str, expected_checksum: str, out_dir: str, algorithm: str = "sha256"
    ) -> Optional[str]:
        """
        Download a tar archive, verify its checksum and unpack it into ``out_dir``.

        Returns
        -------
        Optional[str]
            ``out_dir`` on success, None on any failure
        """
        suffix = next((s for s in ARCHIVE_SUFFIXES if urlparse(s3_url).path.endswith(s)), ".tar")
        local_path = self.download_file_from_s3_url(s3_url, suffix=suffix)
        if not local_path:
            return None

        try:
            if not self.verify_checksum(local_path, expected_checksum, algorithm):
                return None
            members = extract_archive(local_path, out_dir)
            self.logger.info(f"Extracted {len(members)} files from {s3_url} into {out_dir}")
            return out_dir
        except (tarfile.TarError, ValueError, OSError) as e:
            self.logger.error(f"Failed to extract dataset archive {local_path}: {e}")
            return None
        finally:
            _remove(local_path)


def update_hash(hash_func, file_path: str, chunk_size: int = 8192):
    """Feed a file into ``hash_func`` in chunks and return it."""
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            hash_func.update(chunk)
    return hash_func


def extract_archive(archive_path: str, out_dir: str) -> List[str]:
    """Unpack a tar archive, refusing members that would land outside ``out_dir``."""
    root = Path(out_dir).resolve()
    root.mkdir(parents=True, exist_ok=True)
    with tarfile.open(archive_path, "r:*") as tar:
        members = tar.getmembers()
        for member in members:
            target = (root / member.name).resolve()
            if root != target and root not in target.parents:
                raise ValueError(f"Archive member {member.name} escapes {out_dir}")
            if member.issym() or member.islnk():
                raise ValueError(f"Archive member {member.name} is a link")
        tar.extractall(root)
    return [m.name for m in members if m.isfile()]


def fetch_dataset(url: str, checksum: str, out_dir: str) -> Optional[str]:
    """Download, verify and unpack a dataset archive; None on failure."""
    return S3FileDownloader().download_and_extract_archive(url, checksum, out_dir)


def _remove(path: Optional[str]):
    if path and os.path.exists(path):
        os.unlink(path)
