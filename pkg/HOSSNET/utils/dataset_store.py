import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Optional, Union

import numpy as np

from HOSSNET.hossnet.core import ChannelKind, NormStats, SampleSequence

from .s3_utils import update_hash

DATA_SUFFIX = ".f32"
SIDECAR_SUFFIX = ".json"
_DTYPE = np.dtype("<f4")


class DatasetStore:
    """
    On-disk container of sample sequences.

    Every sequence is stored as ``<root>/<channel_kind>/<sample_id>.f32``, a
    row-major H×W×C×T little-endian float32 array written one image row at a
    time, next to a ``<sample_id>.json`` sidecar holding shape, channel kind,
    metadata and optional normalisation statistics.
    """

    def __init__(self, root: str):
        """
        Initialize DatasetStore.

        Parameters
        ----------
        root : str
            Dataset root directory; created when missing
        """
        self.root = os.path.abspath(root)
        os.makedirs(self.root, mode=0o755, exist_ok=True)

    def _paths(self, channel_kind: Union[ChannelKind, str], sample_id: str):
        directory = os.path.join(self.root, ChannelKind(channel_kind).value)
        return (
            os.path.join(directory, f"{sample_id}{DATA_SUFFIX}"),
            os.path.join(directory, f"{sample_id}{SIDECAR_SUFFIX}"),
        )

    def save_sequence(
        self, seq: SampleSequence, norm_stats: Optional[NormStats] = None
    ) -> Dict[str, Any]:
        """
        Write one sequence and its sidecar.

        Returns
        -------
        dict
            Result with success status and the written paths, or an error message
        """
        data_path, sidecar_path = self._paths(seq.channel_kind, seq.sample_id)
        try:
            os.makedirs(os.path.dirname(data_path), mode=0o755, exist_ok=True)
            # (T, H, W, C) -> (H, W, C, T)
            values = np.moveaxis(seq.as_array(), 0, -1).astype(_DTYPE)
            with open(data_path, "wb") as f:
                for row in values:
                    f.write(row.tobytes(order="C"))

            height, width = seq.shape
            sidecar = {
                "sample_id": seq.sample_id,
                "H": height,
                "W": width,
                "C": seq.channel_kind.n_channels,
                "T": seq.n_steps,
                "start_index": seq.frames[0].time_index,
                "channel_kind": seq.channel_kind.value,
                "metadata": seq.metadata,
                "norm_stats": norm_stats.to_dict() if norm_stats else None,
            }
            with open(sidecar_path, "w") as f:
                json.dump(sidecar, f, indent=2, sort_keys=True)

            logging.info(f"Stored {seq.sample_id} ({seq.n_steps} steps) in {data_path}")
            return {"success": True, "data_path": data_path, "sidecar_path": sidecar_path}

        except (OSError, TypeError, ValueError) as e:
            error_msg = f"Failed to store sequence {seq.sample_id}: {e}"
            logging.error(error_msg)
            return {"success": False, "error": error_msg}

    def load_sequence(
        self, channel_kind: Union[ChannelKind, str], sample_id: str
    ) -> SampleSequence:
        data_path, sidecar_path = self._paths(channel_kind, sample_id)
        if not os.path.exists(sidecar_path) or not os.path.exists(data_path):
            raise FileNotFoundError(
                f"No stored {ChannelKind(channel_kind).value} sequence {sample_id} in {self.root}"
            )
        with open(sidecar_path, "r") as f:
            sidecar = json.load(f)

        shape = (sidecar["H"], sidecar["W"], sidecar["C"], sidecar["T"])
        raw = np.fromfile(data_path, dtype=_DTYPE)
        if raw.size != int(np.prod(shape)):
            raise ValueError(
                f"{data_path} holds {raw.size} values, sidecar promises {shape}"
            )
        values = np.moveaxis(raw.reshape(shape), -1, 0).astype(np.float64)
        return SampleSequence.from_array(
            sidecar["sample_id"],
            values,
            ChannelKind(sidecar["channel_kind"]),
            sidecar.get("metadata") or {},
            start_index=sidecar.get("start_index", 0),
        )

    def load_norm_stats(
        self, channel_kind: Union[ChannelKind, str], sample_id: str
    ) -> Optional[NormStats]:
        _, sidecar_path = self._paths(channel_kind, sample_id)
        with open(sidecar_path, "r") as f:
            stats = json.load(f).get("norm_stats")
        return NormStats.from_dict(stats) if stats else None

    def list_samples(self, channel_kind: Union[ChannelKind, str]) -> List[str]:
        directory = os.path.join(self.root, ChannelKind(channel_kind).value)
        if not os.path.isdir(directory):
            return []
        return sorted(
            name[: -len(SIDECAR_SUFFIX)]
            for name in os.listdir(directory)
            if name.endswith(SIDECAR_SUFFIX)
            and os.path.exists(os.path.join(directory, name[: -len(SIDECAR_SUFFIX)] + DATA_SUFFIX))
        )

    def load_all(self, channel_kind: Union[ChannelKind, str]) -> List[SampleSequence]:
        return [self.load_sequence(channel_kind, i) for i in self.list_samples(channel_kind)]

    def dataset_hash(self) -> str:
        """sha256 over every container file (relative path and bytes) in sorted order."""
        digest = hashlib.sha256()
        for kind in ChannelKind:
            for sample_id in self.list_samples(kind):
                for path in self._paths(kind, sample_id):
                    digest.update(os.path.relpath(path, self.root).encode())
                    update_hash(digest, path)
        return digest.hexdigest()
