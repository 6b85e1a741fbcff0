import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Union


class ProgressReporter:
    """Reports training progress to the log and to a JSON-lines history file."""

    def __init__(self, history_path: Optional[Union[str, Path]] = None):
        """
        Initialize ProgressReporter.

        Parameters
        ----------
        history_path : str or Path, optional
            File receiving one JSON object per update; logging only when omitted
        """
        self.history_path = Path(history_path) if history_path else None
        self.history: List[Dict[str, Any]] = []
        if self.history_path:
            self.history_path.parent.mkdir(parents=True, exist_ok=True)
            self.history_path.write_text("")

    def send_progress_update(self, status: str, message: str, progress: int, **fields: Any):
        """
        Record one progress update.

        Parameters
        ----------
        status : str
            Current status of the run (e.g. "training", "completed", "diverged")
        message : str
            Progress message
        progress : int
            Progress percentage (0-100)
        **fields
            Extra JSON-serialisable values, such as the epoch's loss terms
        """
        update_data = {
            "type": "training_progress",
            "status": status,
            "message": message,
            "progress": progress,
            "timestamp": time.time(),
            **fields,
        }
        self.history.append(update_data)
        logging.info(f"{status} - {message} ({progress}%)")
        if not self.history_path:
            return
        try:
            with open(self.history_path, "a") as f:
                f.write(json.dumps(update_data, sort_keys=True) + "\n")
        except OSError as e:
            logging.warning(f"Failed to write progress update to {self.history_path}: {e}")

    def epochs(self) -> List[Dict[str, Any]]:
        return [u for u in self.history if "epoch" in u]
