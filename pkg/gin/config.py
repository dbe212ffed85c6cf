"""
Configuration and logging for GIN nodes and tools.

Settings come from the environment (optionally a .env file), and CLI flags
override them. Two kinds of logs are produced:

- human logs through the standard logging module
- an event log of one JSON object per line (ts, node, event, payload)
"""

import json
import logging
import os
import threading
from typing import Any, Dict, Literal, Optional, TextIO

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class Settings(BaseModel):
    """Node and client tunables"""

    k: int = Field(20, gt=0)
    alpha: int = Field(3, gt=0)
    replication: int = Field(3, gt=0)
    request_timeout: float = Field(2.0, gt=0)
    retries: int = Field(3, ge=0)
    round_interval: float = Field(1.0, gt=0)
    fanout: int = Field(1, gt=0)
    max_pull_batch: int = Field(256, gt=0)
    settle_timeout: float = Field(0.5, gt=0)
    verify: Literal["reject", "warn", "off"] = "reject"
    keys_file: Optional[str] = None
    data_dir: str = "./data"
    log_level: str = "INFO"
    port: int = 8001

    @classmethod
    def from_env(cls) -> "Settings":
        env = {
            "k": os.getenv("GIN_K"),
            "alpha": os.getenv("GIN_ALPHA"),
            "replication": os.getenv("GIN_REPLICATION"),
            "request_timeout": os.getenv("GIN_REQUEST_TIMEOUT"),
            "retries": os.getenv("GIN_RETRIES"),
            "round_interval": os.getenv("GIN_ROUND_INTERVAL"),
            "fanout": os.getenv("GIN_FANOUT"),
            "max_pull_batch": os.getenv("GIN_MAX_PULL_BATCH"),
            "settle_timeout": os.getenv("GIN_SETTLE_TIMEOUT"),
            "verify": os.getenv("GIN_VERIFY"),
            "keys_file": os.getenv("GIN_KEYS_FILE"),
            "data_dir": os.getenv("GIN_DATA_DIR"),
            "log_level": os.getenv("GIN_LOG_LEVEL"),
            "port": os.getenv("PORT"),
        }
        # unset variables fall back to the model defaults
        return cls(**{name: value for name, value in env.items() if value})

    def override(self, **changes: Any) -> "Settings":
        """Copy with CLI overrides applied; None means 'not given'"""
        update = {name: value for name, value in changes.items() if value is not None}
        return self.model_validate({**self.model_dump(), **update})


def configure_logging(level: Optional[str] = None) -> None:
    level_name = (level or os.getenv("GIN_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


class EventLog:
    """
    Line-delimited JSON event sink.

    Writes to a path, an open stream, or only keeps lines in memory
    (the simulator reads its trace back from `lines`).
    """

    def __init__(self, path: Optional[str] = None, stream: Optional[TextIO] = None, keep: bool = False):
        self.path = path
        self._stream = stream
        self._keep = keep
        self.lines: list = []
        self._lock = threading.Lock()
        if path:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            self._stream = open(path, "a", encoding="utf-8")

    def emit(self, ts: int, node: str, event: str, payload: Optional[Dict[str, Any]] = None) -> str:
        line = json.dumps(
            {"ts": ts, "node": node, "event": event, "payload": payload or {}},
            sort_keys=True,
            separators=(",", ":"),
        )
        with self._lock:
            if self._keep:
                self.lines.append(line)
            if self._stream is not None:
                self._stream.write(line + "\n")
                self._stream.flush()
        return line

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def close(self) -> None:
        if self.path and self._stream is not None:
            self._stream.close()
            self._stream = None
