"""
Transports move encoded frames between node addresses.

Protocol logic never looks below this interface, so the same node code runs
on the in-process simulator (gin.simulator) and over HTTP between daemons.
"""

import logging
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Optional

import httpx

from gin.errors import PeerUnreachable

logger = logging.getLogger(__name__)

FrameHandler = Callable[[bytes], bytes]

RPC_PATH = "/rpc"
FRAME_CONTENT_TYPE = "application/octet-stream"


class Transport(ABC):
    """request = synchronous round trip, post = one-way (NOTIFY)"""

    def __init__(self):
        self._handlers: Dict[str, FrameHandler] = {}

    def register(self, address: str, handler: FrameHandler) -> None:
        self._handlers[address] = handler

    @abstractmethod
    def request(self, source: str, destination: str, frame: bytes) -> bytes:
        ...

    @abstractmethod
    def post(self, source: str, destination: str, frame: bytes) -> None:
        ...

    def now(self) -> int:
        """Microseconds since the epoch as seen by this transport"""
        return time.time_ns() // 1000

    def clock_for(self, address: str) -> Callable[[], int]:
        return self.now

    def rng_seed_for(self, address: str) -> Optional[int]:
        return None


class HttpTransport(Transport):
    """
    Frames as HTTP request bodies, POSTed to http://<address>/rpc.

    One-way posts go through a single worker thread so NOTIFY order per
    sender is kept and no caller blocks on a slow subscriber.
    """

    def __init__(self, timeout: float = 2.0, retries: int = 3):
        super().__init__()
        self.timeout = timeout
        self.retries = retries
        self._client = httpx.Client(timeout=timeout)
        self._outbox = ThreadPoolExecutor(max_workers=1, thread_name_prefix="gin-notify")
        self._closed = threading.Event()

    def _url(self, address: str) -> str:
        if address.startswith("http://") or address.startswith("https://"):
            return address.rstrip("/") + RPC_PATH
        return f"http://{address}{RPC_PATH}"

    def request(self, source: str, destination: str, frame: bytes) -> bytes:
        local = self._handlers.get(destination)
        if local is not None:
            return local(frame)
        last_error = "no attempt"
        for attempt in range(self.retries + 1):
            try:
                response = self._client.post(
                    self._url(destination), content=frame, headers={"Content-Type": FRAME_CONTENT_TYPE}
                )
                if response.status_code == 200:
                    return response.content
                last_error = f"HTTP {response.status_code}"
            except httpx.HTTPError as e:
                last_error = str(e) or e.__class__.__name__
            logger.debug(f"[RPC] attempt {attempt + 1} to {destination} failed: {last_error}")
        raise PeerUnreachable(destination, last_error)

    def post(self, source: str, destination: str, frame: bytes) -> None:
        if self._closed.is_set():
            return
        self._outbox.submit(self._deliver, source, destination, frame)

    def _deliver(self, source: str, destination: str, frame: bytes) -> None:
        try:
            self.request(source, destination, frame)
        except PeerUnreachable as e:
            logger.warning(f"⚠️  [RPC] One-way delivery to {destination} dropped: {e.reason}")

    def close(self) -> None:
        self._closed.set()
        self._outbox.shutdown(wait=False)
        self._client.close()
