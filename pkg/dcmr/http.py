"""
HTTP communication with a translation service
"""

import time
from typing import Any, Dict, Optional

import requests

from .exceptions import BackendError, ProtocolError
from .logger import get_logger

USER_AGENT = "dcmr/1.0"


class HTTPClient:
    """JSON-over-HTTP client with retries for transient failures"""

    def __init__(self, endpoint: str, token: Optional[str] = None,
                 session: Optional[requests.Session] = None, max_retries: int = 3,
                 backoff: float = 1.0, timeout: float = 30.0):
        if not endpoint:
            raise BackendError("no translation endpoint configured (set DCM_MT_ENDPOINT)")
        self.base_url = endpoint.rstrip("/")
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.session = session or requests.Session()
        self.session.headers.update({"User-Agent": USER_AGENT})
        if token:
            self.session.headers.update({"Authorization": f"Bearer {token}"})

    def _wait(self, attempt: int) -> None:
        time.sleep(self.backoff * (2 ** attempt))  # 1s, 2s, 4s

    def post_json(self, path: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        """
        POST a JSON body and return the decoded JSON object

        429 and 5xx responses and network errors are retried with
        exponential backoff; other statuses fail at once.
        """
        url = f"{self.base_url}/{path.lstrip('/')}"
        logger = get_logger()
        last_error = ""

        for attempt in range(self.max_retries):
            try:
                response = self.session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as e:
                last_error = f"request failed: {e}"
                logger.warning("POST %s failed (attempt %d/%d): %s", url, attempt + 1,
                               self.max_retries, e)
                if attempt < self.max_retries - 1:
                    self._wait(attempt)
                continue

            status = response.status_code
            if status == 429 or 500 <= status < 600:
                last_error = f"HTTP {status}"
                logger.warning("POST %s returned %d (attempt %d/%d)", url, status, attempt + 1,
                               self.max_retries)
                if attempt < self.max_retries - 1:
                    self._wait(attempt)
                continue
            if not 200 <= status < 300:
                raise BackendError(f"translation request failed: HTTP {status}")

            try:
                data = response.json()
            except ValueError:
                raise ProtocolError("translation response is not JSON")
            if not isinstance(data, dict):
                raise ProtocolError("translation response must be a JSON object")
            return data

        raise BackendError(f"translation request failed after {self.max_retries} attempts: {last_error}")
