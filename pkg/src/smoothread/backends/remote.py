"""OpenAI-compatible chat-completions backend."""

from __future__ import annotations

import itertools
import logging
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import requests

from ..chunker import estimate_tokens
from ..errors import ConfigError, RemoteProtocolError, RemoteUnavailable, SessionClosed
from .sim import Generation, Mode, Tag

logger = logging.getLogger(__name__)

RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


def default_one_shot() -> str:
    return resources.files("smoothread").joinpath("assets/one_shot_example.txt").read_text(encoding="utf-8")


@dataclass
class RemoteBackendConfig:
    endpoint_url: str
    model_name: str = "default"
    request_timeout_seconds: float = 120.0
    max_retries: int = 3
    one_shot_example: str = field(default_factory=default_one_shot)
    api_key: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    backoff_seconds: float = 1.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if not self.endpoint_url:
            raise ConfigError("endpoint_url is required for the remote backend")

    @classmethod
    def from_env(cls, **overrides) -> "RemoteBackendConfig":
        url = overrides.pop("endpoint_url", None) or os.environ.get("ENDPOINT_URL", "")
        key = overrides.pop("api_key", None) or os.environ.get("API_KEY")
        return cls(endpoint_url=url, api_key=key, **overrides)

    @property
    def completions_url(self) -> str:
        url = self.endpoint_url.rstrip("/")
        if url.endswith("/chat/completions"):
            return url
        return url + "/chat/completions"


def remote_generate(
    config: RemoteBackendConfig,
    messages: list[dict],
    *,
    http: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
    log: list[dict] | None = None,
) -> str:
    """POST a chat-completions request and return the assistant text.

    Transient failures (connection errors, timeouts, 429 and 5xx) are retried
    with exponential backoff up to ``config.max_retries`` times.
    """
    http = http or requests.Session()
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    payload = {
        "model": config.model_name,
        "messages": messages,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    last_error = "no attempt made"
    for attempt in range(config.max_retries + 1):
        if attempt:
            delay = config.backoff_seconds * 2 ** (attempt - 1)
            logger.warning("retrying chat completion in %.2fs (%s)", delay, last_error)
            if log is not None:
                log.append({"event": "retry", "attempt": attempt, "reason": last_error})
            sleep(delay)
        try:
            resp = http.post(
                config.completions_url, json=payload, headers=headers,
                timeout=config.request_timeout_seconds,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            continue
        if resp.status_code in RETRY_STATUS:
            last_error = f"HTTP {resp.status_code}"
            continue
        if resp.status_code >= 400:
            raise RemoteUnavailable(f"HTTP {resp.status_code} from {config.completions_url}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RemoteProtocolError(f"malformed chat-completions response: {exc!r}") from None
        if not isinstance(text, str):
            raise RemoteProtocolError("assistant content is not a string")
        if log is not None:
            log.append({"event": "ok", "attempt": attempt, "usage": body.get("usage")})
        return text
    raise RemoteUnavailable(f"{config.completions_url} failed after {config.max_retries} retries: {last_error}")


_INSTRUCTIONS = {
    Mode.SUMMARY: (
        "Update the contextual summary for the text read so far. Reply with TARGET, CLUES "
        "and REASON lines, then <CONTINUE> to keep reading, or an ANSWER line and <STOP> "
        "once the question can be answered."
    ),
    Mode.ANSWER: "All text has been read. Reply with the final ANSWER line followed by <STOP>.",
}
_NO_STOP = " Do not stop early: end with <CONTINUE>."

_ids = itertools.count()


class RemoteBackend:
    """Adapts the feed/generate/reset contract onto a chat conversation.

    Fed text accumulates into the pending user turn; ``generate`` sends the
    conversation and records the reply as an assistant turn. ``reset`` drops
    the conversation. The clock is wall time spent in requests.
    """

    kind = "remote"

    def __init__(self, config: RemoteBackendConfig, http: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.http = http or requests.Session()
        self.sleep = sleep
        self.session_id = f"remote-{next(_ids)}"
        self.history: list[dict] = []
        self.pending: list[str] = []
        self.call_log: list[dict] = []
        self.request_log: list[dict] = []
        self.clock_seconds = 0.0
        self.closed = False

    def _check(self):
        if self.closed:
            raise SessionClosed(f"session {self.session_id} is closed")

    def count(self, text: str) -> int:
        return estimate_tokens(text)

    def feed(self, text: str, tag: Tag | str = Tag.CONTEXT) -> int:
        self._check()
        self.pending.append(text)
        n = estimate_tokens(text)
        self.call_log.append({"kind": "feed", "tokens": n, "clock": self.clock_seconds})
        return n

    def generate(self, mode: Mode | str = Mode.SUMMARY, allow_stop: bool = True) -> Generation:
        self._check()
        mode = Mode(mode)
        instruction = _INSTRUCTIONS[mode] + ("" if allow_stop or mode is Mode.ANSWER else _NO_STOP)
        user = "".join(self.pending) + "\n\n" + instruction
        messages = [{"role": "system", "content": self.config.one_shot_example}, *self.history,
                    {"role": "user", "content": user}]
        start = time.monotonic()
        text = remote_generate(self.config, messages, http=self.http, sleep=self.sleep, log=self.request_log)
        self.clock_seconds += time.monotonic() - start
        self.history += [{"role": "user", "content": user}, {"role": "assistant", "content": text}]
        self.pending = []
        n = estimate_tokens(text)
        self.call_log.append({"kind": "generate", "tokens": n, "clock": self.clock_seconds})
        return Generation(text, n)

    def reset(self) -> None:
        self._check()
        self.history = []
        self.pending = []
        self.call_log.append({"kind": "reset", "tokens": 0, "clock": self.clock_seconds})

    def close(self) -> None:
        self.closed = True
        self.http.close()
