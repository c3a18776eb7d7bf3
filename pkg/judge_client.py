"""
Judge Client
============

Client for an automated judge endpoint that rates responses with the
three-tier rubric.

Wire format (HTTP POST, JSON):
    request  {"system": rubric text, "examples": [{"tier", "case"}, ...], "case": text}
    reply    {"text": free-form judge reply}

The rating is the first of the keywords good / average / bad found in the
reply (case-insensitive). Requests are sequential; transient failures are
retried with exponential backoff (1s, 2s, 4s, ...).
"""

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import httpx

from errors import InvalidInputError, TransportError, UnparseableReplyError
from evaluation import RatingRecord, Tier
from prompts import format_case
from rlgaf_config import (
    DEFAULT_JUDGE_AUTH_HEADER,
    DEFAULT_JUDGE_RETRY_LIMIT,
    DEFAULT_JUDGE_TIMEOUT_SECONDS,
    JUDGE_BACKOFF_BASE_SECONDS,
    JUDGE_BACKOFF_FACTOR,
    get_judge_endpoint,
    get_judge_token,
)


TIER_PATTERN = re.compile(r"\b(good|average|bad)\b", re.IGNORECASE)

# Status codes worth another attempt
RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass
class RetryConfig:
    """Bounded retry with exponential backoff and no jitter."""
    retry_limit: int = DEFAULT_JUDGE_RETRY_LIMIT
    initial_delay: float = JUDGE_BACKOFF_BASE_SECONDS
    exponential_base: float = JUDGE_BACKOFF_FACTOR

    def __post_init__(self):
        if self.retry_limit < 0:
            raise InvalidInputError(f"retry_limit must be >= 0, got {self.retry_limit}")

    def get_delay(self, attempt: int) -> float:
        """Delay before retry number ``attempt`` (0-based)."""
        return self.initial_delay * (self.exponential_base ** attempt)


@dataclass
class JudgeRequest:
    system_text: str
    examples: list
    case: str

    def to_json(self) -> dict:
        return {"system": self.system_text, "examples": self.examples, "case": self.case}


@dataclass
class JudgeReply:
    tier: Tier
    raw_text: str


@dataclass
class JudgeExchange:
    request: JudgeRequest
    reply: JudgeReply


def parse_tier(text: str) -> Tier:
    """First tier keyword in the reply wins."""
    match = TIER_PATTERN.search(text)
    if match is None:
        raise UnparseableReplyError(text)
    return Tier(match.group(1).capitalize())


@dataclass
class JudgeClient:
    endpoint: str
    token: Optional[str] = None
    auth_header: str = DEFAULT_JUDGE_AUTH_HEADER
    timeout: float = DEFAULT_JUDGE_TIMEOUT_SECONDS
    retry: RetryConfig = field(default_factory=RetryConfig)
    transport: Optional[httpx.BaseTransport] = None
    sleep: Callable[[float], None] = time.sleep

    def headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers[self.auth_header] = self.token
        return headers

    def send(self, request: JudgeRequest) -> str:
        """POST one case and return the reply text."""
        last_error = "no attempt made"
        with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
            for attempt in range(self.retry.retry_limit + 1):
                if attempt > 0:
                    self.sleep(self.retry.get_delay(attempt - 1))
                try:
                    response = client.post(
                        self.endpoint, headers=self.headers(), json=request.to_json()
                    )
                except httpx.RequestError as e:
                    last_error = f"judge request failed: {e}"
                    continue

                if response.status_code in RETRYABLE_STATUS:
                    last_error = f"judge returned {response.status_code}"
                    continue
                if response.status_code != 200:
                    raise TransportError(
                        f"judge returned {response.status_code}: {response.text[:200]}"
                    )
                try:
                    text = response.json()["text"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise UnparseableReplyError(response.text)
                if not isinstance(text, str):
                    raise UnparseableReplyError(response.text)
                return text

        raise TransportError(
            f"{last_error} (gave up after {self.retry.retry_limit + 1} attempts)"
        )

    def rate(self, request: JudgeRequest) -> JudgeExchange:
        raw = self.send(request)
        return JudgeExchange(request, JudgeReply(parse_tier(raw), raw))


def default_client(
    endpoint: Optional[str] = None,
    token: Optional[str] = None,
    retry_limit: int = DEFAULT_JUDGE_RETRY_LIMIT,
    **kwargs,
) -> JudgeClient:
    """Client from explicit settings, falling back to RLGAF_JUDGE_* variables."""
    endpoint = endpoint or get_judge_endpoint()
    if not endpoint:
        raise InvalidInputError("no judge endpoint configured (set RLGAF_JUDGE_ENDPOINT)")
    return JudgeClient(
        endpoint=endpoint,
        token=token or get_judge_token(),
        retry=RetryConfig(retry_limit=retry_limit),
        **kwargs,
    )


def judge_rate(
    endpoint: str,
    rubric_text: str,
    exemplars: list,
    case: str,
    retry_limit: int = DEFAULT_JUDGE_RETRY_LIMIT,
    prompt_id: str = "p0000",
    system_id: str = "unknown",
    client: Optional[JudgeClient] = None,
) -> RatingRecord:
    """Send one case to the judge and record its rating under rater tag "judge"."""
    client = client or default_client(endpoint, retry_limit=retry_limit)
    exchange = client.rate(JudgeRequest(rubric_text, exemplars, case))
    return RatingRecord(prompt_id, system_id, exchange.reply.tier, "judge")


@dataclass
class JudgeCase:
    prompt_id: str
    system_id: str
    prompt: tuple
    response: tuple


def load_cases(path: Path) -> list[JudgeCase]:
    """Judge cases as JSON lines: {prompt_id, system_id, prompt, response}."""
    cases = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                cases.append(JudgeCase(
                    prompt_id=str(data["prompt_id"]),
                    system_id=str(data["system_id"]),
                    prompt=tuple(int(t) for t in data["prompt"]),
                    response=tuple(int(t) for t in data["response"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise InvalidInputError(f"{path}: line {line_number}: bad judge case ({e})")
    return cases


def judge_cases(
    client: JudgeClient,
    rubric_text: str,
    exemplars: list,
    cases: list[JudgeCase],
    terminator: Optional[int] = None,
) -> list[RatingRecord]:
    """Rate every case in order, one request at a time."""
    return [
        judge_rate(
            client.endpoint,
            rubric_text,
            exemplars,
            format_case(case.prompt, case.response, terminator),
            client.retry.retry_limit,
            case.prompt_id,
            case.system_id,
            client=client,
        )
        for case in cases
    ]
