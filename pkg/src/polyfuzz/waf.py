"""WAF oracles: a regex ruleset simulator and an HTTP client for real targets.

Both answer the same question for a payload -- was it blocked or did it get
through -- and return a :class:`WafVerdict`.
"""

from __future__ import annotations

import json
import os
import re
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .text import decode_chain

BLOCKED = "blocked"
BYPASSED = "bypassed"
TIMEOUT_ENV = "POLYFUZZ_WAF_TIMEOUT_MS"


class RulesetError(ValueError):
    def __init__(self, message: str, rule_id: str | None = None):
        super().__init__(message if rule_id is None else f"rule {rule_id}: {message}")
        self.rule_id = rule_id


class OracleUnreachable(RuntimeError):
    pass


@dataclass(frozen=True)
class WafVerdict:
    outcome: str
    matched_rule: str | None = None
    latency: float = 0.0

    @property
    def blocked(self) -> bool:
        return self.outcome == BLOCKED

    @property
    def bypassed(self) -> bool:
        return self.outcome == BYPASSED


@dataclass(frozen=True)
class Rule:
    id: str
    pattern: str
    decode_stages: int = 0
    enabled: bool = True
    regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.decode_stages <= 4:
            raise RulesetError("decode_stages must be in 0..4", self.id)
        try:
            # decoded views are lowercased, so their patterns ignore case
            flags = re.IGNORECASE if self.decode_stages > 0 else 0
            object.__setattr__(self, "regex", re.compile(self.pattern, flags))
        except re.error as exc:
            raise RulesetError(f"pattern does not compile: {exc}", self.id) from None


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for r in self.rules:
            if r.id in seen:
                raise RulesetError("duplicate rule id", r.id)
            seen.add(r.id)

    def with_rule_disabled(self, rule_id: str) -> "RuleSet":
        return RuleSet(tuple(Rule(r.id, r.pattern, r.decode_stages, False) if r.id == rule_id else r
                             for r in self.rules))

    def to_dict(self) -> dict:
        return {"format_version": 1,
                "rules": [{"id": r.id, "pattern": r.pattern, "decode_stages": r.decode_stages,
                           "enabled": r.enabled} for r in self.rules]}


def parse_ruleset(data: dict) -> RuleSet:
    if data.get("format_version") != 1:
        raise RulesetError(f"unsupported format_version {data.get('format_version')!r}")
    rules = []
    for i, raw in enumerate(data.get("rules", [])):
        rid = str(raw.get("id", f"#{i}"))
        if "pattern" not in raw:
            raise RulesetError("missing pattern", rid)
        rules.append(Rule(rid, raw["pattern"], int(raw.get("decode_stages", 0)),
                          bool(raw.get("enabled", True))))
    return RuleSet(tuple(rules))


def load_ruleset(path: str | Path) -> RuleSet:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RulesetError(f"{path}: invalid JSON ({exc})") from None
    return parse_ruleset(data)


def bundled_ruleset(name: str = "sim_modsec_like") -> RuleSet:
    text = resources.files("polyfuzz").joinpath(f"data/{name}.json").read_text("utf-8")
    return parse_ruleset(json.loads(text))


def sim_check(ruleset: RuleSet, payload: str) -> WafVerdict:
    """First enabled rule whose pattern matches the payload decoded
    ``decode_stages`` times blocks it; otherwise the payload bypasses.

    Stage 0 is the raw payload; any decoded view is also lowercased, and
    patterns on decoded views match case-insensitively.
    """
    t0 = time.perf_counter()
    views: dict[int, str] = {0: payload}
    for rule in ruleset.rules:
        if not rule.enabled:
            continue
        text = views.get(rule.decode_stages)
        if text is None:
            text = views[rule.decode_stages] = decode_chain(payload, rule.decode_stages)
        if rule.regex.search(text):
            return WafVerdict(BLOCKED, rule.id, time.perf_counter() - t0)
    return WafVerdict(BYPASSED, None, time.perf_counter() - t0)


class SimulatorOracle:
    """Callable oracle over a RuleSet."""

    def __init__(self, ruleset: RuleSet):
        self.ruleset = ruleset

    def __call__(self, payload: str) -> WafVerdict:
        return sim_check(self.ruleset, payload)

    def check_many(self, payloads: Sequence[str]) -> list[WafVerdict]:
        return [sim_check(self.ruleset, p) for p in payloads]


@dataclass(frozen=True)
class HttpOracleConfig:
    url_template: str
    method: str = "GET"
    blocked_status_set: frozenset[int] = frozenset({403})
    timeout: float = 5.0
    max_retries: int = 2
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.url_template.count("{payload}") != 1:
            raise ValueError("url_template must contain '{payload}' exactly once")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.method.upper() not in ("GET", "POST"):
            raise ValueError(f"unsupported method {self.method!r}")

    @classmethod
    def from_env(cls, url_template: str, **kwargs) -> "HttpOracleConfig":
        if TIMEOUT_ENV in os.environ and "timeout" not in kwargs:
            kwargs["timeout"] = int(os.environ[TIMEOUT_ENV]) / 1000.0
        return cls(url_template, **kwargs)


def http_check(config: HttpOracleConfig, payload: str) -> WafVerdict:
    """Send the percent-encoded payload; a status in ``blocked_status_set`` means blocked.

    Any other status, including 5xx, counts as bypassed.
    """
    url = config.url_template.replace("{payload}", urllib.parse.quote(payload, safe=""))
    method = config.method.upper()
    last_error: Exception | None = None
    for _ in range(config.max_retries + 1):
        t0 = time.perf_counter()
        req = urllib.request.Request(url, method=method, data=b"" if method == "POST" else None)
        try:
            with urllib.request.urlopen(req, timeout=config.timeout) as resp:
                status = resp.status
        except urllib.error.HTTPError as exc:
            status = exc.code
        except (urllib.error.URLError, OSError) as exc:
            last_error = exc
            continue
        latency = time.perf_counter() - t0
        if status in config.blocked_status_set:
            return WafVerdict(BLOCKED, f"http:{status}", latency)
        return WafVerdict(BYPASSED, None, latency)
    raise OracleUnreachable(f"{url}: no response after {config.max_retries + 1} attempts ({last_error})")


class HttpOracle:
    def __init__(self, config: HttpOracleConfig):
        self.config = config

    def __call__(self, payload: str) -> WafVerdict:
        return http_check(self.config, payload)

    def check_many(self, payloads: Sequence[str]) -> list[WafVerdict]:
        with ThreadPoolExecutor(max_workers=max(1, self.config.max_in_flight)) as pool:
            return list(pool.map(self, payloads))


def oracle_from_spec(spec: str, jobs: int = 1) -> Callable[[str], WafVerdict]:
    """Build an oracle from ``sim:<ruleset-path>`` (or ``sim:bundled``) or ``http:<template>``."""
    kind, _, arg = spec.partition(":")
    if kind == "sim":
        if arg in ("", "bundled"):
            return SimulatorOracle(bundled_ruleset())
        if arg.startswith("bundled:"):
            return SimulatorOracle(bundled_ruleset(arg.split(":", 1)[1]))
        return SimulatorOracle(load_ruleset(arg))
    if kind == "http":
        return HttpOracle(HttpOracleConfig.from_env(arg, max_in_flight=max(1, jobs)))
    raise ValueError(f"unknown oracle selector {spec!r}; expected sim:<path> or http:<template>")


def check_many(oracle, payloads: Iterable[str]) -> list[WafVerdict]:
    payloads = list(payloads)
    batch = getattr(oracle, "check_many", None)
    return batch(payloads) if batch else [oracle(p) for p in payloads]
