"""Episode lifecycle: budgets, submission caps, best-submission bookkeeping.

One episode = one agent attempt at one task.  Submission and wall-clock caps
are engine-enforced; token usage is client-reported (the engine cannot see
an agent's internals) but the cap cut-off is engine-enforced.  Episodes are
single-writer: callers must serialize messages per episode.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .grading import (
    CriteriaReport,
    MatchConfig,
    Submission,
    SubmissionFormatError,
    evaluate,
)
from .tasks import TaskBundle

TIER_BUDGETS = {
    "easy": dict(max_tokens=200_000, max_wall_seconds=600.0,
                 max_submissions=3, max_planets_per_submission=3),
    "medium": dict(max_tokens=450_000, max_wall_seconds=900.0,
                   max_submissions=5, max_planets_per_submission=5),
    "hard": dict(max_tokens=900_000, max_wall_seconds=1500.0,
                 max_submissions=10, max_planets_per_submission=8),
}

STATUS_RUNNING = "running"
STATUS_ENV_DONE = "env_done"
STATUS_BUDGET_EXCEEDED = "budget_exceeded"

FINALIZE_REASONS = ("agent_done", "cap", "timeout", "token_limit")


class EpisodeError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class EpisodeConfig:
    tier: str
    max_tokens: int
    max_wall_seconds: float
    max_submissions: int
    max_planets_per_submission: int

    def __post_init__(self):
        if min(self.max_tokens, self.max_wall_seconds,
               self.max_submissions, self.max_planets_per_submission) <= 0:
            raise ValueError("budgets must be positive")

    @classmethod
    def for_tier(cls, tier: str) -> "EpisodeConfig":
        if tier not in TIER_BUDGETS:
            raise ValueError(f"unknown tier {tier!r}")
        return cls(tier=tier, **TIER_BUDGETS[tier])


@dataclass
class EpisodeState:
    tokens_used: int = 0
    tool_calls_reported: int = 0
    submissions: list = field(default_factory=list)  # (Submission|None, report)
    best_index: Optional[int] = None
    status: str = STATUS_RUNNING


@dataclass(frozen=True)
class EpisodeResult:
    passed: bool
    status: str
    best_report: Optional[CriteriaReport]
    reports: tuple
    n_submissions: int


class Episode:
    """State machine for one agent episode on one task."""

    def __init__(self, episode_id: str, bundle: TaskBundle, cfg: EpisodeConfig,
                 clock: Callable[[], float] = time.monotonic,
                 enforce_wall_clock: bool = True,
                 match_config: MatchConfig = MatchConfig()):
        if bundle.tier != cfg.tier:
            raise EpisodeError("tier_mismatch",
                               f"bundle tier {bundle.tier!r} != config tier "
                               f"{cfg.tier!r}")
        self.episode_id = episode_id
        self.bundle = bundle
        self.cfg = cfg
        self.state = EpisodeState()
        self._clock = clock
        self._enforce_wall_clock = enforce_wall_clock
        self._match_config = match_config
        self._started_at = clock()

    # ------------------------------------------------------------- helpers
    @property
    def elapsed_seconds(self) -> float:
        return self._clock() - self._started_at

    def remaining(self) -> dict:
        # replay mode reports the full wall budget so recorded transcripts
        # stay byte-identical across runs
        elapsed = self.elapsed_seconds if self._enforce_wall_clock else 0.0
        return {
            "submissions": self.cfg.max_submissions - len(self.state.submissions),
            "tokens": self.cfg.max_tokens - self.state.tokens_used,
            "seconds": max(0.0, self.cfg.max_wall_seconds - elapsed),
        }

    def _wall_clock_exceeded(self) -> bool:
        return (self._enforce_wall_clock
                and self.elapsed_seconds > self.cfg.max_wall_seconds)

    def _gate(self):
        """Reject messages on ended episodes; late messages answer
        budget_exceeded and mutate nothing."""
        if self._wall_clock_exceeded():
            self.state.status = STATUS_BUDGET_EXCEEDED
        if self.state.status == STATUS_BUDGET_EXCEEDED:
            raise EpisodeError("budget_exceeded", "resource budget exhausted")
        if self.state.status != STATUS_RUNNING:
            detail = ""
            if len(self.state.submissions) >= self.cfg.max_submissions:
                detail = " (submission cap reached)"
            raise EpisodeError("terminal_state",
                               f"episode is {self.state.status}{detail}")

    # ------------------------------------------------------------ protocol
    def handle_submit(self, sub: Submission) -> CriteriaReport:
        """Grade one submission; format rejections also consume an attempt."""
        self._gate()
        try:
            report = evaluate(sub, self.bundle, self._match_config,
                              max_planets=self.cfg.max_planets_per_submission)
        except SubmissionFormatError as exc:
            report = CriteriaReport.format_rejection(str(exc))
        self.state.submissions.append((sub, report))
        self._update_best()
        if len(self.state.submissions) >= self.cfg.max_submissions:
            self.state.status = STATUS_ENV_DONE
        return report

    def _update_best(self):
        best, best_key = None, None
        for idx, (_, report) in enumerate(self.state.submissions):
            if report.format_error or report.match_score is None:
                continue
            # higher match score, then lower rms, then earlier index
            key = (-report.match_score, report.rms_ms, idx)
            if best_key is None or key < best_key:
                best, best_key = idx, key
        self.state.best_index = best

    def report_usage(self, tokens: int, tool_calls: int = None) -> str:
        """Monotone token counter; crossing the cap flips the episode."""
        self._gate()
        if tokens < self.state.tokens_used:
            raise EpisodeError("invalid_usage",
                               f"token counter decreased: {tokens} < "
                               f"{self.state.tokens_used}")
        self.state.tokens_used = tokens
        if tool_calls is not None:
            self.state.tool_calls_reported = tool_calls
        if tokens > self.cfg.max_tokens:
            self.state.status = STATUS_BUDGET_EXCEEDED
            return STATUS_BUDGET_EXCEEDED
        return "accepted"

    def finalize(self, reason: str) -> EpisodeResult:
        if reason not in FINALIZE_REASONS:
            raise EpisodeError("invalid_reason", f"unknown reason {reason!r}")
        status = (STATUS_ENV_DONE if reason in ("agent_done", "cap")
                  else STATUS_BUDGET_EXCEEDED)
        self.state.status = status
        best = self.state.best_index
        best_report = (self.state.submissions[best][1]
                       if best is not None else None)
        return EpisodeResult(
            passed=bool(best_report.passed) if best_report else False,
            status=status,
            best_report=best_report,
            reports=tuple(r for _, r in self.state.submissions),
            n_submissions=len(self.state.submissions))


class EpisodeEngine:
    """Registry of live episodes over a fixed set of task bundles."""

    def __init__(self, bundles, clock: Callable[[], float] = time.monotonic,
                 enforce_wall_clock: bool = True,
                 match_config: MatchConfig = MatchConfig()):
        self._bundles = {b.task_id: b for b in bundles}
        self._episodes: dict = {}
        self._clock = clock
        self._enforce_wall_clock = enforce_wall_clock
        self._match_config = match_config

    @property
    def task_ids(self):
        return sorted(self._bundles)

    def start_episode(self, episode_id: str, task_id: str) -> Episode:
        if episode_id in self._episodes:
            raise EpisodeError("conflict", f"episode {episode_id!r} exists")
        if task_id not in self._bundles:
            raise EpisodeError("not_found", f"no task {task_id!r}")
        bundle = self._bundles[task_id]
        episode = Episode(episode_id, bundle,
                          EpisodeConfig.for_tier(bundle.tier),
                          clock=self._clock,
                          enforce_wall_clock=self._enforce_wall_clock,
                          match_config=self._match_config)
        self._episodes[episode_id] = episode
        return episode

    def episode(self, episode_id: str) -> Episode:
        if episode_id not in self._episodes:
            raise EpisodeError("not_found", f"no episode {episode_id!r}")
        return self._episodes[episode_id]
