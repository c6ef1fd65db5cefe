"""Adaptive batch walker over one (chain, event) block range.

The scanner issues getLogs queries batch by batch, halving the batch width
on rate-limit or oversize responses and doubling it again after a streak of
successes. A batch commits by handing its ordered logs to the sink, flushing
them durably, and only then persisting the checkpoint, so an interrupted run
resumed from the checkpoint covers every block exactly once.
"""

from __future__ import annotations

import enum
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .gateway import ErrorKind, GatewayError, LogQuery
from .registry import ChainConfig, EventSchema

DEFAULT_BATCH_SIZE = 10_000
DEFAULT_BATCH_MAX = 100_000
GROWTH_STREAK = 5  # consecutive clean batches before the size doubles

RATE_LIMIT_PAUSE_S = 2.0
RATE_LIMIT_PAUSE_CAP_S = 60.0


class Outcome(enum.Enum):
    SUCCESS_STREAK = "success_streak"
    RATE_LIMITED = "rate_limited"
    RESPONSE_TOO_LARGE = "response_too_large"


def resize(batch_size: int, outcome: Outcome, batch_max: int = DEFAULT_BATCH_MAX) -> int:
    """New batch size after ``outcome``: halve on faults, double on a streak."""
    if batch_size < 1:
        raise ValueError(f"batch_size {batch_size} below 1")
    if outcome in (Outcome.RATE_LIMITED, Outcome.RESPONSE_TOO_LARGE):
        return max(batch_size // 2, 1)
    return min(batch_size * 2, batch_max)


class BatchSink(Protocol):
    """Commit target for one scanned batch of ordered raw logs."""

    def commit_batch(self, logs: list) -> int: ...

    @property
    def part_number(self) -> int: ...

    @property
    def rows_in_part(self) -> int: ...


@dataclass
class ScanPlan:
    chain: ChainConfig
    event: EventSchema
    cursor: int
    end_block: int
    batch_size: int = DEFAULT_BATCH_SIZE
    batch_max: int = DEFAULT_BATCH_MAX

    def validate(self) -> None:
        if not self.chain.start_block <= self.cursor <= self.end_block + 1:
            raise ValueError(
                f"cursor {self.cursor} outside "
                f"[{self.chain.start_block}, {self.end_block + 1}]"
            )
        if not 1 <= self.batch_size <= self.batch_max:
            raise ValueError(
                f"batch_size {self.batch_size} outside [1, {self.batch_max}]"
            )


@dataclass
class Checkpoint:
    chain: str
    event: str
    last_completed_block: int
    rows_emitted_total: int
    current_part_number: int
    rows_in_current_part: int

    def save(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=2)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            chain=doc["chain"],
            event=doc["event"],
            last_completed_block=int(doc["last_completed_block"]),
            rows_emitted_total=int(doc["rows_emitted_total"]),
            current_part_number=int(doc["current_part_number"]),
            rows_in_current_part=int(doc["rows_in_current_part"]),
        )


def checkpoint_path(out_dir: str, chain: str, event: str) -> str:
    return os.path.join(out_dir, chain, event, "checkpoint.json")


@dataclass
class ScanSummary:
    chain: str
    event: str
    rows_emitted: int = 0
    batches_issued: int = 0
    resize_events: int = 0
    issued_ranges: list[tuple[int, int]] = field(default_factory=list)


ProgressFn = Callable[[ScanSummary, int, int], None]


def scan_event(
    plan: ScanPlan,
    gateway,
    sink: BatchSink,
    checkpoint_file: str | None = None,
    rows_emitted_so_far: int = 0,
    sleeper: Callable[[float], None] = time.sleep,
    on_progress: ProgressFn | None = None,
) -> ScanSummary:
    """Scan ``[plan.cursor, plan.end_block]`` completely, committing per batch.

    RateLimited halves the batch and pauses before retrying the same range;
    ResponseTooLarge halves and retries immediately, and becomes terminal
    once a single-block query is still oversized. Terminal (and surfaced
    transient) gateway errors abort with the checkpoint intact.
    """
    plan.validate()
    summary = ScanSummary(chain=plan.chain.chain_name, event=plan.event.event_name)
    summary.rows_emitted = rows_emitted_so_far

    cursor = plan.cursor
    batch_size = plan.batch_size
    streak = 0
    pause = RATE_LIMIT_PAUSE_S
    last_key: tuple[int, int] | None = None

    while cursor <= plan.end_block:
        hi = min(cursor + batch_size - 1, plan.end_block)
        query = LogQuery(
            from_block=cursor,
            to_block=hi,
            address=plan.chain.pool_address,
            topic0=plan.event.topic0,
        )
        try:
            logs = gateway.get_logs(query)
        except GatewayError as exc:
            if exc.kind is ErrorKind.RATE_LIMITED:
                batch_size = resize(batch_size, Outcome.RATE_LIMITED, plan.batch_max)
                summary.resize_events += 1
                streak = 0
                sleeper(pause)
                pause = min(pause * 2, RATE_LIMIT_PAUSE_CAP_S)
                continue
            if exc.kind is ErrorKind.RESPONSE_TOO_LARGE:
                if batch_size == 1:
                    raise GatewayError(
                        ErrorKind.TERMINAL,
                        f"single-block query [{cursor}, {hi}] still oversized",
                    ) from exc
                batch_size = resize(batch_size, Outcome.RESPONSE_TOO_LARGE, plan.batch_max)
                summary.resize_events += 1
                streak = 0
                continue
            raise  # TERMINAL, or TRANSIENT the gateway already gave up on

        for log in logs:
            if last_key is not None and log.key <= last_key:
                raise GatewayError(
                    ErrorKind.TERMINAL,
                    f"gateway returned key {log.key} at or below {last_key}",
                )
            last_key = log.key

        summary.rows_emitted += sink.commit_batch(logs)
        summary.batches_issued += 1
        summary.issued_ranges.append((cursor, hi))
        cursor = hi + 1
        pause = RATE_LIMIT_PAUSE_S

        if checkpoint_file is not None:
            Checkpoint(
                chain=plan.chain.chain_name,
                event=plan.event.event_name,
                last_completed_block=hi,
                rows_emitted_total=summary.rows_emitted,
                current_part_number=sink.part_number,
                rows_in_current_part=sink.rows_in_part,
            ).save(checkpoint_file)

        if on_progress is not None:
            on_progress(summary, cursor, plan.end_block)

        streak += 1
        if streak >= GROWTH_STREAK:
            grown = resize(batch_size, Outcome.SUCCESS_STREAK, plan.batch_max)
            if grown != batch_size:
                summary.resize_events += 1
                batch_size = grown
            streak = 0

    return summary
