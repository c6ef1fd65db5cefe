"""CSV shard writer and validator for decoded event streams.

File contract: one directory per (chain, event); parts of at most one
million rows named ``aave_V3_{chain}_{event}_part{nnn}_{YYYYMMDD_HHMMSS}.csv``
with consecutive part numbers from 001, strictly increasing
(block_number, log_index) keys within and across parts, and a JSON manifest
written beside the data files at finalize.

The timestamp suffix in the filename carries the wall-clock time at which
the part was closed, so an open part lives under a temporary dot-name and is
renamed into place when it fills up (or at finalize). A small sidecar state
file tracks closed parts so an interrupted stream can resume.
"""

from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Iterator

from .decoder import DecodedEvent
from .registry import EventSchema

PART_ROW_LIMIT = 1_000_000
MAX_PART_NUMBER = 999

FILENAME_RE = re.compile(
    r"^aave_V3_(?P<chain>[a-z][a-z0-9]*)_(?P<event>[A-Z][A-Za-z0-9]*)"
    r"_part(?P<part>\d{3})_(?P<ts>\d{8}_\d{6})\.csv$"
)

PREFIX_COLUMNS = (
    "chain",
    "event",
    "block_number",
    "block_timestamp",
    "transaction_hash",
    "log_index",
    "contract_address",
)


class OrderViolation(Exception):
    """Appended key is not strictly above the last written key."""


class PartOverflow(Exception):
    """Part numbering exceeded the 3-digit filename budget."""


class IoFailure(Exception):
    """Underlying I/O failed; the stream was closed in a consistent state."""


def part_filename(chain: str, event: str, part_number: int, wall_clock: datetime) -> str:
    """Filename for a closed part; ``wall_clock`` must be timezone-aware UTC."""
    if not 1 <= part_number <= MAX_PART_NUMBER:
        raise PartOverflow(f"part number {part_number} outside 1..{MAX_PART_NUMBER}")
    stamp = wall_clock.astimezone(timezone.utc).strftime("%Y%m%d_%H%M%S")
    return f"aave_V3_{chain}_{event}_part{part_number:03d}_{stamp}.csv"


@dataclass(frozen=True)
class PartRecord:
    part_number: int
    filename: str
    row_count: int
    first_key: tuple[int, int]
    last_key: tuple[int, int]


@dataclass(frozen=True)
class ShardManifest:
    chain: str
    event: str
    parts: tuple[PartRecord, ...]

    @property
    def total_rows(self) -> int:
        return sum(p.row_count for p in self.parts)

    def to_json(self) -> str:
        return json.dumps(
            {
                "chain": self.chain,
                "event": self.event,
                "parts": [
                    {
                        "part_number": p.part_number,
                        "filename": p.filename,
                        "row_count": p.row_count,
                        "first_key": list(p.first_key),
                        "last_key": list(p.last_key),
                    }
                    for p in self.parts
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ShardManifest":
        doc = json.loads(text)
        return cls(
            chain=doc["chain"],
            event=doc["event"],
            parts=tuple(
                PartRecord(
                    part_number=int(p["part_number"]),
                    filename=p["filename"],
                    row_count=int(p["row_count"]),
                    first_key=(int(p["first_key"][0]), int(p["first_key"][1])),
                    last_key=(int(p["last_key"][0]), int(p["last_key"][1])),
                )
                for p in doc["parts"]
            ),
        )


def stream_dir(out_dir: str, chain: str, event: str) -> str:
    return os.path.join(out_dir, chain, event)


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class ShardWriter:
    """Single-writer CSV shard stream for one (chain, event).

    Parts roll over lazily: the row that reaches the limit closes the part,
    and the next append opens the following one, so a stream ending exactly
    on the limit never produces an empty trailing part.
    """

    def __init__(
        self,
        out_dir: str,
        chain: str,
        schema: EventSchema,
        clock: Callable[[], datetime] | None = None,
        row_limit: int = PART_ROW_LIMIT,
    ):
        self._dir = stream_dir(out_dir, chain, schema.event_name)
        self._chain = chain
        self._schema = schema
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._row_limit = row_limit
        self._header = list(PREFIX_COLUMNS) + [f.name for f in schema.fields] + ["usd_value"]

        self._closed_parts: list[PartRecord] = []
        self._part_number = 0  # 0 until the first part opens
        self._rows_in_part = 0
        self._rows_total = 0
        self._last_key: tuple[int, int] | None = None
        self._first_key_in_part: tuple[int, int] | None = None
        self._fh = None
        self._writer = None
        self._manifest: ShardManifest | None = None

        os.makedirs(self._dir, exist_ok=True)

    # -- observable state, used for checkpoints --------------------------------

    @property
    def part_number(self) -> int:
        return self._part_number

    @property
    def rows_in_part(self) -> int:
        return self._rows_in_part

    @property
    def rows_total(self) -> int:
        return self._rows_total

    @property
    def last_key(self) -> tuple[int, int] | None:
        return self._last_key

    # -- writing ----------------------------------------------------------------

    def _open_part_path(self, part_number: int) -> str:
        return os.path.join(self._dir, f".part{part_number:03d}.open.csv")

    def _sidecar_path(self) -> str:
        return os.path.join(
            self._dir, f"manifest.{self._chain}.{self._schema.event_name}.state"
        )

    def _open_next_part(self) -> None:
        next_number = self._part_number + 1
        if next_number > MAX_PART_NUMBER:
            raise PartOverflow(
                f"stream {self._chain}/{self._schema.event_name} exceeded "
                f"{MAX_PART_NUMBER} parts"
            )
        path = self._open_part_path(next_number)
        try:
            self._fh = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(self._header)
        except OSError as exc:
            self._close_quietly()
            raise IoFailure(f"cannot open part file {path!r}: {exc}") from exc
        self._part_number = next_number
        self._rows_in_part = 0
        self._first_key_in_part = None

    def append(self, event: DecodedEvent) -> None:
        """Append one row; opens/rolls parts as needed.

        Raises OrderViolation when the event key is not strictly above the
        last written key for this stream.
        """
        key = event.key
        if self._manifest is not None:
            raise IoFailure("stream already finalized")
        if self._last_key is not None and key <= self._last_key:
            raise OrderViolation(
                f"key {key} not above last written key {self._last_key} "
                f"({self._chain}/{self._schema.event_name})"
            )
        if self._fh is None:
            self._open_next_part()
        row = [
            event.chain_name,
            event.event_name,
            str(event.block_number),
            str(event.block_timestamp),
            event.transaction_hash,
            str(event.log_index),
            event.contract_address,
        ]
        row.extend(value for _, value in event.fields)
        row.append(event.usd_value)
        try:
            self._writer.writerow(row)
        except OSError as exc:
            self._close_quietly()
            raise IoFailure(f"write failed on part {self._part_number}: {exc}") from exc
        if self._first_key_in_part is None:
            self._first_key_in_part = key
        self._last_key = key
        self._rows_in_part += 1
        self._rows_total += 1
        if self._rows_in_part >= self._row_limit:
            self._close_part()

    def flush(self) -> None:
        """Push buffered rows to disk (flush + fsync)."""
        if self._fh is not None:
            try:
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                self._close_quietly()
                raise IoFailure(f"flush failed: {exc}") from exc

    def _close_part(self) -> None:
        assert self._fh is not None
        open_path = self._open_part_path(self._part_number)
        try:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
        except OSError as exc:
            self._fh = None
            self._writer = None
            raise IoFailure(f"closing part {self._part_number} failed: {exc}") from exc
        self._fh = None
        self._writer = None
        final_name = part_filename(
            self._chain, self._schema.event_name, self._part_number, self._clock()
        )
        record = PartRecord(
            part_number=self._part_number,
            filename=final_name,
            row_count=self._rows_in_part,
            first_key=self._first_key_in_part,
            last_key=self._last_key,
        )
        try:
            os.replace(open_path, os.path.join(self._dir, final_name))
        except OSError as exc:
            raise IoFailure(f"renaming part {self._part_number} failed: {exc}") from exc
        self._closed_parts.append(record)
        self._save_sidecar()
        self._rows_in_part = 0
        self._first_key_in_part = None

    def _close_quietly(self) -> None:
        if self._fh is not None:
            try:
                self._fh.close()
            except OSError:
                pass
            self._fh = None
            self._writer = None

    def _save_sidecar(self) -> None:
        manifest = ShardManifest(
            chain=self._chain,
            event=self._schema.event_name,
            parts=tuple(self._closed_parts),
        )
        _atomic_write(self._sidecar_path(), manifest.to_json())

    def finalize(self) -> ShardManifest:
        """Close the open part and write the manifest; idempotent."""
        if self._manifest is not None:
            return self._manifest
        if self._fh is not None and self._rows_in_part > 0:
            self._close_part()
        elif self._fh is not None:
            # open but empty part file: discard it
            open_path = self._open_part_path(self._part_number)
            self._close_quietly()
            try:
                os.remove(open_path)
            except OSError:
                pass
            self._part_number -= 1
        self._manifest = ShardManifest(
            chain=self._chain,
            event=self._schema.event_name,
            parts=tuple(self._closed_parts),
        )
        path = os.path.join(
            self._dir, f"manifest.{self._chain}.{self._schema.event_name}"
        )
        try:
            _atomic_write(path, self._manifest.to_json())
            sidecar = self._sidecar_path()
            if os.path.exists(sidecar):
                os.remove(sidecar)
        except OSError as exc:
            raise IoFailure(f"writing manifest failed: {exc}") from exc
        return self._manifest

    # -- resume -------------------------------------------------------------------

    @classmethod
    def resume(
        cls,
        out_dir: str,
        chain: str,
        schema: EventSchema,
        part_number: int,
        rows_in_part: int,
        clock: Callable[[], datetime] | None = None,
        row_limit: int = PART_ROW_LIMIT,
    ) -> "ShardWriter":
        """Reopen an interrupted stream at a batch-boundary checkpoint.

        Rows beyond ``rows_in_part`` in the open part (a batch that was
        written but never checkpointed) are truncated away.
        """
        writer = cls(out_dir, chain, schema, clock=clock, row_limit=row_limit)
        sidecar = writer._sidecar_path()
        if os.path.exists(sidecar):
            with open(sidecar, "r", encoding="utf-8") as fh:
                saved = ShardManifest.from_json(fh.read())
            writer._closed_parts = list(saved.parts)
        writer._rows_total = sum(p.row_count for p in writer._closed_parts)
        if writer._closed_parts:
            writer._last_key = writer._closed_parts[-1].last_key
        expected_closed = part_number if rows_in_part == 0 else part_number - 1
        if len(writer._closed_parts) != max(expected_closed, 0):
            raise IoFailure(
                f"resume state inconsistent: checkpoint part {part_number} with "
                f"{rows_in_part} rows but {len(writer._closed_parts)} closed parts on disk"
            )
        if rows_in_part == 0:
            writer._part_number = part_number
            return writer

        open_path = writer._open_part_path(part_number)
        if not os.path.exists(open_path):
            raise IoFailure(f"resume expected open part file {open_path!r}")
        first_key, last_key, kept = writer._truncate_open_part(open_path, rows_in_part)
        writer._part_number = part_number
        writer._rows_in_part = kept
        writer._rows_total += kept
        writer._first_key_in_part = first_key
        writer._last_key = last_key
        try:
            writer._fh = open(open_path, "a", newline="", encoding="utf-8")
            writer._writer = csv.writer(writer._fh, lineterminator="\n")
        except OSError as exc:
            raise IoFailure(f"cannot reopen part file {open_path!r}: {exc}") from exc
        return writer

    def _truncate_open_part(
        self, path: str, keep_rows: int
    ) -> tuple[tuple[int, int], tuple[int, int], int]:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
        header, data = rows[0], rows[1:]
        if header != self._header:
            raise IoFailure(f"open part {path!r} has an unexpected header")
        if len(data) < keep_rows:
            raise IoFailure(
                f"open part {path!r} holds {len(data)} rows, checkpoint says {keep_rows}"
            )
        if len(data) > keep_rows:
            data = data[:keep_rows]
            tmp = path + ".tmp"
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        first = (int(data[0][2]), int(data[0][5]))
        last = (int(data[-1][2]), int(data[-1][5]))
        return first, last, keep_rows


# -- reading and validation ---------------------------------------------------


def iter_part_rows(path: str) -> Iterator[dict[str, str]]:
    """Yield rows of one part file as header-keyed dicts."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            yield row


def list_stream_parts(directory: str) -> list[str]:
    """Part filenames in a stream directory, ordered by part number."""
    names = [n for n in os.listdir(directory) if FILENAME_RE.match(n)]
    return sorted(names, key=lambda n: int(FILENAME_RE.match(n).group("part")))


@dataclass(frozen=True)
class Violation:
    kind: str  # naming | part_numbering | row_limit | ordering | manifest
    path: str
    detail: str
    line: int | None = None


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def _validate_stream(directory: str, chain: str, event: str) -> list[Violation]:
    violations: list[Violation] = []
    entries = sorted(os.listdir(directory))
    part_files: list[tuple[int, str]] = []
    for name in entries:
        if name.startswith(".") or name.startswith("manifest.") or name.endswith(".tmp"):
            continue
        if not name.endswith(".csv"):
            continue
        m = FILENAME_RE.match(name)
        if not m:
            violations.append(Violation("naming", os.path.join(directory, name),
                                        "filename does not match the part pattern"))
            continue
        if m.group("chain") != chain or m.group("event") != event:
            violations.append(Violation("naming", os.path.join(directory, name),
                                        f"filename names {m.group('chain')}/{m.group('event')}, "
                                        f"directory is {chain}/{event}"))
        part = int(m.group("part"))
        if part < 1:
            violations.append(Violation("naming", os.path.join(directory, name),
                                        "part numbers start at 001"))
            continue
        part_files.append((part, name))

    part_files.sort()
    expected = 1
    for part, _ in part_files:
        if part != expected:
            violations.append(Violation(
                "part_numbering", directory,
                f"expected part{expected:03d} next, found part{part:03d}"))
            expected = part
        expected += 1

    actual_parts: list[PartRecord] = []
    previous_last: tuple[int, int] | None = None
    for part, name in part_files:
        path = os.path.join(directory, name)
        rows = 0
        first_key = last_key = None
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                next(reader)  # header
            except StopIteration:
                violations.append(Violation("ordering", path, "part file has no header"))
                continue
            for line_no, row in enumerate(reader, start=2):
                try:
                    key = (int(row[2]), int(row[5]))
                except (IndexError, ValueError):
                    violations.append(Violation(
                        "ordering", path, "row is not a decodable event row", line=line_no))
                    continue
                if last_key is not None and key <= last_key:
                    violations.append(Violation(
                        "ordering", path,
                        f"key {key} not above previous {last_key}", line=line_no))
                if first_key is None:
                    first_key = key
                last_key = key
                rows += 1
        if rows > PART_ROW_LIMIT:
            violations.append(Violation(
                "row_limit", path, f"{rows} rows exceed the {PART_ROW_LIMIT} limit"))
        if previous_last is not None and first_key is not None and first_key <= previous_last:
            violations.append(Violation(
                "ordering", path,
                f"first key {first_key} not above previous part's last {previous_last}"))
        if first_key is not None:
            actual_parts.append(PartRecord(part, name, rows, first_key, last_key))
        previous_last = last_key if last_key is not None else previous_last

    mpath = os.path.join(directory, f"manifest.{chain}.{event}")
    if not os.path.exists(mpath):
        violations.append(Violation("manifest", mpath, "manifest file missing"))
        return violations
    try:
        with open(mpath, "r", encoding="utf-8") as fh:
            manifest = ShardManifest.from_json(fh.read())
    except (OSError, ValueError, KeyError) as exc:
        violations.append(Violation("manifest", mpath, f"manifest unreadable: {exc}"))
        return violations
    if manifest.chain != chain or manifest.event != event:
        violations.append(Violation(
            "manifest", mpath,
            f"manifest is for {manifest.chain}/{manifest.event}, not {chain}/{event}"))
    declared = {p.part_number: p for p in manifest.parts}
    actual = {p.part_number: p for p in actual_parts}
    for number in sorted(set(declared) | set(actual)):
        if number not in declared:
            violations.append(Violation(
                "manifest", mpath, f"part{number:03d} on disk but not in manifest"))
        elif number not in actual:
            violations.append(Violation(
                "manifest", mpath, f"part{number:03d} in manifest but not on disk"))
        elif declared[number] != actual[number]:
            violations.append(Violation(
                "manifest", mpath,
                f"part{number:03d} metadata disagrees with file "
                f"(manifest {declared[number]}, actual {actual[number]})"))
    return violations


def validate_output(root: str) -> ValidationReport:
    """Check a whole output tree against the file contract."""
    violations: list[Violation] = []
    if not os.path.isdir(root):
        return ValidationReport([Violation("naming", root, "output directory missing")])
    for chain in sorted(os.listdir(root)):
        chain_dir = os.path.join(root, chain)
        if not os.path.isdir(chain_dir):
            continue
        for event in sorted(os.listdir(chain_dir)):
            directory = os.path.join(chain_dir, event)
            if not os.path.isdir(directory):
                continue
            violations.extend(_validate_stream(directory, chain, event))
    return ValidationReport(violations)
