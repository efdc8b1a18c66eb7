"""Interactive query shell and result rendering helpers."""

from __future__ import annotations

import json
import sys
from typing import IO, Optional

from .flowdb import FlowDB
from .flowql import ResultTable, execute, explain, parse
from .flowql.parser import QLError

PROMPT = "flowsight> "
FORMATS = ("table", "csv", "json-lines")
COLUMNS = ("bin", "site", "key", "flows", "packets", "bytes", "exact")


def format_rows(table: ResultTable, fmt: str) -> str:
    dicts = table.as_dicts()
    if fmt == "json-lines":
        return "\n".join(json.dumps(d) for d in dicts)
    if fmt == "csv":
        lines = [",".join(COLUMNS)]
        for d in dicts:
            lines.append(",".join(str(d[c]) for c in COLUMNS))
        return "\n".join(lines)
    if not dicts:
        return "(no rows)"
    widths = {c: len(c) for c in COLUMNS}
    for d in dicts:
        for c in COLUMNS:
            widths[c] = max(widths[c], len(str(d[c])))
    header = "  ".join(c.ljust(widths[c]) for c in COLUMNS)
    sep = "  ".join("-" * widths[c] for c in COLUMNS)
    body = [
        "  ".join(str(d[c]).ljust(widths[c]) for c in COLUMNS) for d in dicts
    ]
    return "\n".join([header, sep] + body)


def caret_message(query: str, err: QLError) -> str:
    lines = query.splitlines() or [""]
    line = lines[min(err.line, len(lines)) - 1]
    pointer = " " * max(0, err.col - 1) + "^"
    return f"{line}\n{pointer}\nerror: {err.message}"


class Shell:
    """Line-oriented REPL with \\-prefixed meta commands."""

    def __init__(
        self,
        db: FlowDB,
        out: IO[str] = sys.stdout,
        workers: int = 1,
        timeout: float = 60.0,
    ):
        self.db = db
        self.out = out
        self.workers = workers
        self.timeout = timeout
        self.fmt = "table"
        self.timing = False

    def println(self, text: str = "") -> None:
        self.out.write(text + "\n")
        self.out.flush()

    def handle(self, line: str) -> bool:
        """Process one input line; False means quit."""
        line = line.strip()
        if not line:
            return True
        if line.startswith("\\"):
            return self.meta(line)
        try:
            table = execute(
                self.db, parse(line), timeout=self.timeout, workers=self.workers
            )
        except QLError as exc:
            self.println(caret_message(line, exc))
            return True
        self.println(format_rows(table, self.fmt))
        for warning in table.warnings:
            self.println(f"-- warning: {warning}")
        if self.timing:
            self.println(
                f"-- {len(table.rows)} row(s) in {table.elapsed_ms:.1f} ms "
                f"({table.trees_fetched} trees, {table.merges} merges)"
            )
        return True

    def meta(self, line: str) -> bool:
        parts = line.split(None, 1)
        cmd = parts[0]
        arg = parts[1].strip() if len(parts) > 1 else ""
        if cmd in ("\\q", "\\quit", "\\exit"):
            return False
        if cmd == "\\timing":
            self.timing = not self.timing
            self.println(f"timing is {'on' if self.timing else 'off'}")
            return True
        if cmd == "\\format":
            if arg not in FORMATS:
                self.println(f"usage: \\format {{{'|'.join(FORMATS)}}}")
            else:
                self.fmt = arg
                self.println(f"format is {arg}")
            return True
        if cmd == "\\explain":
            if not arg:
                self.println("usage: \\explain <query>")
                return True
            try:
                self.println(explain(self.db, parse(arg)))
            except QLError as exc:
                self.println(caret_message(arg, exc))
            return True
        if cmd == "\\help":
            self.println(
                "meta commands: \\explain <query>  \\timing  "
                "\\format table|csv|json-lines  \\q"
            )
            return True
        self.println(f"unknown meta command {cmd}; try \\help")
        return True

    def run(self, source: Optional[IO[str]] = None) -> None:
        interactive = source is None
        if interactive:
            try:
                import readline  # noqa: F401  (line editing when available)
            except ImportError:
                pass
            self.println("type a query, or \\help for meta commands")
        stream = source or sys.stdin
        while True:
            if interactive:
                try:
                    line = input(PROMPT)
                except (EOFError, KeyboardInterrupt):
                    self.println()
                    break
            else:
                line = stream.readline()
                if not line:
                    break
            if not self.handle(line):
                break
