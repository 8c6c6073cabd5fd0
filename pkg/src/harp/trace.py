"""Per-step decode traces: JSON-lines serialization and annotated rendering.

A trace is one header line (run configuration), one line per generated
token, and a closing summary line with run totals, in that order. The
format is streamable and round-trips exactly through parse/serialize,
wall-clock fields included.
"""

import json
from dataclasses import asdict, dataclass, field

from . import tokenizer

ANSI_RESET = "\x1b[0m"
ANSI_REFRAME = "\x1b[48;5;208m\x1b[30m"  # orange background
ANSI_DISCARD = "\x1b[9m\x1b[34m"  # blue strikethrough


@dataclass
class TraceStep:
    step_index: int
    token_id: int
    token_text: str
    entropy_bits: float
    reframed: bool
    reframe_count: int
    forward_passes: int
    wall_ns: int
    pre_reframe_top1: dict | None = None  # {"id": int, "text": str} iff reframed

    def to_record(self) -> dict:
        rec = {
            "kind": "step",
            "step_index": self.step_index,
            "token_id": self.token_id,
            "token_text": self.token_text,
            "entropy_bits": self.entropy_bits,
            "reframed": self.reframed,
            "reframe_count": self.reframe_count,
            "forward_passes": self.forward_passes,
            "wall_ns": self.wall_ns,
        }
        if self.pre_reframe_top1 is not None:
            rec["pre_reframe_top1"] = self.pre_reframe_top1
        return rec


@dataclass
class TraceHeader:
    checkpoint_sha256: str
    method: str
    decode_config: dict
    harp_config: dict | None
    seed: int
    cache_mode: str  # "on" | "off"

    def to_record(self) -> dict:
        return {"kind": "header", **asdict(self)}


@dataclass
class TraceSummary:
    total_forward_passes: int
    generated_tokens: int
    wall_ns_total: int

    def to_record(self) -> dict:
        return {"kind": "summary", **asdict(self)}


@dataclass
class DecodeTrace:
    header: TraceHeader
    steps: list[TraceStep] = field(default_factory=list)
    summary: TraceSummary | None = None

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header.to_record(), ensure_ascii=True)]
        lines.extend(json.dumps(s.to_record(), ensure_ascii=True) for s in self.steps)
        if self.summary is not None:
            lines.append(json.dumps(self.summary.to_record(), ensure_ascii=True))
        return "\n".join(lines) + "\n"

    @property
    def token_ids(self) -> list[int]:
        return [s.token_id for s in self.steps]


class TraceParseError(Exception):
    pass


def parse_trace(text: str) -> DecodeTrace:
    """Parse a JSON-lines trace; inverse of DecodeTrace.to_jsonl."""
    header = None
    steps: list[TraceStep] = []
    summary = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"line {lineno}: invalid JSON: {exc}") from exc
        kind = rec.pop("kind", None)
        try:
            if kind == "header":
                if header is not None:
                    raise TraceParseError(f"line {lineno}: duplicate header")
                header = TraceHeader(**rec)
            elif kind == "step":
                if header is None:
                    raise TraceParseError(f"line {lineno}: step before header")
                steps.append(TraceStep(**rec))
            elif kind == "summary":
                summary = TraceSummary(**rec)
            else:
                raise TraceParseError(f"line {lineno}: unknown record kind {kind!r}")
        except TypeError as exc:
            raise TraceParseError(f"line {lineno}: malformed {kind} record: {exc}") from exc
    if header is None:
        raise TraceParseError("trace has no header line")
    return DecodeTrace(header=header, steps=steps, summary=summary)


def _decode_run(token_ids: list[int]) -> str:
    return tokenizer.decode(token_ids) if token_ids else ""


def render_ansi(trace: DecodeTrace) -> str:
    """Terminal rendering: reframed tokens highlighted, and where the
    pre-reframe top-1 differs from the emitted token it is shown
    struck-through just before it. A trace with no reframes renders as the
    plain decoded text."""
    parts: list[str] = []
    run: list[int] = []
    for step in trace.steps:
        if not step.reframed:
            run.append(step.token_id)
            continue
        parts.append(_decode_run(run))
        run = []
        pre = step.pre_reframe_top1
        if pre is not None and pre["id"] != step.token_id:
            parts.append(f"{ANSI_DISCARD}{pre['text']}{ANSI_RESET}")
        parts.append(f"{ANSI_REFRAME}{step.token_text}{ANSI_RESET}")
    parts.append(_decode_run(run))
    return "".join(parts)


def _html_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_html(trace: DecodeTrace) -> str:
    parts: list[str] = [
        '<pre class="decode-trace">',
    ]
    run: list[int] = []
    for step in trace.steps:
        if not step.reframed:
            run.append(step.token_id)
            continue
        parts.append(_html_escape(_decode_run(run)))
        run = []
        pre = step.pre_reframe_top1
        if pre is not None and pre["id"] != step.token_id:
            parts.append(
                f'<s class="discarded" style="color:#4169e1">{_html_escape(pre["text"])}</s>'
            )
        parts.append(
            f'<mark class="reframed" style="background:#ff8c00">'
            f"{_html_escape(step.token_text)}</mark>"
        )
    parts.append(_html_escape(_decode_run(run)))
    parts.append("</pre>")
    return "".join(parts)


def render_trace(trace: DecodeTrace, fmt: str) -> str:
    if fmt == "ansi":
        return render_ansi(trace)
    if fmt == "html":
        return render_html(trace)
    raise ValueError(f"unknown render format {fmt!r}")
