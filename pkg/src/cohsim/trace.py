"""Line-oriented simulation trace format.

One record per line as space-separated ``key=value`` pairs; the first two
keys are always ``cycle=`` and ``kind=``.  Field order per kind is fixed so
golden-file regression is a plain diff.  A trace stream starts with a
``format=1`` header line.

kinds and their fields, in order:
  MSG    src dst type addr [data] [acks] [inj] [legal]
  CPU    core op addr stage [data]
  TROJAN core [phase] [action] [type] [addr]
  ALERT  alert_kind addr [details]
  END    cycles messages errors alerts deadlock

Addresses render as 0x-prefixed lowercase hex; line data renders as plain
lowercase hex bytes.  ``inj=1`` marks a hop fabricated by the Trojan rather
than a cache or directory; ``legal=`` appears only on hops delivered to a
directory slice and carries the directory's legality verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

FORMAT_HEADER = "format=1"

_FIELD_ORDER = {
    "MSG": ("src", "dst", "type", "addr", "data", "acks", "inj", "legal"),
    "CPU": ("core", "op", "addr", "stage", "data"),
    "TROJAN": ("core", "phase", "action", "type", "addr"),
    "ALERT": ("alert_kind", "addr", "details"),
    "END": ("cycles", "messages", "errors", "alerts", "deadlock"),
}


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    kind: str
    fields: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def get(self, key: str) -> str | None:
        for k, v in self.fields:
            if k == key:
                return v
        return None


def fmt_addr(addr: int) -> str:
    return f"{addr:#x}"


def fmt_data(data: bytes) -> str:
    return data.hex()


def make_record(cycle: int, kind: str, **fields) -> TraceRecord:
    """Build a record with the kind's canonical field order.

    Values may be str, int, bool or bytes; None fields are omitted.
    """
    order = _FIELD_ORDER[kind]
    items: list[tuple[str, str]] = []
    for key in order:
        if key not in fields:
            continue
        value = fields.pop(key)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "1" if value else "0"
        elif isinstance(value, bytes):
            value = fmt_data(value)
        else:
            value = str(value)
        items.append((key, value))
    if fields:
        raise ValueError(f"unknown {kind} fields: {sorted(fields)}")
    return TraceRecord(cycle=cycle, kind=kind, fields=tuple(items))


def emit_trace_record(record: TraceRecord) -> str:
    parts = [f"cycle={record.cycle}", f"kind={record.kind}"]
    parts.extend(f"{k}={v}" for k, v in record.fields)
    return " ".join(parts)


def render_trace(records: list[TraceRecord]) -> str:
    lines = [FORMAT_HEADER]
    lines.extend(emit_trace_record(r) for r in records)
    return "\n".join(lines) + "\n"


def parse_trace_line(line: str) -> dict[str, str]:
    """Split one trace line back into a key->value dict (tests, trace audits)."""
    out: dict[str, str] = {}
    for token in line.split():
        key, _, value = token.partition("=")
        out[key] = value
    return out
