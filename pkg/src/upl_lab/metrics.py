"""Latency decomposition, WER, nearest-rank percentiles and report files."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import kernels
from .errors import InvalidInputError

CSV_COLUMNS = ["utt_id", "first_token_delay_ms", "catchup_ms", "ep_lag_ms", "upl_ms", "cause", "S", "D", "I", "ref_len"]
SWEEP_COLUMNS = [
    "param", "value", "n", "wer", "deletions", "deletion_rate", "mean_rtf",
    "p50_upl_ms", "p90_upl_ms", "p50_first_token_delay_ms", "p90_first_token_delay_ms",
    "p50_catchup_ms", "p90_catchup_ms", "p50_ep_lag_ms", "p90_ep_lag_ms",
]
LATENCY_FIELDS = ("upl_ms", "first_token_delay_ms", "decoder_catchup_ms", "endpointer_lag_ms")


@dataclass
class LatencyRecord:
    utt_id: int
    first_token_delay_ms: float | None
    decoder_catchup_ms: float | None
    endpointer_lag_ms: float
    upl_ms: float
    cause: str


@dataclass
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_tokens: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.ref_tokens == 0:
            raise InvalidInputError("WER is undefined for an empty reference")
        return self.errors / self.ref_tokens


def latency_from_trace(trace, utt, stream_cfg=None) -> LatencyRecord:
    """Split UPL into decoder catchup and endpointer lag.

    Catchup and endpointer lag are measured against the emission time of
    the last final token, so their sum is the UPL by construction. With no
    tokens, the first-token delay and catchup are absent and the whole UPL
    is attributed to the endpointer.
    """
    shift = stream_cfg.frame_shift_ms if stream_cfg is not None else trace.frame_shift_ms
    speech_start = utt.speech_start_frame * shift
    eos_time = (utt.speech_end_frame + 1) * shift
    close = trace.mic_close_time
    upl = close - eos_time
    if trace.emission_times:
        first = trace.emission_times[0] - speech_start
        last = trace.emission_times[-1]
        catchup = last - eos_time
        ep_lag = close - last
    else:
        first = catchup = None
        ep_lag = upl
    return LatencyRecord(utt.id, first, catchup, ep_lag, upl, trace.close_cause)


def wer(ref: Sequence[int], hyp: Sequence[int]) -> WerBreakdown:
    if len(ref) == 0:
        raise InvalidInputError("WER is undefined for an empty reference")
    s, d, i = kernels.edit_distance(list(ref), list(hyp))
    return WerBreakdown(s, d, i, len(ref))


def percentile(values: Iterable[float], p: float) -> float:
    """Nearest-rank percentile."""
    vals = sorted(values)
    if not vals:
        raise InvalidInputError("percentile of an empty set")
    if not 0 < p <= 100:
        raise InvalidInputError("p must be in (0, 100]")
    k = math.ceil(p / 100.0 * len(vals) - 1e-12) - 1
    return vals[max(k, 0)]


@dataclass
class RunReport:
    records: list[LatencyRecord]
    wers: list[WerBreakdown | None]
    rtfs: list[float]
    aggregates: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, RunReport):
            return NotImplemented
        return (
            self.records == other.records
            and self.wers == other.wers
            and self.rtfs == other.rtfs
            and self.aggregates == other.aggregates
            and self.config == other.config
        )


def aggregate(records: Sequence[LatencyRecord], wers: Sequence[WerBreakdown | None], rtfs: Sequence[float], config: dict | None = None) -> RunReport:
    order = sorted(range(len(records)), key=lambda i: records[i].utt_id)
    records = [records[i] for i in order]
    wers = [wers[i] for i in order]
    rtfs = [rtfs[i] for i in order]
    agg: dict = {"n": len(records)}
    for name in LATENCY_FIELDS:
        pool = [getattr(r, name) for r in records if getattr(r, name) is not None]
        agg[f"{name}_count"] = len(pool)
        agg[f"p50_{name}"] = percentile(pool, 50) if pool else None
        agg[f"p90_{name}"] = percentile(pool, 90) if pool else None
    scored = [w for w in wers if w is not None]
    ref = sum(w.ref_tokens for w in scored)
    agg["wer_excluded"] = len(wers) - len(scored)
    if agg["wer_excluded"]:
        warnings.warn(f"{agg['wer_excluded']} utterances with empty references excluded from WER")
    agg["ref_tokens"] = ref
    agg["substitutions"] = sum(w.substitutions for w in scored)
    agg["deletions"] = sum(w.deletions for w in scored)
    agg["insertions"] = sum(w.insertions for w in scored)
    agg["wer"] = (agg["substitutions"] + agg["deletions"] + agg["insertions"]) / ref if ref else None
    agg["deletion_rate"] = agg["deletions"] / ref if ref else None
    agg["mean_rtf"] = sum(rtfs) / len(rtfs) if rtfs else None
    causes: dict[str, int] = {}
    for r in records:
        causes[r.cause] = causes.get(r.cause, 0) + 1
    agg["causes"] = dict(sorted(causes.items()))
    return RunReport(list(records), list(wers), list(rtfs), agg, dict(config or {}))


def report_to_dict(report: RunReport) -> dict:
    return {
        "config": report.config,
        "aggregates": report.aggregates,
        "records": [asdict(r) for r in report.records],
        "wers": [asdict(w) if w is not None else None for w in report.wers],
        "rtfs": report.rtfs,
    }


def report_from_dict(d: dict) -> RunReport:
    return RunReport(
        [LatencyRecord(**r) for r in d["records"]],
        [WerBreakdown(**w) if w is not None else None for w in d["wers"]],
        list(d["rtfs"]),
        d["aggregates"],
        d.get("config", {}),
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: RunReport, fmt: str, path) -> None:
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report_to_dict(report), sort_keys=True, indent=1) + "\n")
    elif fmt == "csv":
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r, e in zip(report.records, report.wers):
                w.writerow([
                    r.utt_id, _fmt(r.first_token_delay_ms), _fmt(r.decoder_catchup_ms), _fmt(r.endpointer_lag_ms),
                    _fmt(r.upl_ms), r.cause,
                    _fmt(e.substitutions if e else None), _fmt(e.deletions if e else None),
                    _fmt(e.insertions if e else None), _fmt(e.ref_tokens if e else None),
                ])
        # CSV stays a plain table; the configuration echo goes in a sidecar
        path.with_name(path.name + ".config.json").write_text(json.dumps(report.config, sort_keys=True, indent=1) + "\n")
    else:
        raise InvalidInputError(f"unknown report format {fmt!r}")


def load_report(path) -> RunReport:
    return report_from_dict(json.loads(Path(path).read_text()))


def sweep_row(param: str, value, report: RunReport) -> dict:
    a = report.aggregates
    return {
        "param": param,
        "value": value,
        "n": a["n"],
        "wer": a["wer"],
        "deletions": a["deletions"],
        "deletion_rate": a["deletion_rate"],
        "mean_rtf": a["mean_rtf"],
        "p50_upl_ms": a["p50_upl_ms"],
        "p90_upl_ms": a["p90_upl_ms"],
        "p50_first_token_delay_ms": a["p50_first_token_delay_ms"],
        "p90_first_token_delay_ms": a["p90_first_token_delay_ms"],
        "p50_catchup_ms": a["p50_decoder_catchup_ms"],
        "p90_catchup_ms": a["p90_decoder_catchup_ms"],
        "p50_ep_lag_ms": a["p50_endpointer_lag_ms"],
        "p90_ep_lag_ms": a["p90_endpointer_lag_ms"],
    }


def emit_sweep(rows: Sequence[dict], path, config: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
    path.with_name(path.name + ".config.json").write_text(json.dumps(config or {}, sort_keys=True, indent=1) + "\n")


def read_csv_rows(path) -> list[dict]:
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))
