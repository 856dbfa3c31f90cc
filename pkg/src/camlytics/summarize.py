"""Prompt construction (stages A-D), exemplar retrieval, candidate generation
with a temperature sweep, metric-ranked selection, and numeric validation with
corrective re-prompting.

Prompts embed a machine-readable data block so any conforming endpoint (or
the shipped deterministic mock) can ground its report in the exact numbers.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .aggregate import (
    PEAK_HOURS_DEFAULT,
    AnalysisWindow,
    ChangeRecord,
    Schema,
    StatBundle,
    aggregate_stats,
    changes_for,
    harmonize,
    top_changes,
)
from .corpus import CameraRegistry
from .detection import DetectionPacket
from .errors import ClaimExtractionError, PromptError, TransportError
from .evalmetrics import (
    EvalContext,
    EvalReport,
    Finding,
    NumericKind,
    Tolerance,
    evaluate_report,
    extract_findings,
)

logger = logging.getLogger(__name__)

MAIN_REPORT_WORD_LIMIT = 500
THEMES = ("mode_shifts", "zone_spillovers", "temporal_heterogeneity", "industry_impacts")
TEMPERATURE_SWEEP_DEFAULT = (0.2, 0.25, 0.3)

DATA_BLOCK_START = "[DATA]"
DATA_BLOCK_END = "[/DATA]"
EXTENDED_MARKER = "# Extended Report"


class Stage(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"


@dataclass(frozen=True)
class PromptStage:
    """Structural requirements of one prompt configuration."""

    stage: Stage
    required_sections: tuple[str, ...]
    numeric_rules: bool
    exemplars: bool

    @classmethod
    def for_stage(cls, stage: Stage | str, pre_label: str = "2024", post_label: str = "2025") -> "PromptStage":
        stage = Stage(stage)
        sections = () if stage is Stage.A else section_headers(pre_label, post_label)
        return cls(
            stage=stage,
            required_sections=sections,
            numeric_rules=stage in (Stage.C, Stage.D),
            exemplars=stage is Stage.D,
        )


def section_headers(pre_label: str = "2024", post_label: str = "2025") -> tuple[str, str, str]:
    """The exact main-report section headers."""
    return ("Overview", "Description of Data", f"Comparison of {pre_label} vs. {post_label}")


@dataclass(frozen=True)
class ExemplarChunk:
    """One domain-knowledge passage eligible for Stage D injection."""

    chunk_id: str
    theme: str
    text: str


def term_vector(text: str) -> dict[str, float]:
    """L2-normalized term-frequency vector over lowercased alphanumeric tokens."""
    counts: dict[str, float] = {}
    for tok in re.findall(r"[a-z0-9]+", text.lower()):
        counts[tok] = counts.get(tok, 0.0) + 1.0
    norm = sum(v * v for v in counts.values()) ** 0.5
    return {t: v / norm for t, v in counts.items()} if norm > 0 else {}


def cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    return sum(v * b.get(t, 0.0) for t, v in a.items())


def select_exemplars(
    library: list[ExemplarChunk], theme_query: str, top_k: int
) -> list[ExemplarChunk]:
    """Top-k chunks by cosine similarity to the query; similarity then id order."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    query = term_vector(theme_query)
    scored = sorted(
        library, key=lambda c: (-cosine(query, term_vector(c.text)), c.chunk_id)
    )
    return scored[:top_k]


def load_exemplar_library(path: str | Path) -> list[ExemplarChunk]:
    """Read the exemplar library from JSON-lines {chunk_id, theme, text}."""
    chunks: list[ExemplarChunk] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            chunks.append(ExemplarChunk(str(rec["chunk_id"]), rec["theme"], rec["text"]))
    return chunks


@dataclass
class StatsPayload:
    """Everything a report prompt is grounded in."""

    pre_label: str
    post_label: str
    pre_bundles: list[StatBundle]
    post_bundles: list[StatBundle]
    changes: list[ChangeRecord]
    top_increases: list[ChangeRecord] = field(default_factory=list)
    top_decreases: list[ChangeRecord] = field(default_factory=list)


def build_stats_payload(
    pre_packets: list[DetectionPacket],
    post_packets: list[DetectionPacket],
    pre_window: AnalysisWindow,
    post_window: AnalysisWindow,
    schema: Schema | str,
    mode: str,
    basis: str = "mean",
    k: int = 3,
    registry: CameraRegistry | None = None,
    peak_hours: tuple[int, int] = PEAK_HOURS_DEFAULT,
    tz_offset_s: int = 0,
) -> StatsPayload:
    """Harmonize the two windows and assemble everything a report prompt needs."""
    pre_h, post_h = harmonize(pre_packets, post_packets, pre_window, post_window, peak_hours, tz_offset_s)
    pre_bundles = aggregate_stats(pre_h, schema, mode, registry)
    post_bundles = aggregate_stats(post_h, schema, mode, registry)
    changes = changes_for(pre_bundles, post_bundles, basis)
    return StatsPayload(
        pre_label=pre_window.label,
        post_label=post_window.label,
        pre_bundles=pre_bundles,
        post_bundles=post_bundles,
        changes=changes,
        top_increases=top_changes(changes, k, "increase") if changes else [],
        top_decreases=top_changes(changes, k, "decrease") if changes else [],
    )


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def render_data_block(stats: StatsPayload) -> str:
    """Serialize the stats payload into the prompt's machine-readable block."""
    lines = [DATA_BLOCK_START, f"labels,{stats.pre_label},{stats.post_label}"]
    lines.append("changes")
    lines.append("partition,mode,pre_value,post_value,delta,pct_delta")
    for r in stats.changes:
        lines.append(
            f"{r.partition},{r.mode},{_fmt(r.pre_value)},{_fmt(r.post_value)},{_fmt(r.delta)},{_fmt(r.pct_delta)}"
        )
    for name, bundles in (("stats_pre", stats.pre_bundles), ("stats_post", stats.post_bundles)):
        lines.append(name)
        lines.append("partition,mode,total,mean,median,std,n")
        for b in bundles:
            lines.append(
                f"{b.partition},{b.mode},{b.total},{_fmt(b.mean)},{_fmt(b.median)},{_fmt(b.std)},{b.sample_count}"
            )
    for name, recs in (("top_increases", stats.top_increases), ("top_decreases", stats.top_decreases)):
        lines.append(name)
        lines.append("partition,mode,pct_delta")
        for r in recs:
            lines.append(f"{r.partition},{r.mode},{_fmt(r.pct_delta)}")
    lines.append(DATA_BLOCK_END)
    return "\n".join(lines)


def parse_data_block(prompt: str) -> dict:
    """Recover labels, change rows, and stat rows from a prompt's data block."""
    try:
        block = prompt.split(DATA_BLOCK_START, 1)[1].split(DATA_BLOCK_END, 1)[0]
    except IndexError:
        raise ValueError("prompt carries no data block") from None
    lines = [ln for ln in block.strip().splitlines() if ln.strip()]
    labels = lines[0].split(",")
    out: dict = {"pre_label": labels[1], "post_label": labels[2], "changes": [], "stats_pre": [], "stats_post": []}
    section = None
    for ln in lines[1:]:
        if ln in ("changes", "stats_pre", "stats_post", "top_increases", "top_decreases"):
            section = ln
            continue
        if ln.startswith("partition,"):
            continue
        parts = ln.split(",")
        if section == "changes":
            out["changes"].append(
                {
                    "partition": parts[0],
                    "mode": parts[1],
                    "pre_value": float(parts[2]),
                    "post_value": float(parts[3]),
                    "delta": float(parts[4]),
                    "pct_delta": float(parts[5]) if parts[5] else None,
                }
            )
        elif section in ("stats_pre", "stats_post"):
            out[section].append(
                {
                    "partition": parts[0],
                    "mode": parts[1],
                    "total": int(parts[2]),
                    "mean": float(parts[3]),
                    "median": float(parts[4]),
                    "std": float(parts[5]),
                    "n": int(parts[6]),
                }
            )
    return out


_BASE_INSTRUCTION = (
    "Summarize the traffic trends in the statistics below for a general audience. "
    "Write a main report (at most {limit} words) and then an extended report with "
    "full detail, separated by a line reading '{marker}'."
)

_STRUCTURE_RULES = (
    "Use the exact section headers \"{h0}\", \"{h1}\", and \"{h2}\" in the main "
    "report, keep a general-audience tone, and cover all four road-user modes "
    "(cars, trucks, pedestrians, cyclists) with spatial highlights."
)

_NUMERIC_RULES = (
    "Every major claim must state the {pre} value, the {post} value, the absolute "
    "change, and the percent change with units. Include peak and weekday/weekend "
    "splits where available, and list the top-{k} locations with the highest "
    "increases and decreases per mode."
)


def build_prompt(
    stage: Stage | str | PromptStage,
    stats: StatsPayload,
    exemplar_library: list[ExemplarChunk] | None = None,
    top_k: int = 2,
) -> str:
    """Deterministic prompt text for one stage over one stats payload."""
    if isinstance(stage, PromptStage):
        spec = stage
    else:
        spec = PromptStage.for_stage(stage, stats.pre_label, stats.post_label)
    if not stats.changes and not stats.pre_bundles:
        raise PromptError("stats payload is empty")
    parts = [
        _BASE_INSTRUCTION.format(limit=MAIN_REPORT_WORD_LIMIT, marker=EXTENDED_MARKER)
    ]
    if spec.required_sections:
        h0, h1, h2 = spec.required_sections
        parts.append(_STRUCTURE_RULES.format(h0=h0, h1=h1, h2=h2))
    if spec.numeric_rules:
        parts.append(_NUMERIC_RULES.format(pre=stats.pre_label, post=stats.post_label, k=top_k))
    if spec.exemplars:
        if not exemplar_library:
            raise PromptError("stage D requires a non-empty exemplar library")
        parts.append("Domain exemplars:")
        for theme in THEMES:
            theme_chunks = [c for c in exemplar_library if c.theme == theme]
            query = theme.replace("_", " ")
            for chunk in select_exemplars(theme_chunks, query, top_k) if theme_chunks else []:
                parts.append(f"[{theme}] {chunk.text}")
    parts.append(render_data_block(stats))
    return "\n\n".join(parts)


@dataclass(frozen=True)
class GenerationConfig:
    """Decoding settings for the text-generation endpoint."""

    temperature: float = 0.2
    top_p: float = 0.9
    n_best: int = 2
    max_retries: int = 3

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 0.3:
            raise ValueError("temperature must lie in [0.0, 0.3]")
        if not 0.8 <= self.top_p <= 1.0:
            raise ValueError("top_p must lie in [0.8, 1.0]")
        if self.n_best not in (2, 3):
            raise ValueError("n_best must be 2 or 3")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class ReportCandidate:
    """One generated report: the brief, the extended text, and claim bookkeeping."""

    main_report: str
    extended_report: str
    temperature: float
    attempt_index: int
    extracted_claims: list[Finding] = field(default_factory=list)


def parse_completion(text: str, temperature: float, attempt_index: int) -> ReportCandidate:
    if not text or not text.strip():
        raise ClaimExtractionError("empty completion text")
    if EXTENDED_MARKER in text:
        main, extended = text.split(EXTENDED_MARKER, 1)
    else:
        main, extended = text, ""
    main = main.strip()
    words = len(main.split())
    if words > MAIN_REPORT_WORD_LIMIT:
        logger.warning("main report exceeds %d words (%d)", MAIN_REPORT_WORD_LIMIT, words)
    return ReportCandidate(
        main_report=main,
        extended_report=extended.strip(),
        temperature=temperature,
        attempt_index=attempt_index,
    )


def generate_candidates(
    client,
    prompt: str,
    cfg: GenerationConfig,
    sweep: tuple[float, ...] = TEMPERATURE_SWEEP_DEFAULT,
) -> list[ReportCandidate]:
    """Self-consistency sweep: |sweep| x n_best candidates, tagged for tie-breaks."""
    if not sweep:
        raise ValueError("temperature sweep must be non-empty")
    candidates: list[ReportCandidate] = []
    for temp in sweep:
        try:
            completions = client.generate(prompt, temperature=temp, top_p=cfg.top_p, n=cfg.n_best)
        except TransportError as exc:
            raise TransportError(f"generation failed at temperature {temp}: {exc}") from exc
        for i, text in enumerate(completions):
            candidates.append(parse_completion(text, temperature=temp, attempt_index=i))
    return candidates


def _label_year(label: str) -> str:
    m = re.search(r"\b(?:19|20)\d{2}\b", label)
    return m.group() if m else label


def build_eval_context(
    stats: StatsPayload,
    checklist: list[Finding] | None = None,
    tolerance: Tolerance | None = None,
) -> EvalContext:
    """Ground-truth map, checklist, and vocabulary derived from the stats payload.

    Without an expert checklist, change records stand in: one expected finding
    per defined percent change.
    """
    pre_year = _label_year(stats.pre_label)
    post_year = _label_year(stats.post_label)
    gt: dict[tuple, float] = {}
    for r in stats.changes:
        gt[(r.partition, r.mode, NumericKind.MEAN, pre_year)] = r.pre_value
        gt[(r.partition, r.mode, NumericKind.MEAN, post_year)] = r.post_value
        gt[(r.partition, r.mode, NumericKind.DELTA, None)] = r.delta
        if r.pct_delta is not None:
            gt[(r.partition, r.mode, NumericKind.PCT_DELTA, None)] = r.pct_delta
    for year, bundles in ((pre_year, stats.pre_bundles), (post_year, stats.post_bundles)):
        for b in bundles:
            gt[(b.partition, b.mode, NumericKind.TOTAL, year)] = float(b.total)
            gt[(b.partition, b.mode, NumericKind.MEAN, year)] = b.mean
    locations = sorted(
        {r.partition for r in stats.changes}
        | {b.partition for b in stats.pre_bundles}
        | {b.partition for b in stats.post_bundles}
    )
    if checklist is None:
        checklist = [
            Finding(
                text=f"{r.mode} change in {r.partition}",
                mode=r.mode,
                location=r.partition,
                kind=NumericKind.PCT_DELTA,
                value=r.pct_delta,
            )
            for r in stats.changes
            if r.pct_delta is not None
        ]
    if not checklist:
        raise PromptError("cannot build an evaluation context without any checklist items")
    return EvalContext(
        ground_truth=gt,
        checklist=checklist,
        known_locations=locations,
        tolerance=tolerance or Tolerance(),
    )


def score_candidates(
    candidates: list[ReportCandidate], context: EvalContext
) -> list[tuple[ReportCandidate, EvalReport]]:
    """Evaluate every candidate's main report against the context."""
    scored: list[tuple[ReportCandidate, EvalReport]] = []
    for cand in candidates:
        claims = extract_findings(cand.main_report, context.known_locations)
        cand.extracted_claims = claims
        scored.append((cand, evaluate_report(cand.main_report, context, claims=claims)))
    return scored


def best_scored(
    scored: list[tuple[ReportCandidate, EvalReport]]
) -> tuple[ReportCandidate, EvalReport]:
    """Lexicographic pick: NCS desc, CM-F1 desc, HR asc, then temperature/attempt."""
    if not scored:
        raise ValueError("no candidates to select from")
    return min(
        scored,
        key=lambda t: (-t[1].ncs, -t[1].cm_f1, t[1].hr, t[0].temperature, t[0].attempt_index),
    )


def select_best(
    candidates: list[ReportCandidate], context: EvalContext
) -> tuple[ReportCandidate, EvalReport]:
    """Evaluate all candidates and pick the metric-ranked best."""
    if not candidates:
        raise ValueError("no candidates to select from")
    return best_scored(score_candidates(candidates, context))


_KIND_NAMES = {
    NumericKind.MEAN: "mean",
    NumericKind.TOTAL: "total",
    NumericKind.PEAK: "peak",
    NumericKind.DELTA: "absolute change",
    NumericKind.PCT_DELTA: "percent change",
    NumericKind.OTHER: "value",
}


@dataclass
class ValidationOutcome:
    """Accepted report or a rejection record listing every failed attempt."""

    accepted: bool
    candidate: ReportCandidate
    retries: int
    failures: list[list[str]] = field(default_factory=list)


def _numeric_violations(claims: list[Finding], context: EvalContext) -> list[str]:
    """Out-of-tolerance claims that correspond to a known ground-truth quantity."""
    tol = context.tolerance
    violations = []
    for c in claims:
        if c.value is None:
            continue
        key = (c.location, c.mode, c.kind or NumericKind.OTHER, c.year)
        truth = context.ground_truth.get(key)
        if truth is None:
            continue
        if not tol.within(c.kind, c.value, truth):
            if c.kind is NumericKind.PCT_DELTA:
                lo, hi = truth - tol.pct_delta_pp, truth + tol.pct_delta_pp
            else:
                span = tol.relative * max(1.0, abs(truth))
                lo, hi = truth - span, truth + span
            name = " ".join(filter(None, [c.location, c.mode, _KIND_NAMES[c.kind or NumericKind.OTHER]]))
            violations.append(
                f"Your {name} value {c.value} exceeds the allowed range [{lo:.4f}, {hi:.4f}]; "
                "recompute using the provided statistics."
            )
    return violations


def validate_and_reprompt(
    candidate: ReportCandidate,
    context: EvalContext,
    client,
    cfg: GenerationConfig,
    prompt: str,
) -> ValidationOutcome:
    """Accept the candidate or re-prompt with corrective hints up to max_retries.

    `failures` records the violations that triggered each corrective prompt;
    retries counts the corrective prompts issued.
    """
    current = candidate
    parse_error: str | None = None
    failures: list[list[str]] = []
    retries = 0
    while True:
        if parse_error is not None:
            violations = [f"completion parse error: {parse_error}"]
        else:
            current.extracted_claims = extract_findings(current.main_report, context.known_locations)
            violations = _numeric_violations(current.extracted_claims, context)
        if not violations:
            return ValidationOutcome(accepted=True, candidate=current, retries=retries, failures=failures)
        if retries >= cfg.max_retries:
            return ValidationOutcome(accepted=False, candidate=current, retries=retries, failures=failures)
        failures.append(violations)
        corrective = prompt + "\n\nCorrections required:\n" + "\n".join(violations)
        try:
            completions = client.generate(
                corrective, temperature=cfg.temperature, top_p=cfg.top_p, n=1
            )
        except TransportError as exc:
            raise TransportError(f"re-prompt {retries + 1} failed: {exc}") from exc
        retries += 1
        try:
            current = parse_completion(completions[0], temperature=cfg.temperature, attempt_index=retries)
            parse_error = None
        except ClaimExtractionError as exc:
            # Malformed completion: counts as a failed attempt on the next check.
            parse_error = str(exc)
            current = ReportCandidate(
                main_report="", extended_report="", temperature=cfg.temperature, attempt_index=retries
            )
