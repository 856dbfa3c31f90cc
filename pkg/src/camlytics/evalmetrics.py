"""Report scoring: numeric consistency, content-match F1, hallucination rate,
and the weighted composite.

Claims are parsed from report text with a deterministic rule grammar (mode
keywords, known partition names, year tokens, unit-tagged numbers), so every
metric is reproducible offline.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MetricInputError

COMPOSITE_WEIGHTS = (0.40, 0.40, 0.20)  # NCS, CM-F1, (1 - HR)


class NumericKind(str, enum.Enum):
    TOTAL = "total"
    MEAN = "mean"
    PEAK = "peak"
    DELTA = "delta"
    PCT_DELTA = "pct_delta"
    OTHER = "other"


@dataclass(frozen=True)
class NumericItem:
    """One required numeric: reported value vs ground truth."""

    reported: float
    ground_truth: float
    kind: NumericKind = NumericKind.OTHER


@dataclass
class Finding:
    """One extracted or checklist claim: tags plus an optional numeric payload."""

    text: str = ""
    mode: str | None = None
    location: str | None = None
    kind: NumericKind | None = None
    value: float | None = None
    year: str | None = None
    supported: bool | None = None


@dataclass(frozen=True)
class Tolerance:
    """Kind-specific numeric tolerances: pct points for %-deltas, relative otherwise."""

    pct_delta_pp: float = 1.0
    relative: float = 0.01

    def within(self, kind: NumericKind | None, reported: float, truth: float) -> bool:
        if kind is NumericKind.PCT_DELTA:
            return abs(reported - truth) <= self.pct_delta_pp
        return abs(reported - truth) <= self.relative * max(1.0, abs(truth))


def relative_error(y: float, g: float) -> float:
    """|y - g| / max(1, |g|)."""
    if not (math.isfinite(y) and math.isfinite(g)):
        raise MetricInputError("relative_error requires finite inputs")
    return abs(y - g) / max(1.0, abs(g))


def ncs(items: list[NumericItem], n_missing: int = 0) -> float:
    """1 minus the mean clamped relative error over required numeric items.

    Required items the report never stated enter at the clamp (error 1).
    """
    if not items and n_missing == 0:
        raise MetricInputError("NCS is undefined with no required numeric items")
    total = sum(min(relative_error(i.reported, i.ground_truth), 1.0) for i in items)
    return 1.0 - (total + n_missing) / (len(items) + n_missing)


def _tokens(text: str | None) -> set[str]:
    if not text:
        return set()
    return set(re.findall(r"[a-z0-9]+", text.lower()))


def _location_overlap(predicted: str | None, truth: str | None) -> float:
    """Token overlap of the predicted location against the checklist location."""
    t = _tokens(truth)
    if not t:
        return 1.0  # no reference location to contradict
    p = _tokens(predicted)
    return len(p & t) / len(t)


def _findings_match(p: Finding, gt: Finding, tol: Tolerance) -> bool:
    if p.mode != gt.mode:
        return False
    if _location_overlap(p.location, gt.location) < 0.5:
        return False
    if (p.value is None) != (gt.value is None):
        return False
    if gt.value is not None:
        if p.kind != gt.kind:
            return False
        if not tol.within(gt.kind, p.value, gt.value):
            return False
    return True


def cm_f1(
    predicted: list[Finding], checklist: list[Finding], tolerance: Tolerance | None = None
) -> tuple[float, float, float]:
    """Greedy one-to-one fuzzy matching of reported findings against the checklist.

    Returns (precision, recall, f1); an empty prediction set scores 0.
    """
    if not checklist:
        raise MetricInputError("checklist must be non-empty")
    tol = tolerance or Tolerance()
    taken = [False] * len(checklist)
    matches = 0
    for p in predicted:
        for idx, gt in enumerate(checklist):
            if taken[idx]:
                continue
            if _findings_match(p, gt, tol):
                taken[idx] = True
                matches += 1
                break
    precision = matches / len(predicted) if predicted else 0.0
    recall = matches / len(checklist)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def hallucination_rate(claims: list[Finding]) -> float:
    """Unsupported claims over total claims; zero claims score 0 by convention."""
    if not claims:
        return 0.0
    unsupported = sum(1 for c in claims if c.supported is False)
    return unsupported / len(claims)


def composite_score(ncs_value: float, cm_f1_value: float, hr_value: float) -> float:
    """0.40 * NCS + 0.40 * CM-F1 + 0.20 * (1 - HR)."""
    for name, v in (("ncs", ncs_value), ("cm_f1", cm_f1_value), ("hr", hr_value)):
        if not 0.0 <= v <= 1.0:
            raise MetricInputError(f"{name} must lie in [0, 1], got {v}")
    w_ncs, w_f1, w_hr = COMPOSITE_WEIGHTS
    return w_ncs * ncs_value + w_f1 * cm_f1_value + w_hr * (1.0 - hr_value)


MODE_KEYWORDS = {
    "car": ("car", "cars", "vehicle", "vehicles", "passenger"),
    "truck": ("truck", "trucks", "freight"),
    "ped": ("ped", "peds", "pedestrian", "pedestrians"),
    "bike": ("bike", "bikes", "bicycle", "bicycles", "cyclist", "cyclists"),
}

_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")
_YEAR_RE = re.compile(r"\b(?:19|20)\d{2}\b")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+|\n+")

_KIND_KEYWORDS = (
    (NumericKind.MEAN, ("mean", "average")),
    (NumericKind.TOTAL, ("total", "sum")),
    (NumericKind.PEAK, ("peak",)),
    (NumericKind.DELTA, ("change", "delta", "difference", "shift")),
)


def _sentence_mode(sentence_lower: str) -> str | None:
    words = set(re.findall(r"[a-z]+", sentence_lower))
    for mode, keywords in MODE_KEYWORDS.items():
        if words & set(keywords):
            return mode
    return None


def _sentence_location(sentence: str, known_locations: list[str]) -> str | None:
    words = _tokens(sentence)
    best: str | None = None
    best_len = 0
    for loc in sorted(known_locations):
        loc_tokens = _tokens(loc)
        if loc_tokens and loc_tokens <= words and len(loc_tokens) > best_len:
            best, best_len = loc, len(loc_tokens)
    if best is not None:
        return best
    m = re.search(r"\b(?:zone|borough)\s+([A-Za-z][\w-]*)", sentence)
    return m.group(1) if m else None


def _number_kind(prefix: str, is_pct: bool) -> NumericKind:
    if is_pct:
        return NumericKind.PCT_DELTA
    context = prefix[-45:].lower()
    best_kind, best_pos = NumericKind.OTHER, -1
    for kind, keywords in _KIND_KEYWORDS:
        for kw in keywords:
            pos = context.rfind(kw)
            if pos > best_pos:
                best_kind, best_pos = kind, pos
    return best_kind


_CLAUSE_SEP_RE = re.compile(r",\s+|\s+and\s+|;\s*")


def _clause_spans(sentence: str) -> list[tuple[int, int]]:
    spans = []
    start = 0
    for m in _CLAUSE_SEP_RE.finditer(sentence):
        spans.append((start, m.start()))
        start = m.end()
    spans.append((start, len(sentence)))
    return spans


def _clause_year(clauses: list[tuple[int, int]], clause_years: list[list[str]], idx: int) -> str | None:
    """Year for clause idx: its own single year, else the nearest clause's."""
    if len(clause_years[idx]) == 1:
        return clause_years[idx][0]
    if clause_years[idx]:
        return clause_years[idx][0]
    candidates = [
        (abs(j - idx), j, ys[0]) for j, ys in enumerate(clause_years) if ys
    ]
    if not candidates:
        return None
    return min(candidates)[2]


def extract_findings(text: str, known_locations: list[str] | None = None) -> list[Finding]:
    """Parse numeric/spatial claims out of report text.

    Each non-year number becomes one Finding carrying the sentence's mode tag,
    the best-matching known location, the kind inferred from nearby unit words,
    and the year of its clause (levels only; deltas compare the two years).
    """
    known_locations = known_locations or []
    findings: list[Finding] = []
    for sentence in _SENTENCE_RE.split(text):
        sentence = sentence.strip()
        if not sentence:
            continue
        mode = _sentence_mode(sentence.lower())
        location = _sentence_location(sentence, known_locations)
        year_spans = {m.span() for m in _YEAR_RE.finditer(sentence)}
        clauses = _clause_spans(sentence)
        clause_years = [
            [m.group() for m in _YEAR_RE.finditer(sentence[a:b])] for a, b in clauses
        ]
        for m in _NUMBER_RE.finditer(sentence):
            if m.span() in year_spans:
                continue
            rest = sentence[m.end() : m.end() + 2]
            is_pct = rest.lstrip().startswith("%")
            kind = _number_kind(sentence[: m.start()], is_pct)
            year = None
            if kind not in (NumericKind.DELTA, NumericKind.PCT_DELTA):
                idx = next(
                    (i for i, (a, b) in enumerate(clauses) if a <= m.start() < b),
                    len(clauses) - 1,
                )
                year = _clause_year(clauses, clause_years, idx)
            findings.append(
                Finding(
                    text=sentence,
                    mode=mode,
                    location=location,
                    kind=kind,
                    value=float(m.group()),
                    year=year,
                )
            )
    return findings


GroundTruthKey = tuple[str | None, str | None, NumericKind, str | None]


@dataclass
class EvalContext:
    """Everything needed to score one report against the provided statistics."""

    ground_truth: dict[GroundTruthKey, float]
    checklist: list[Finding]
    known_locations: list[str] = field(default_factory=list)
    known_modes: list[str] = field(default_factory=lambda: list(MODE_KEYWORDS))
    tolerance: Tolerance = field(default_factory=Tolerance)


@dataclass
class EvalReport:
    """Scores for one generated report."""

    ncs: float
    precision: float
    recall: float
    cm_f1: float
    hr: float
    score: float
    item_count: int
    claim_count: int
    zero_claims: bool = False

    def to_json(self) -> dict:
        return {
            "ncs": self.ncs,
            "precision": self.precision,
            "recall": self.recall,
            "cm_f1": self.cm_f1,
            "hr": self.hr,
            "score": self.score,
            "item_count": self.item_count,
            "claim_count": self.claim_count,
            "zero_claims": self.zero_claims,
        }


def _claim_key(finding: Finding) -> GroundTruthKey:
    return (finding.location, finding.mode, finding.kind or NumericKind.OTHER, finding.year)


def _mark_support(claims: list[Finding], context: EvalContext) -> None:
    for c in claims:
        if c.mode is not None and c.mode not in context.known_modes:
            c.supported = False
            continue
        if c.location is not None and c.location not in context.known_locations:
            c.supported = False
            continue
        if c.value is None:
            c.supported = True
            continue
        truth = context.ground_truth.get(_claim_key(c))
        c.supported = truth is not None and context.tolerance.within(c.kind, c.value, truth)


def evaluate_report(
    report_text: str, context: EvalContext, claims: list[Finding] | None = None
) -> EvalReport:
    """Extract claims, mark their support, and compute all four scores."""
    if claims is None:
        claims = extract_findings(report_text, context.known_locations)
    _mark_support(claims, context)

    items: list[NumericItem] = []
    matched_keys: set[GroundTruthKey] = set()
    for c in claims:
        if c.value is None:
            continue
        key = _claim_key(c)
        if key in context.ground_truth and key not in matched_keys:
            items.append(NumericItem(c.value, context.ground_truth[key], key[2]))
            matched_keys.add(key)
    n_missing = len(context.ground_truth) - len(matched_keys)
    ncs_value = ncs(items, n_missing=n_missing) if context.ground_truth else 1.0

    precision, recall, f1 = cm_f1(claims, context.checklist, context.tolerance)
    hr_value = hallucination_rate(claims)
    return EvalReport(
        ncs=ncs_value,
        precision=precision,
        recall=recall,
        cm_f1=f1,
        hr=hr_value,
        score=composite_score(ncs_value, f1, hr_value),
        item_count=len(items) + n_missing,
        claim_count=len(claims),
        zero_claims=not claims,
    )


def load_checklist(path: str | Path) -> list[Finding]:
    """Read checklist findings from JSON-lines records."""
    out: list[Finding] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                Finding(
                    text=rec.get("text", ""),
                    mode=rec.get("mode"),
                    location=rec.get("location"),
                    kind=NumericKind(rec["kind"]) if rec.get("kind") else None,
                    value=rec.get("value"),
                    year=str(rec["year"]) if rec.get("year") is not None else None,
                )
            )
    return out
