"""Computational text analysis and persona-usage analytics.

All metrics are deterministic, rule-based, and defined here once: canonical
word tokenization comes from the domain module, sentence splitting and the
syllable heuristic live here. p-values are Student-t approximations via the
regularized incomplete beta function, with the formula documented inline.
"""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .domain import DomainError, StoryBeat, count_words, tokenize_words


class AnalyticsError(DomainError):
    pass


class NoTransitions(AnalyticsError):
    pass


class UnknownPersona(AnalyticsError):
    def __init__(self, persona_id: str):
        self.persona_id = persona_id
        super().__init__(f"persona {persona_id!r} is not in the roster")


class UnpairedCorpora(AnalyticsError):
    pass


# ---------------------------------------------------------------------------
# Narrative metrics
# ---------------------------------------------------------------------------

METRIC_NAMES = ("word_count", "gunning_fog", "dialogue_ratio", "location_count")


@dataclass(frozen=True)
class NarrativeMetrics:
    word_count: int
    gunning_fog: float
    dialogue_ratio: float
    location_count: int

    def as_dict(self) -> dict[str, float]:
        return {
            "word_count": self.word_count,
            "gunning_fog": self.gunning_fog,
            "dialogue_ratio": self.dialogue_ratio,
            "location_count": self.location_count,
        }


_VOWEL_GROUPS = re.compile(r"[aeiouy]+")
_WORD_EDGES = re.compile(r"^[^A-Za-z]+|[^A-Za-z]+$")

# Terminal punctuation followed by whitespace and a capital opens a new
# sentence, unless the preceding token is a known abbreviation.
_SENTENCE_BOUNDARY = re.compile(r"[.!?]+[\"'”’)\]]*\s+(?=[\"'“‘(\[]*[A-Z])")
_ABBREVIATIONS = frozenset(
    {"mr", "mrs", "ms", "dr", "prof", "st", "sgt", "capt", "lt", "gen", "rev", "jr", "sr", "vs"}
)

_QUOTED_SPANS = (re.compile(r"\"[^\"]*\""), re.compile(r"“[^”]*”"))

# Spatial prepositions that introduce rule-matched place phrases.
_LOCATION_PHRASE = re.compile(
    r"\b(?:[Ii]n|[Aa]t|[Ii]nside|[Nn]ear|[Bb]eneath|[Aa]cross)\s+"
    r"(?:(?:the|a|an)\s+)?"
    r"([A-Z][\w'’-]*(?:\s+[A-Z][\w'’-]*)*)"
)
_ARTICLES = ("the ", "a ", "an ")


def count_syllables(word: str) -> int:
    """Vowel-group count (aeiouy), minus a silent trailing 'e', floor one."""
    stripped = _WORD_EDGES.sub("", word).lower()
    if not stripped:
        return 1
    groups = len(_VOWEL_GROUPS.findall(stripped))
    if groups > 1 and stripped.endswith("e") and stripped[-2] not in "aeiouy":
        groups -= 1
    return max(groups, 1)


def count_sentences(text: str) -> int:
    """Deterministic sentence count: boundary matches plus the final sentence."""
    if not text.strip():
        return 0
    boundaries = 0
    for match in _SENTENCE_BOUNDARY.finditer(text):
        prefix = text[: match.start()]
        token = re.search(r"([A-Za-z]+)$", prefix)
        if token and token.group(1).lower() in _ABBREVIATIONS:
            continue
        boundaries += 1
    return boundaries + 1


def _merged_quote_spans(text: str) -> list[tuple[int, int]]:
    spans = sorted(
        (m.start(), m.end()) for pattern in _QUOTED_SPANS for m in pattern.finditer(text)
    )
    merged: list[tuple[int, int]] = []
    for start, end in spans:
        if merged and start < merged[-1][1]:
            merged[-1] = (merged[-1][0], max(end, merged[-1][1]))
        else:
            merged.append((start, end))
    return merged


def dialogue_ratio(text: str) -> float:
    """Share of canonical words lying inside quoted spans (straight or curly
    double-quote pairs)."""
    total = count_words(text)
    if total == 0:
        return 0.0
    spans = _merged_quote_spans(text)
    if not spans:
        return 0.0
    quoted = 0
    for match in re.finditer(r"\S+", text):
        token = match.group(0)
        if not tokenize_words(token):
            continue  # punctuation-only token
        for start, end in spans:
            if match.start() < end and match.end() > start:
                quoted += 1
                break
    return quoted / total


def normalize_location(location: str) -> str:
    cleaned = re.sub(r"\s+", " ", location.strip().lower())
    cleaned = cleaned.strip(".,;:!?\"'”’“‘()[]")
    for article in _ARTICLES:
        if cleaned.startswith(article):
            cleaned = cleaned[len(article):]
            break
    return cleaned


def extract_locations(text: str, beats: Iterable[StoryBeat] = ()) -> set[str]:
    """Beat settings are authoritative; text adds capitalized place phrases
    following a fixed spatial-preposition list."""
    locations = {normalize_location(b.setting.location) for b in beats}
    for match in _LOCATION_PHRASE.finditer(text):
        locations.add(normalize_location(match.group(1)))
    locations.discard("")
    return locations


def gunning_fog(words: int, sentences: int, complex_words: int) -> float:
    """0.4 * (words/sentences + 100 * complex_words/words)."""
    if words == 0 or sentences == 0:
        return 0.0
    return 0.4 * (words / sentences + 100.0 * complex_words / words)


def compute_metrics(story_text: str, beats: Iterable[StoryBeat] = ()) -> NarrativeMetrics:
    words = tokenize_words(story_text)
    if not words:
        return NarrativeMetrics(0, 0.0, 0.0, len(extract_locations("", beats)))
    sentences = count_sentences(story_text)
    complex_words = sum(1 for w in words if count_syllables(w) >= 3)
    return NarrativeMetrics(
        word_count=len(words),
        gunning_fog=gunning_fog(len(words), sentences, complex_words),
        dialogue_ratio=dialogue_ratio(story_text),
        location_count=len(extract_locations(story_text, beats)),
    )


# ---------------------------------------------------------------------------
# Persona selection analytics
# ---------------------------------------------------------------------------


@dataclass
class TransitionMatrix:
    """Counts of consecutive persona selections across sessions."""

    persona_ids: tuple[str, ...]
    counts: list[list[int]]  # counts[i][j] = transitions persona_i -> persona_j
    opening_counts: list[int]  # first selection per non-empty log

    def total_transitions(self) -> int:
        return sum(sum(row) for row in self.counts)

    def cell(self, source: str, target: str) -> int:
        i = self.persona_ids.index(source)
        j = self.persona_ids.index(target)
        return self.counts[i][j]

    def as_dict(self) -> dict:
        return {
            "persona_ids": list(self.persona_ids),
            "counts": [list(row) for row in self.counts],
            "opening_counts": list(self.opening_counts),
        }


def build_transition_matrix(
    selection_logs: Sequence[Sequence[str]],
    persona_ids: Sequence[str],
) -> TransitionMatrix:
    ids = tuple(persona_ids)
    position = {pid: i for i, pid in enumerate(ids)}
    n = len(ids)
    counts = [[0] * n for _ in range(n)]
    openings = [0] * n
    for log in selection_logs:
        for pid in log:
            if pid not in position:
                raise UnknownPersona(pid)
        if not log:
            continue
        openings[position[log[0]]] += 1
        for prev, nxt in zip(log, log[1:]):
            counts[position[prev]][position[nxt]] += 1
    return TransitionMatrix(persona_ids=ids, counts=counts, opening_counts=openings)


@dataclass(frozen=True)
class PairAsymmetry:
    persona_a: str
    persona_b: str
    forward: int  # a -> b
    reverse: int  # b -> a
    diff: int  # |forward - reverse|


@dataclass(frozen=True)
class AsymmetryStats:
    pairs: tuple[PairAsymmetry, ...]
    mean: float
    sd: float | None  # sample sd; undefined for a single pair
    t_stat: float | None  # one-sample t of the diffs against zero
    df: int

    def as_dict(self) -> dict:
        return {
            "pairs": [
                {
                    "persona_a": p.persona_a,
                    "persona_b": p.persona_b,
                    "forward": p.forward,
                    "reverse": p.reverse,
                    "diff": p.diff,
                }
                for p in self.pairs
            ],
            "mean": self.mean,
            "sd": self.sd,
            "t_stat": self.t_stat,
            "df": self.df,
        }


def asymmetry_stats(matrix: TransitionMatrix) -> AsymmetryStats:
    """Forward/reverse imbalance over every unordered pair with traffic.

    Self-loops with traffic count as active pairs (their diff is zero by
    construction). The t statistic is the one-sample t of the diffs against
    zero with df = n - 1.
    """
    pairs: list[PairAsymmetry] = []
    ids = matrix.persona_ids
    for i in range(len(ids)):
        for j in range(i, len(ids)):
            forward = matrix.counts[i][j]
            reverse = matrix.counts[j][i]
            traffic = forward if i == j else forward + reverse
            if traffic <= 0:
                continue
            diff = 0 if i == j else abs(forward - reverse)
            pairs.append(PairAsymmetry(ids[i], ids[j], forward, reverse, diff))
    if not pairs:
        raise NoTransitions("no persona pair has any transition traffic")
    diffs = [p.diff for p in pairs]
    mean = statistics.fmean(diffs)
    if len(diffs) < 2:
        return AsymmetryStats(tuple(pairs), mean, None, None, 0)
    sd = statistics.stdev(diffs)
    if sd == 0.0:
        t_stat = 0.0 if mean == 0.0 else math.inf
    else:
        t_stat = mean / (sd / math.sqrt(len(diffs)))
    return AsymmetryStats(tuple(pairs), mean, sd, t_stat, len(diffs) - 1)


# ---------------------------------------------------------------------------
# Corpus comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricComparison:
    metric: str
    mean_a: float
    sd_a: float
    mean_b: float
    sd_b: float
    mean_diff: float  # mean of (b - a)
    sd_diff: float
    t_stat: float
    df: int
    p_value: float

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "mean_a": self.mean_a,
            "sd_a": self.sd_a,
            "mean_b": self.mean_b,
            "sd_b": self.sd_b,
            "mean_diff": self.mean_diff,
            "sd_diff": self.sd_diff,
            "t_stat": self.t_stat,
            "df": self.df,
            "p_value": self.p_value,
        }


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz's continued fraction for the incomplete beta function."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t_stat: float, df: int) -> float:
    """Two-sided p for Student's t: P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)."""
    if df <= 0:
        return 1.0
    if math.isinf(t_stat):
        return 0.0
    if t_stat == 0.0:
        return 1.0
    x = df / (df + t_stat * t_stat)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def compare_corpora(
    corpus_a: Sequence[tuple[str, NarrativeMetrics]],
    corpus_b: Sequence[tuple[str, NarrativeMetrics]],
) -> dict[str, MetricComparison]:
    """Paired t-test per metric over corpora paired by participant id."""
    if len(corpus_a) != len(corpus_b):
        raise UnpairedCorpora(
            f"corpora differ in length: {len(corpus_a)} vs {len(corpus_b)}"
        )
    if len(corpus_a) < 2:
        raise UnpairedCorpora("paired comparison needs at least 2 stories per corpus")
    by_id_a: Mapping[str, NarrativeMetrics] = dict(corpus_a)
    by_id_b: Mapping[str, NarrativeMetrics] = dict(corpus_b)
    if set(by_id_a) != set(by_id_b):
        raise UnpairedCorpora("participant ids do not match between corpora")
    ids = sorted(by_id_a)

    results: dict[str, MetricComparison] = {}
    for metric in METRIC_NAMES:
        values_a = [float(getattr(by_id_a[i], metric)) for i in ids]
        values_b = [float(getattr(by_id_b[i], metric)) for i in ids]
        diffs = [b - a for a, b in zip(values_a, values_b)]
        mean_diff = statistics.fmean(diffs)
        sd_diff = statistics.stdev(diffs)
        n = len(diffs)
        if sd_diff == 0.0:
            t_stat = 0.0 if mean_diff == 0.0 else math.copysign(math.inf, mean_diff)
        else:
            t_stat = mean_diff / (sd_diff / math.sqrt(n))
        results[metric] = MetricComparison(
            metric=metric,
            mean_a=statistics.fmean(values_a),
            sd_a=statistics.stdev(values_a),
            mean_b=statistics.fmean(values_b),
            sd_b=statistics.stdev(values_b),
            mean_diff=mean_diff,
            sd_diff=sd_diff,
            t_stat=t_stat,
            df=n - 1,
            p_value=student_t_two_sided_p(t_stat, n - 1),
        )
    return results
