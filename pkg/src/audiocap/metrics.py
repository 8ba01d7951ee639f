"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr-D.

BLEU uses corpus-level clipped n-gram precision, geometric mean, and the
closest-reference-length brevity penalty.  ROUGE-L is the per-pair LCS
F-measure (beta = 1.2), maximized over references and averaged.  CIDEr
follows the "D" variant: TF-IDF n-gram cosines for n = 1..4 with clipped
candidate counts and a Gaussian length penalty (sigma = 6), averaged over
references, on its native 0..10 scale.  The report multiplies BLEU and
ROUGE by 100 and CIDEr by 10 so numbers land on the usual leaderboard
scale.  METEOR and SPICE need external linguistic resources and are not
computed here; SPIDEr appears only when a SPICE score is supplied.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .errors import DataError
from .text import tokenize

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4


@dataclass
class EvalPair:
    candidate: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references or any(not r for r in self.references):
            raise DataError("every pair needs non-empty references")


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(pairs: list[EvalPair], n: int) -> float:
    """Corpus BLEU-n on the 0..100 scale."""
    if not 1 <= n <= 4:
        raise ValueError("bleu order must be in 1..4")
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for pair in pairs:
        c = len(pair.candidate)
        cand_len += c
        # closest reference length; ties favour the shorter reference
        ref_len += min((abs(len(r) - c), len(r)) for r in pair.references)[1]
        for k in range(1, n + 1):
            counts = _ngrams(pair.candidate, k)
            max_ref = Counter()
            for ref in pair.references:
                for g, m in _ngrams(ref, k).items():
                    max_ref[g] = max(max_ref[g], m)
            matched[k - 1] += sum(min(m, max_ref[g]) for g, m in counts.items())
            total[k - 1] += max(0, c - k + 1)
    if cand_len == 0 or any(t == 0 for t in total) or any(m == 0 for m in matched):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_precision)


def lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(pairs: list[EvalPair]) -> float:
    """Mean over pairs of the best per-reference LCS F-measure, 0..100."""
    scores = []
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            lcs = lcs_length(pair.candidate, ref)
            if lcs == 0 or not pair.candidate:
                continue
            prec = lcs / len(pair.candidate)
            rec = lcs / len(ref)
            best = max(best, (1 + ROUGE_BETA ** 2) * prec * rec
                       / (rec + ROUGE_BETA ** 2 * prec))
        scores.append(best)
    return 100.0 * sum(scores) / len(scores) if scores else 0.0


def _tfidf_vector(counts: Counter, document_frequency: Counter, log_n_docs: float):
    vec = [dict() for _ in range(CIDER_MAX_N)]
    norm = [0.0] * CIDER_MAX_N
    for gram, freq in counts.items():
        idf = log_n_docs - math.log(max(1.0, document_frequency[gram]))
        k = len(gram) - 1
        vec[k][gram] = freq * idf
        norm[k] += vec[k][gram] ** 2
    return vec, [math.sqrt(x) for x in norm]


def cider(pairs: list[EvalPair]) -> float:
    """CIDEr-D on its native scale (identical corpora score 10.0)."""
    if len(pairs) < 2:
        raise DataError("CIDEr IDF is degenerate on fewer than 2 items")
    df = Counter()
    for pair in pairs:
        seen = set()
        for ref in pair.references:
            for n in range(1, CIDER_MAX_N + 1):
                seen.update(_ngrams(ref, n))
        df.update(seen)
    log_n = math.log(len(pairs))

    def counts(tokens):
        all_counts = Counter()
        for n in range(1, CIDER_MAX_N + 1):
            all_counts.update(_ngrams(tokens, n))
        return all_counts

    total = 0.0
    for pair in pairs:
        cvec, cnorm = _tfidf_vector(counts(pair.candidate), df, log_n)
        item = 0.0
        for ref in pair.references:
            rvec, rnorm = _tfidf_vector(counts(ref), df, log_n)
            delta = len(pair.candidate) - len(ref)
            sim = 0.0
            for k in range(CIDER_MAX_N):
                dot = sum(min(w, rvec[k].get(g, 0.0)) * rvec[k].get(g, 0.0)
                          for g, w in cvec[k].items())
                if cnorm[k] > 0 and rnorm[k] > 0:
                    sim += dot / (cnorm[k] * rnorm[k])
            item += (sim / CIDER_MAX_N) * math.exp(-delta ** 2 / (2 * CIDER_SIGMA ** 2))
        total += 10.0 * item / len(pair.references)
    return total / len(pairs)


@dataclass
class MetricReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    rouge_l: float
    cider: float                   # x10 of the native scale, i.e. 0..100
    spice: float | None = None
    spider: float | None = None

    def to_dict(self) -> dict:
        return {
            "bleu_1": self.bleu_1, "bleu_2": self.bleu_2,
            "bleu_3": self.bleu_3, "bleu_4": self.bleu_4,
            "rouge_l": self.rouge_l, "cider": self.cider,
            "spice": self.spice,
            "spider": self.spider if self.spider is not None else "unavailable (needs SPICE)",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def render_table(self) -> str:
        cols = ["B-1", "B-2", "B-3", "B-4", "ROUGE-L", "CIDEr", "SPIDEr"]
        spider = f"{self.spider:7.1f}" if self.spider is not None else "    n/a"
        vals = [f"{v:7.1f}" for v in (self.bleu_1, self.bleu_2, self.bleu_3,
                                      self.bleu_4, self.rouge_l, self.cider)]
        return ("  ".join(f"{c:>7}" for c in cols) + "\n" + "  ".join(vals + [spider]))


def evaluate(candidates: dict[str, str], references: dict[str, list[str]],
             spice: float | None = None) -> MetricReport:
    """Score candidate captions against their references in one pass."""
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise DataError(f"no references for: {', '.join(missing)}")
    pairs = [EvalPair(tokenize(candidates[name]), [tokenize(r) for r in references[name]])
             for name in sorted(candidates)]
    if not pairs:
        raise DataError("nothing to evaluate")
    report = MetricReport(
        bleu_1=bleu(pairs, 1), bleu_2=bleu(pairs, 2),
        bleu_3=bleu(pairs, 3), bleu_4=bleu(pairs, 4),
        rouge_l=rouge_l(pairs), cider=10.0 * cider(pairs),
        spice=spice,
    )
    if spice is not None:
        report.spider = (report.cider + spice) / 2.0
    return report
