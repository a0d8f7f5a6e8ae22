"""Text-overlap metrics: BLEU-1..4, ROUGE-L, CIDEr-D, and METEOR-lite.

METEOR-lite keeps the harmonic-mean-plus-chunk-penalty shape of METEOR but
matches exact unigrams only (no stemming or synonym stages, which need
external lexical databases); absolute values therefore differ from the
official scorer. It doubles as the sentence-level reward for policy-gradient
fine-tuning.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .data import DataError


@dataclass
class EvalPair:
    hypothesis: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references or any(not r for r in self.references):
            raise DataError("EvalPair: references must be non-empty")


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider_d: float
    meteor_lite: float

    def as_dict(self) -> dict[str, float]:
        return {
            "bleu1": self.bleu1, "bleu2": self.bleu2,
            "bleu3": self.bleu3, "bleu4": self.bleu4,
            "rouge_l": self.rouge_l, "cider_d": self.cider_d,
            "meteor_lite": self.meteor_lite,
        }


def ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def bleu(hyps: list[list[str]], refs: list[list[list[str]]], n_max: int = 4) -> list[float]:
    """Corpus BLEU-1..n_max: clipped modified precision, geometric mean,
    brevity penalty min(1, e^(1-r/c)). When a precision for n >= 2 is zero
    (or undefined), add-1 smoothing applies to that order only."""
    if not hyps or len(hyps) != len(refs):
        raise DataError(f"bleu: got {len(hyps)} hypotheses, {len(refs)} reference sets")
    match = [0] * (n_max + 1)
    total = [0] * (n_max + 1)
    hyp_len = 0
    ref_len = 0
    for hyp, ref_set in zip(hyps, refs):
        if not ref_set:
            raise DataError("bleu: empty reference set")
        hyp_len += len(hyp)
        # closest reference length; ties go to the shorter reference
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in ref_set)[1]
        for n in range(1, n_max + 1):
            hc = ngrams(hyp, n)
            if not hc:
                continue
            clip = Counter()
            for r in ref_set:
                rc = ngrams(r, n)
                for g, c in rc.items():
                    clip[g] = max(clip[g], c)
            match[n] += sum(min(c, clip[g]) for g, c in hc.items())
            total[n] += sum(hc.values())
    precisions = [0.0] * (n_max + 1)
    for n in range(1, n_max + 1):
        if total[n] > 0 and match[n] > 0:
            precisions[n] = match[n] / total[n]
        elif n >= 2:
            precisions[n] = (match[n] + 1) / (total[n] + 1)
    if hyp_len == 0:
        return [0.0] * n_max
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    scores = []
    for k in range(1, n_max + 1):
        if any(precisions[n] == 0.0 for n in range(1, k + 1)):
            scores.append(0.0)
            continue
        log_mean = sum(math.log(precisions[n]) for n in range(1, k + 1)) / k
        scores.append(bp * math.exp(log_mean))
    return scores


# ---------------------------------------------------------------------------
# ROUGE-L
# ---------------------------------------------------------------------------


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(hyp: list[str], ref, beta: float = 1.2) -> float:
    """LCS F-measure; with several references the best score is kept."""
    refs = ref if ref and isinstance(ref[0], list) else [ref]
    best = 0.0
    for r in refs:
        if not r:
            raise DataError("rouge_l: empty reference")
        if not hyp:
            continue
        lcs = _lcs_length(hyp, r)
        if lcs == 0:
            continue
        rec = lcs / len(r)
        prec = lcs / len(hyp)
        f = (1 + beta ** 2) * rec * prec / (rec + beta ** 2 * prec)
        best = max(best, f)
    return best


# ---------------------------------------------------------------------------
# CIDEr-D
# ---------------------------------------------------------------------------


def _cider_doc_freq(refs: list[list[list[str]]], n_max: int) -> list[Counter]:
    doc_freq: list[Counter] = [Counter() for _ in range(n_max + 1)]
    for ref_set in refs:
        for n in range(1, n_max + 1):
            seen = set()
            for r in ref_set:
                seen.update(ngrams(r, n))
            for g in seen:
                doc_freq[n][g] += 1
    return doc_freq


def _cider_pair(hyp: list[str], ref_set: list[list[str]],
                doc_freq: list[Counter], log_docs: float,
                n_max: int, sigma: float) -> float:
    def idf(n: int, g) -> float:
        return log_docs - math.log(max(1.0, doc_freq[n][g]))

    def tfidf(tokens: list[str], n: int) -> tuple[dict, float]:
        vec = {g: c * idf(n, g) for g, c in ngrams(tokens, n).items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        return vec, norm

    hyp_vecs = [tfidf(hyp, n) for n in range(1, n_max + 1)]
    per_n = [0.0] * n_max
    for r in ref_set:
        delta = len(hyp) - len(r)
        penalty = math.exp(-(delta * delta) / (2.0 * sigma * sigma))
        for n in range(1, n_max + 1):
            hvec, hnorm = hyp_vecs[n - 1]
            rvec, rnorm = tfidf(r, n)
            if hnorm == 0.0 or rnorm == 0.0:
                continue
            dot = sum(min(hv, rvec[g]) * rvec[g] for g, hv in hvec.items() if g in rvec)
            per_n[n - 1] += penalty * dot / (hnorm * rnorm)
    return sum(per_n) / n_max / len(ref_set) * 10.0


def cider_d(hyps: list[list[str]], refs: list[list[list[str]]],
            n_max: int = 4, sigma: float = 6.0) -> float:
    """Consensus score: TF-IDF n-gram cosine with reference count clipping
    and a Gaussian length penalty, averaged over n = 1..n_max, times 10.
    Document frequencies come from the reference corpus, so at least two
    samples are required."""
    if len(hyps) != len(refs):
        raise DataError(f"cider_d: got {len(hyps)} hypotheses, {len(refs)} reference sets")
    if len(hyps) < 2:
        raise DataError("cider_d: needs a corpus of >= 2 samples for document frequencies")
    doc_freq = _cider_doc_freq(refs, n_max)
    log_docs = math.log(len(hyps))
    total = sum(
        _cider_pair(hyp, ref_set, doc_freq, log_docs, n_max, sigma)
        for hyp, ref_set in zip(hyps, refs)
    )
    return total / len(hyps)


def make_cider_reward(refs_corpus: list[list[list[str]]],
                      n_max: int = 4, sigma: float = 6.0):
    """Sentence-level CIDEr-D reward with document frequencies frozen from a
    reference corpus (scaled back to [0, 1] for use as a reward)."""
    if len(refs_corpus) < 2:
        raise DataError("cider reward: needs >= 2 reference documents")
    doc_freq = _cider_doc_freq(refs_corpus, n_max)
    log_docs = math.log(len(refs_corpus))

    def reward(hyp: list[str], ref: list[str]) -> float:
        return _cider_pair(hyp, [ref], doc_freq, log_docs, n_max, sigma) / 10.0

    return reward


# ---------------------------------------------------------------------------
# METEOR-lite
# ---------------------------------------------------------------------------


def _align_chunks(hyp: list[str], ref: list[str]) -> tuple[int, int]:
    """Exact-unigram alignment, greedy left to right over the hypothesis.

    Each matched hypothesis token takes the reference position that extends
    the current contiguous chunk when available, otherwise the smallest free
    position. Returns (matches, chunks)."""
    available: dict[str, list[int]] = {}
    for pos, tok in enumerate(ref):
        available.setdefault(tok, []).append(pos)
    m = 0
    chunks = 0
    prev_ref = None
    prev_hyp = None
    for pos, tok in enumerate(hyp):
        slots = available.get(tok)
        if not slots:
            continue
        if (prev_ref is not None and prev_hyp == pos - 1
                and prev_ref + 1 in slots):
            pick = prev_ref + 1
        else:
            pick = slots[0]
        slots.remove(pick)
        contiguous = (prev_ref is not None and prev_hyp == pos - 1
                      and pick == prev_ref + 1)
        if not contiguous:
            chunks += 1
        m += 1
        prev_ref = pick
        prev_hyp = pos
    return m, chunks


def meteor_lite(hyp: list[str], ref: list[str]) -> float:
    """Exact-match METEOR: F_mean = 10PR/(R+9P), penalty 0.5 (chunks/m)^3."""
    if not hyp or not ref:
        return 0.0
    m, chunks = _align_chunks(hyp, ref)
    if m == 0:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


# ---------------------------------------------------------------------------
# corpus scoring
# ---------------------------------------------------------------------------


def score_corpus(pairs: list[EvalPair], meteor_mode: str = "sentence") -> MetricReport:
    """Aggregate all metrics over a corpus of hypothesis/reference pairs.

    METEOR-lite is sentence-averaged by default; corpus mode pools the
    match, chunk, and length counts before applying the formula."""
    if not pairs:
        raise DataError("score_corpus: empty corpus")
    hyps = [p.hypothesis for p in pairs]
    refs = [p.references for p in pairs]
    b = bleu(hyps, refs)
    rouge = sum(rouge_l(p.hypothesis, p.references) for p in pairs) / len(pairs)
    cider = cider_d(hyps, refs) if len(pairs) >= 2 else 0.0
    if meteor_mode == "sentence":
        meteor = sum(
            max(meteor_lite(p.hypothesis, r) for r in p.references) for p in pairs
        ) / len(pairs)
    elif meteor_mode == "corpus":
        tm = tc = th = tr = 0
        for p in pairs:
            best = max(p.references, key=lambda r: meteor_lite(p.hypothesis, r))
            m, chunks = _align_chunks(p.hypothesis, best)
            tm += m
            tc += chunks
            th += len(p.hypothesis)
            tr += len(best)
        if tm == 0:
            meteor = 0.0
        else:
            precision, recall = tm / th, tm / tr
            f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
            meteor = f_mean * (1.0 - 0.5 * (tc / tm) ** 3)
    else:
        raise DataError(f"score_corpus: unknown meteor_mode {meteor_mode!r}")
    return MetricReport(
        bleu1=b[0], bleu2=b[1], bleu3=b[2], bleu4=b[3],
        rouge_l=rouge, cider_d=cider, meteor_lite=meteor,
    )


def format_report(report: MetricReport) -> str:
    rows = report.as_dict()
    width = max(len(k) for k in rows)
    lines = [f"{k:<{width}}  {v:.4f}" for k, v in rows.items()]
    return "\n".join(lines)


def report_kv_lines(report: MetricReport) -> list[str]:
    return [f"{k}={v:.6f}" for k, v in report.as_dict().items()]
