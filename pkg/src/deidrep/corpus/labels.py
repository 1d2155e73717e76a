"""Projection between character spans and per-token BIO labels."""
from __future__ import annotations

from .text import make_token, split_sentences, tokenize
from .types import OUTSIDE, Document, PhiSpan, Sentence, label_category


def align_labels(document: Document, sentences: list[Sentence]) -> list[Sentence]:
    """Label tokens overlapping a PHI span by at least one character.

    The first token of a span inside a sentence gets ``B-``, the rest ``I-``.
    """
    spans = sorted(document.spans, key=lambda s: s.start)
    out = []
    for sent in sentences:
        labels = []
        prev_span = None
        for tok in sent.tokens:
            hit = None
            for idx, span in enumerate(spans):
                if span.start >= tok.end:
                    break
                if span.end > tok.start:
                    hit = idx
                    break
            if hit is None:
                labels.append(OUTSIDE)
            else:
                prefix = "I" if hit == prev_span else "B"
                labels.append(f"{prefix}-{spans[hit].category.value}")
            prev_span = hit
        out.append(Sentence(sent.doc_id, list(sent.tokens), labels))
    return out


def labeled_sentences(document: Document) -> list[Sentence]:
    return align_labels(document, split_sentences(document))


def label_spans(sentence: Sentence) -> list[tuple[int, int, str]]:
    """Token index ranges ``(first, last_exclusive, category)`` encoded by BIO labels."""
    runs = []
    for i, label in enumerate(sentence.labels):
        if label == OUTSIDE:
            continue
        cat = label[2:]
        if label.startswith("I-") and runs and runs[-1][1] == i and runs[-1][2] == cat:
            runs[-1] = (runs[-1][0], i + 1, cat)
        else:
            runs.append((i, i + 1, cat))
    return runs


def sentences_to_document(doc_id: str, sentences: list[Sentence]) -> Document:
    """Render labeled sentences as one blank-line segmented document.

    Tokens that touched in the source stay touching, all other gaps become a
    single space; spans are rebuilt from the labels.
    """
    parts: list[str] = []
    spans: list[PhiSpan] = []
    pos = 0
    for n, sent in enumerate(sentences):
        if n:
            parts.append("\n\n")
            pos += 2
        starts = []
        prev = None
        for tok in sent.tokens:
            if prev is not None:
                gap = "" if tok.start == prev.end and _stays_split(prev.text, tok.text) else " "
                parts.append(gap)
                pos += len(gap)
            starts.append(pos)
            parts.append(tok.text)
            pos += len(tok.text)
            prev = tok
        for first, last, cat in label_spans(sent):
            end = starts[last - 1] + len(sent.tokens[last - 1].text)
            spans.append(PhiSpan(starts[first], end, label_category("B-" + cat), ""))
    text = "".join(parts)
    spans = [PhiSpan(s.start, s.end, s.category, text[s.start:s.end]) for s in spans]
    return Document(doc_id, text, spans, presplit=True)


def _stays_split(a: str, b: str) -> bool:
    return [t.text for t in tokenize(a + b)] == [a, b]


def retokenized(sentence: Sentence, texts: list[str]) -> Sentence:
    """Copy of ``sentence`` with token texts swapped, keeping token adjacency."""
    tokens = []
    pos = 0
    for i, text in enumerate(texts):
        if i:
            old_prev, old = sentence.tokens[i - 1], sentence.tokens[i]
            pos += 0 if old.start == old_prev.end else 1
        tokens.append(make_token(text, pos))
        pos += len(text)
    return Sentence(sentence.doc_id, tokens, list(sentence.labels))
