"""Tokenization, casing features and sentence splitting."""
from __future__ import annotations

import re

from .types import CasingCategory, CorpusError, Document, Sentence, Token

# alphanumeric runs (underscore counts as punctuation), or one punctuation char
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_")
# digit run followed by a letter: "25yo" -> "25", "yo"
_DIGIT_LETTER_RE = re.compile(r"(?<=\d)(?=[^\W\d_])")

_TERMINALS = {".", "!", "?"}
_ABBREVIATIONS = {
    "dr", "mr", "mrs", "ms", "st", "prof", "no", "vs", "jr", "sr", "mt", "ft", "dept", "approx",
}


def casing_of(token_text: str) -> CasingCategory:
    """Casing category of a token; the first matching category wins."""
    if not token_text:
        raise CorpusError("casing_of called on an empty token")
    n_digits = sum(ch.isdigit() for ch in token_text)
    if n_digits == len(token_text):
        return CasingCategory.NUMERIC
    if n_digits / len(token_text) > 0.5:
        return CasingCategory.MAINLY_NUMERIC
    if token_text.isalpha() and token_text.islower():
        return CasingCategory.ALL_LOWER
    if token_text.isalpha() and token_text.isupper():
        return CasingCategory.ALL_UPPER
    if token_text[0].isupper():
        return CasingCategory.INITIAL_UPPER
    if n_digits > 0:
        return CasingCategory.CONTAINS_DIGIT
    return CasingCategory.OTHER


def make_token(text: str, start: int) -> Token:
    return Token(text, start, start + len(text), casing_of(text))


def tokenize(text: str, base_offset: int = 0) -> list[Token]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        piece, pos = m.group(), m.start()
        for part in _DIGIT_LETTER_RE.split(piece):
            tokens.append(make_token(part, base_offset + pos))
            pos += len(part)
    return tokens


def _is_list_marker(tokens: list[Token], i: int) -> bool:
    tok = tokens[i]
    if tok.text in ("-", "*"):
        return True
    if tok.text.isdigit() and i + 1 < len(tokens):
        nxt = tokens[i + 1]
        return nxt.text in (".", ")") and nxt.start == tok.end
    return False


def _starts_line(tokens: list[Token], i: int, text: str) -> bool:
    line_start = text.rfind("\n", 0, tokens[i].start) + 1
    return text[line_start:tokens[i].start].strip() == ""


def _after_terminal(tokens: list[Token], i: int, text: str) -> bool:
    prev = tokens[i - 1]
    if prev.text not in _TERMINALS or tokens[i].start == prev.end:
        return False
    if not tokens[i].text[0].isupper():
        return False
    if prev.text == "." and i >= 2 and tokens[i - 2].end == prev.start:
        before = tokens[i - 2].text
        if before.lower() in _ABBREVIATIONS or (len(before) == 1 and before.isupper()):
            return False
    return True


def split_sentences(document: Document) -> list[Sentence]:
    """Split a document into unlabeled sentences.

    Boundaries: terminal punctuation followed by whitespace and a capital
    letter (common abbreviations and initials excepted), two or more newlines,
    and list markers ("-", "*", "3." or "3)") at the start of a line.
    """
    text = document.text
    tokens = tokenize(text)
    sentences: list[list[Token]] = []
    current: list[Token] = []
    for i, tok in enumerate(tokens):
        if current:
            gap = text[tokens[i - 1].end:tok.start]
            if document.presplit:
                boundary = gap.count("\n") >= 2
            else:
                boundary = (
                    gap.count("\n") >= 2
                    or (_starts_line(tokens, i, text) and _is_list_marker(tokens, i))
                    or _after_terminal(tokens, i, text)
                )
            if boundary:
                sentences.append(current)
                current = []
        current.append(tok)
    if current:
        sentences.append(current)
    return [Sentence(document.id, toks) for toks in sentences]
