"""Annotated corpora: standoff XML, tokenization, BIO alignment, synthetic notes."""
from .labels import align_labels, label_spans, labeled_sentences, retokenized, sentences_to_document
from .synthetic import background_vocabulary, generate_synthetic, surrogate_lists, toy_embeddings
from .text import casing_of, split_sentences, tokenize
from .types import (
    CASING_CATEGORIES,
    LABEL_INDEX,
    LABELS,
    OUTSIDE,
    CasingCategory,
    CorpusError,
    Document,
    PhiCategory,
    PhiSpan,
    Sentence,
    Token,
    is_valid_bio,
    label_category,
)
from .xmlio import parse_document, read_corpus, read_document, write_corpus, write_document
