"""Vocabulary transfer and MLM data preparation for domain-adapted BERT-style models."""

__version__ = "0.1.0"

from .wordpiece import Vocab, TokenizerOptions, encode, decode, tokenize, train_vocab, word_groups, load_vocab, save_vocab
from .corpus_scan import CorpusSource, SentenceHit, count_frequencies, scan_for_tokens, sample_context_count, segment_sentences
from .transfer import (
    EmbeddingMatrix,
    InitMode,
    Provenance,
    TokenMapping,
    build_embedding_matrix,
    contextualize,
    diff_vocab,
    distill,
    export_matrix,
    import_matrix,
)
from .masking import MaskingConfig, MlmExample, Strategy, Corruption, build_example, select_positions, apply_corruption
from .curriculum import phase_config, lr_at, LrPlan, CurriculumPhase, mlm_loss, pseudo_perplexity, difficulty_rank, emit_schedule
from .analysis import anisotropy, bucket_frequencies, compare_corpora, export_freq_stratified
from .packing import pack_sequences
