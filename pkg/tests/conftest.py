import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from facetrank.annotate import annotate_corpus
from facetrank.encoder import Vocabulary, WordTokenizer
from facetrank.synth import SynthConfig, SyntheticOracleClient, corpus_texts, generate_corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small labeled synthetic corpus shared across test modules."""
    cfg = SynthConfig(n_docs=40, n_seeds=40, pool_size=6, rng_seed=21)
    corpus = generate_corpus(cfg)
    report = annotate_corpus(corpus.pools, SyntheticOracleClient(), clock=None)
    assert not report.errors
    return corpus, report.labels


@pytest.fixture(scope="session")
def tiny_tokenizer(tiny_corpus):
    corpus, _ = tiny_corpus
    return WordTokenizer(Vocabulary.build(corpus_texts(corpus)))
