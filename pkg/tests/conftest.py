import numpy as np
import pytest

from chatkpe.corpus import ChatDocument, annotate_corpus
from chatkpe.tokenizer import build_vocab


@pytest.fixture
def tiny_docs():
    docs = [
        ChatDocument(id="a", text="meet me at the park tonight . bring the stuff", gold_keyphrases=["meet me at the park", "bring the stuff"]),
        ChatDocument(id="b", text="do you want to meet at the park , or not", gold_keyphrases=["meet at the park"]),
        ChatDocument(id="c", text="nothing much happening here just homework and tv", gold_keyphrases=["homework"]),
    ]
    annotate_corpus(docs)
    return docs


@pytest.fixture
def tiny_vocab(tiny_docs):
    return build_vocab(tiny_docs, min_freq=1)


def random_doc(rng: np.random.Generator, n_tokens: int, vocab_words: list[str]) -> ChatDocument:
    words = [vocab_words[i] for i in rng.integers(0, len(vocab_words), n_tokens)]
    return ChatDocument(id=f"r{rng.integers(1 << 30)}", text=" ".join(words))


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criterion pass/fail lines after the run."""
    try:
        from test_acceptance import CRITERION_LINES
    except ImportError:
        return
    if CRITERION_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
