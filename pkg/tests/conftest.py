import os

import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance experiment")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(1234)


def tiny_corpus(sizes=(6, 2, 1), seed=3, max_frames=10):
    import dataclasses

    from tonectc.synth import DEFAULT_SPEC, generate

    spec = dataclasses.replace(DEFAULT_SPEC, sizes=sizes, heldout_sizes=(2, 1, 1),
                               max_frames=max_frames, max_syllables=3)
    return generate(spec, seed)


def tiny_examples(variant_id, sizes=(6, 2, 1), seed=3, max_frames=10):
    """In-memory synthetic examples by split, plus the training languages' alphabets."""
    from tonectc.corpus import load_examples, tokenized_corpus
    from tonectc.tiers import build_alphabets, variant

    corpus = tiny_corpus(sizes, seed, max_frames)
    model = variant(variant_id)
    records = [r for r in corpus.records if r.lang != corpus.spec.heldout_language]
    examples = load_examples(corpus.records, ".", model)
    alphabets = build_alphabets(tokenized_corpus(records), model)
    split = {utt: name for name, ids in corpus.splits.items() for utt in ids}
    by_split = {name: [e for e in examples if split[e.utt_id] == name] for name in corpus.splits}
    return by_split, alphabets
