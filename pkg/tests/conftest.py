"""Shared fixtures: melody builders and the expensive desk-scale training runs.

The trained-model fixtures are session-scoped and only built when a test asks
for them, so the fast unit-test files stay fast.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from latent_lens import corpus, melody, vae

DESK_CORPUS_SEED = 7
DESK_TRAIN_SEED = 0
DESK_EPOCHS = 100
DESK_16BAR_EPOCHS = 12


def random_melody(rng: np.random.Generator, bars: int = 2) -> melody.Melody:
    """A random valid melody: mixed notes and rests on the step grid."""
    total = melody.STEPS_PER_BAR * bars
    spans = []
    pos = 0
    while pos < total:
        if rng.random() < 0.2:  # rest
            pos += int(rng.integers(1, 5))
            continue
        dur = int(rng.integers(1, 9))
        dur = min(dur, total - pos)
        spans.append(melody.NoteSpan(int(rng.integers(0, 128)), pos, dur))
        pos += dur
    return melody.Melody(tuple(spans), bars, float(rng.uniform(40, 220)))


def token_matrix(seqs) -> np.ndarray:
    return np.array([tuple(s) for s in seqs], dtype=np.int64)


@pytest.fixture(scope="session")
def musical_corpus_2bar() -> list[melody.Melody]:
    cfg = corpus.SyntheticConfig(seed=DESK_CORPUS_SEED)
    return corpus.gen_musical_corpus(cfg, 2000)


@pytest.fixture(scope="session")
def musical_seqs_2bar(musical_corpus_2bar) -> list[melody.TokenSequence]:
    return [melody.tokenize(m) for m in musical_corpus_2bar]


@pytest.fixture(scope="session")
def desk_runtime():
    """Wall-clock seconds of the heavy training fixtures, by name."""
    return {}


@pytest.fixture(scope="session")
def desk_model(musical_seqs_2bar, desk_runtime):
    """The reference desk-scale run: 2,000 synthetic melodies, d=32, seed 0."""
    mcfg = vae.ModelConfig(latent_dim=32)
    params0 = vae.init_params(mcfg, DESK_TRAIN_SEED)
    tcfg = vae.TrainConfig(epochs=DESK_EPOCHS, seed=DESK_TRAIN_SEED)
    t0 = time.perf_counter()
    params, history = vae.train(params0, musical_seqs_2bar, tcfg)
    desk_runtime["desk_model"] = time.perf_counter() - t0
    return params, history


@pytest.fixture(scope="session")
def desk_model_beta0(musical_seqs_2bar):
    """Ablation twin of desk_model with the KL weight turned off."""
    mcfg = vae.ModelConfig(latent_dim=32)
    params0 = vae.init_params(mcfg, DESK_TRAIN_SEED)
    tcfg = vae.TrainConfig(epochs=DESK_EPOCHS, seed=DESK_TRAIN_SEED, beta_max=0.0)
    params, history = vae.train(params0, musical_seqs_2bar, tcfg)
    return params, history


@pytest.fixture(scope="session")
def desk_model_16bar():
    """16-bar pipeline: 500 synthetic melodies, d=64, seq_len 256."""
    cfg = corpus.SyntheticConfig(seed=DESK_CORPUS_SEED, bars=16)
    mels = corpus.gen_musical_corpus(cfg, 500)
    seqs = [melody.tokenize(m) for m in mels]
    mcfg = vae.ModelConfig(latent_dim=64, seq_len=256)
    params0 = vae.init_params(mcfg, DESK_TRAIN_SEED)
    tcfg = vae.TrainConfig(epochs=DESK_16BAR_EPOCHS, seed=DESK_TRAIN_SEED)
    params, history = vae.train(params0, seqs, tcfg)
    return params, history, seqs
