import sys

import numpy as np
import pytest

from mbvvc.data import SOURCE, TARGET, Corpus, SpeakerTable, Utterance
from mbvvc.networks import ModelConfig
from mbvvc.training import StageConfig

TINY_BINS = 64


def tiny_model_config(**kw):
    base = dict(n_bins=TINY_BINS, base_bins=4, up_channels=(8, 6, 4, 4, 2), code_dim=8, prenet_dims=(32, 16),
                bank_size=4, bank_channels=8, hidden=16, highway_layers=2, dec_hidden=16, seg_len=16,
                disc_channels=(4, 4), disc_fc=8)
    base.update(kw)
    return ModelConfig(**base)


def tiny_stage_config(**kw):
    base = dict(batch_size=4, lr_ae=2e-3, lr_patcher=1e-3, lr_critic=1e-3)
    base.update(kw)
    return StageConfig(**base)


def tiny_corpus(seed=0, per_speaker=4, frames=(20, 40)):
    """Three speakers (one source, two targets) with speaker-dependent spectral slopes."""
    rng = np.random.default_rng(seed)
    speakers = SpeakerTable(["S001", "V001", "V002"], [SOURCE, TARGET, TARGET])
    bins = np.arange(TINY_BINS) / TINY_BINS
    utts = []
    for spk, slope in enumerate((0.2, 0.5, 0.8)):
        for k in range(per_speaker):
            t = int(rng.integers(*frames))
            act = (rng.random((t, 1)) > 0.3).astype(np.float32)
            f = 0.7 - slope * bins[None] * act + 0.05 * rng.standard_normal((t, TINY_BINS))
            utts.append(Utterance(f"{speakers.names[spk]}_{k}", spk, np.clip(f * act, 0, 1).astype(np.float32)))
    return Corpus(speakers, utts)


@pytest.fixture
def corpus():
    return tiny_corpus()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: int(k[1:])):
            terminalreporter.write_line(results[key])
