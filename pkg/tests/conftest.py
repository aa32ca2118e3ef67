import random

import pytest
from hypothesis import settings

from chainsteg import ChannelConfig, KeyMaterial, Mode
from chainsteg.session import SessionState

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def km():
    return KeyMaterial.generate(random.Random(0xBEEF))


@pytest.fixture()
def ordered_cfg():
    return ChannelConfig(n=3, m=4, mode=Mode.ORDERED)


@pytest.fixture()
def permuted_cfg():
    return ChannelConfig(n=4, m=6, mode=Mode.PERMUTED)


@pytest.fixture()
def funded(km, ordered_cfg):
    """A sender session with a freshly funded chain."""
    state = SessionState(km, ordered_cfg, seed=11)
    ledger = state.genesis_ledger()
    return state, ledger


def make_session(km, cfg, seed=11, fund=True):
    state = SessionState(km, cfg, seed=seed)
    ledger = state.genesis_ledger() if fund else None
    return state, ledger
