"""Session-scoped pipeline fixtures shared by integration and acceptance tests.

Seeds follow the CLI derivation from master seed 0: data 1, pretrain 2,
extract 3, pure learning 4, eval 5; the custom set uses data seed + 1.
"""

import pytest

from purecc.customization import PureCCConfig, train_extractor
from purecc.data import SceneSpec, make_custom_set, make_pretrain_set, vocabulary
from purecc.flow import SamplerConfig, TrainConfig, train_flow
from purecc.net import NetworkConfig, build_network

MASTER_SEED = 0
PRETRAIN = TrainConfig(
    iterations=8000,
    learning_rate=0.05,
    batch_size=128,
    cond_dropout_prob=0.1,
    seed=MASTER_SEED + 2,
)
EXTRACT = PureCCConfig(iterations=400, learning_rate=0.1, seed=MASTER_SEED + 3)
SAMPLER = SamplerConfig(steps=28, guidance_w=1.0, seed=MASTER_SEED + 5)


@pytest.fixture(scope="session")
def scene():
    return SceneSpec()


@pytest.fixture(scope="session")
def vocab(scene):
    return vocabulary(scene)


@pytest.fixture(scope="session")
def pretrained(scene, vocab):
    dataset = make_pretrain_set(scene, 4096, seed=MASTER_SEED + 1)
    net = build_network(
        NetworkConfig(input_dim=scene.dim, vocab_size=vocab.size), seed=MASTER_SEED + 2
    )
    trained, _ = train_flow(net, dataset, PRETRAIN)
    return trained


@pytest.fixture(scope="session")
def custom_set(scene):
    return make_custom_set(scene, "left", n_refs=4, seed=MASTER_SEED + 2)


@pytest.fixture(scope="session")
def extractor(pretrained, custom_set):
    net, _ = train_extractor(pretrained, custom_set, EXTRACT)
    return net
