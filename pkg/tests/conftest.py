import numpy as np
import pytest

from hcpnet.objectness import ObjectnessConfig, train_objectness
from hcpnet.synth import SyntheticSpec, generate_split


def annotated(manifest):
    return [
        (manifest.load_image(r), [(o["x0"], o["y0"], o["w"], o["h"]) for o in r.objects])
        for r in manifest
    ]


@pytest.fixture(scope="session")
def objectness_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("objectness")
    spec = SyntheticSpec(seed=7)
    train = generate_split(spec, "objectness", 150, str(root))
    test = generate_split(spec, "test", 60, str(root))
    return annotated(train), annotated(test)


@pytest.fixture(scope="session")
def objectness_model(objectness_data):
    return train_objectness(objectness_data[0], ObjectnessConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
