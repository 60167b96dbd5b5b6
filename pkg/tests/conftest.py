import numpy as np
import pytest

from layerforge import nnmodel as nn


def passthrough_model(base: int = 4, dtype=np.float32) -> nn.ModelState:
    """Hand-built network: layer 0 copies the input, layer 1 is white.

    Only the stem and head carry weights; the additive skip into the last
    decoder stage routes the stem features straight to the head.
    """
    model = nn.init_model(nn.ModelConfig(base), seed=0, dtype=dtype)
    for p in model.params.values():
        p[...] = 0
    for c in range(3):
        model.params["stem.weight"][c, c, 1, 1] = 1
        model.params["head.weight"][c, c, 1, 1] = 1
    model.params["head.bias"][3:] = 1
    return model


@pytest.fixture
def oracle_model():
    return passthrough_model
