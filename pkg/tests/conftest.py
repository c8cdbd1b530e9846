import numpy as np
import pytest

from twoafc import model as M


def random_small_model(rng, dtype=np.float64, normalize=None, max_params=2000):
    """A random architecture from the layer vocabulary with < max_params parameters."""
    size = int(rng.integers(6, 12))
    channels = int(rng.integers(1, 4))
    shape = (size, size, channels)
    layers = [M.LayerSpec(M.CONV, kernel=3, in_channels=channels, out_channels=int(rng.integers(2, 5)))]
    layers.append(M.LayerSpec(M.RELU))
    if rng.random() < 0.7:
        layers.append(M.LayerSpec(M.MAXPOOL, pool=2))
    current = shape
    for spec in layers:
        current = spec.output_shape(current)
    if current[0] >= 3 and rng.random() < 0.6:
        layers.append(M.LayerSpec(M.CONV, kernel=3, in_channels=current[2], out_channels=int(rng.integers(2, 5))))
        layers.append(M.LayerSpec(M.RELU))
        current = layers[-2].output_shape(current)
    layers.append(M.LayerSpec(M.FLATTEN))
    current = (int(np.prod(current)),)
    dim = int(rng.integers(2, 6))
    layers.append(M.LayerSpec(M.DENSE, in_features=current[0], out_features=dim))
    if normalize is None:
        normalize = bool(rng.random() < 0.5)
    net = M.EmbeddingModel.initialize(
        layers, shape, embedding_dim=dim, normalize_output=normalize,
        seed=int(rng.integers(0, 2 ** 31)), dtype=dtype,
    )
    assert net.param_count() <= max_params
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
