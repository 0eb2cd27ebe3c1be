import numpy as np
import pytest

from egcn import gradsuite


@pytest.mark.parametrize("name", sorted(gradsuite.PRIMITIVES))
def test_primitive_gradients_over_20_random_inputs(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    worst = max(gradsuite.PRIMITIVES[name](rng) for _ in range(20))
    assert worst <= 1e-4


@pytest.mark.parametrize("name", sorted(gradsuite.LAYERS))
def test_layer_gradients(name, backend):
    worst = gradsuite.run_suite([name], seed=3, repeats=3)[name]
    assert worst <= 1e-4


def test_unknown_component():
    with pytest.raises(KeyError):
        gradsuite.run_suite(["nope"])
