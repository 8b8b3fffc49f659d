import numpy as np
import pytest

from volseg.phantom import PhantomSpec, phantom_generate


@pytest.fixture(scope="session")
def small_phantom():
    """A 16x48x48 sphere phantom shared by propagation/eval tests."""
    spec = PhantomSpec(
        dims=(16, 48, 48),
        kind="sphere",
        center=(8.0, 24.0, 24.0),
        radii=(5.0,),
        noise_sigma_hu=10.0,
        seed=7,
    )
    return phantom_generate(spec)


def square_mask(shape, r0, c0, r1, c1):
    m = np.zeros(shape, dtype=bool)
    m[r0 : r1 + 1, c0 : c1 + 1] = True
    return m
