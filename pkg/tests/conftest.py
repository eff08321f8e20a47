import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nhparent.models import ModelSpec, default_catalog, model_coefficients
from nhparent.operators import realize
from nhparent.spectra import diagonalize_nonhermitian

settings.register_profile("repo", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

FERMION_PROFILES = {
    "zero": ("Zero", 0.0),
    "staggered": ("Staggered", 0.3),
    "biased": ("Biased", 0.2),
    "random": ("Random", 1.0),
}


def lee_yang_spec(h_z, n=10, lam=0.5, **kw):
    return ModelSpec("LeeYang", n, {"lambda": lam, "h_z": h_z}, **kw)


def fermion_spec(profile="zero", n=10, **kw):
    kind, amp = FERMION_PROFILES[profile]
    return ModelSpec("InteractingFermion", n, {"J": 1.0, "g": 0.15, "U": 2.0},
                     potential_kind=kind, potential_amplitude=amp, seed=7, **kw)


@functools.lru_cache(maxsize=None)
def solved(spec_key):
    """(catalog, coefficients, dense H, BiorthogonalSystem) for a hashable spec key."""
    kind, arg = spec_key
    spec = lee_yang_spec(arg) if kind == "ly" else fermion_spec(arg)
    cat = default_catalog(spec)
    w = model_coefficients(spec, cat)
    H = realize(w, cat)
    return cat, w, H.dense(), diagonalize_nonhermitian(H.matrix, cat.basis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, dim):
    return rng.normal(size=dim) + 1j * rng.normal(size=dim)
