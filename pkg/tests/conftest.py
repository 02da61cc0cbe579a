import math

import numpy as np
import pytest

from fpfuse import (LocalMatchConfig, Minutia, SynthSpec, Template,
                    generate_corpus)


def unit(vec):
    vec = np.asarray(vec, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def make_template(global_direction, minutiae=(), image_size=(384, 384), source_id="t"):
    return Template(global_embedding=unit(global_direction), minutiae=tuple(minutiae),
                    image_size=image_size, source_id=source_id)


def random_minutia(rng, d_m=8, image_size=(384, 384)):
    h, w = image_size
    return Minutia(x=rng.uniform(0, w), y=rng.uniform(0, h),
                   theta=rng.uniform(0, 2 * math.pi),
                   embedding=unit(rng.normal(size=d_m)))


def basis_template(d_g=8, axis=0, minutiae=(), source_id="t"):
    g = np.zeros(d_g)
    g[axis] = 1.0
    return make_template(g, minutiae, source_id=source_id)


@pytest.fixture(scope="session")
def small_bundle():
    """Tiny deterministic corpus shared by fast tests."""
    return generate_corpus(SynthSpec(seed=11, subjects=6, impressions=3))


@pytest.fixture(scope="session")
def default_local_cfg():
    return LocalMatchConfig()
