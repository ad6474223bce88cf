"""Shared fixtures: the 2-d diagonal-contraction / rotation pair.

Q(theta) = D theta with D = diag(0.5, 0.25) and P(theta) = R theta with R a
90-degree rotation give Sigma = DR - RD = 0.25 * [[0, -1], [-1, 0]], so the
gap is 0.25 ||theta|| exactly and every bound in the suite can be checked in
closed form.
"""

import numpy as np
import pytest

from ordergap.linear import LinearPair

DIAG = np.diag([0.5, 0.25])
ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


@pytest.fixture
def diag_rot() -> LinearPair:
    return LinearPair(q_matrix=DIAG, p_matrix=ROT)


@pytest.fixture
def noisy_diag_rot() -> LinearPair:
    offsets = 0.1 * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    return LinearPair(q_matrix=DIAG, p_matrix=ROT, offsets=offsets)
