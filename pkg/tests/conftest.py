import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tangent_rugosity.network import Layer, Network, activation, IDENTITY  # noqa: E402

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def repo_root():
    return REPO


@pytest.fixture
def kink_net():
    """f(x1, x2) = relu(x1) + relu(x2): the two-unit example with hand-known patterns."""
    return Network(
        (
            Layer(np.eye(2), np.zeros(2), activation("relu")),
            Layer(np.array([[1.0, 1.0]]), np.zeros(1), IDENTITY),
        )
    )


@pytest.fixture
def relu_1d():
    """f(x) = relu(x) on the real line."""
    return Network(
        (
            Layer(np.array([[1.0]]), np.zeros(1), activation("relu")),
            Layer(np.array([[1.0]]), np.zeros(1), IDENTITY),
        )
    )


def as_layers(net):
    """(W, b, kind, slope) tuples for the brute-force oracle."""
    return [(layer.weight.tolist(), layer.bias.tolist(), layer.activation.kind, layer.activation.slope) for layer in net.layers]
