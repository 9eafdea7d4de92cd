from __future__ import annotations

import pytest

from objrt.node import Node, NodeConfig


@pytest.fixture
def make_node():
    """Factory for started nodes, all stopped at teardown."""
    started: list[Node] = []

    def make(**kw) -> Node:
        n = Node(NodeConfig(**kw)).start()
        started.append(n)
        return n

    yield make
    for n in started:
        n.stop()


@pytest.fixture
def pair(make_node):
    """(client, server)."""
    return make_node(), make_node()
