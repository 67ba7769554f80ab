import pytest

from hierakey.engine import Network
from hierakey.hierarchy import Role


def build_house(seed: int = 11) -> Network:
    """One head, two clusters, two nodes (N1 under CH1, N2 under CH2),
    plus N3 sharing CH1 with N1."""
    net = Network(master_seed=seed)
    net.add_entity("H1", Role.HEAD)
    net.add_entity("CH1", Role.CLUSTER_HEAD, "H1")
    net.add_entity("CH2", Role.CLUSTER_HEAD, "H1")
    net.add_entity("N1", Role.NODE, "H1")
    net.add_entity("N2", Role.NODE, "H1")
    net.add_entity("N3", Role.NODE, "H1")
    net.associate("N1", "CH1")
    net.associate("N2", "CH2")
    net.associate("N3", "CH1")
    return net


def build_district(seed: int = 13) -> Network:
    """Mediator over two houses: N1 under H1/CH1, N2 under H2/CH2."""
    net = Network(master_seed=seed)
    net.add_entity("DM1", Role.DISTRICT_MEDIATOR)
    net.add_entity("H1", Role.HEAD, "DM1")
    net.add_entity("H2", Role.HEAD, "DM1")
    net.add_entity("CH1", Role.CLUSTER_HEAD, "H1")
    net.add_entity("CH2", Role.CLUSTER_HEAD, "H2")
    net.add_entity("N1", Role.NODE, "H1")
    net.add_entity("N2", Role.NODE, "H2")
    net.associate("N1", "CH1")
    net.associate("N2", "CH2")
    return net


@pytest.fixture
def house_net():
    return build_house()


@pytest.fixture
def district_net():
    return build_district()
