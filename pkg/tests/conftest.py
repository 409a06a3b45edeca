from pathlib import Path

import pytest

from peerclust import PartitionSpec, TopologySpec, build_graph, load_csv, partition

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def iris():
    return load_csv(DATA_DIR / "iris.csv", label_column=4)


@pytest.fixture(scope="session")
def ring10():
    return build_graph(TopologySpec(kind="ring", m=10))


@pytest.fixture()
def iris_shards(iris):
    def make(m=10, scheme="homogeneous", seed=5):
        return partition(iris, m, PartitionSpec(scheme=scheme, seed=seed))

    return make
