import pytest

from b2dr import fixtures, scenario


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenarios")
    fixtures.make_all(str(root))
    return root


@pytest.fixture(scope="session")
def straight_path(fixture_dir):
    return str(fixture_dir / "straight.json")


@pytest.fixture(scope="session")
def curve_path(fixture_dir):
    return str(fixture_dir / "curve.json")


@pytest.fixture(scope="session")
def traffic_path(fixture_dir):
    return str(fixture_dir / "traffic.json")


@pytest.fixture(scope="session")
def all_scenario_paths(straight_path, curve_path, traffic_path):
    return [straight_path, curve_path, traffic_path]


@pytest.fixture(scope="session")
def straight_log(straight_path):
    return scenario.load_scenario(straight_path)


@pytest.fixture(scope="session")
def curve_log(curve_path):
    return scenario.load_scenario(curve_path)


@pytest.fixture(scope="session")
def traffic_log(traffic_path):
    return scenario.load_scenario(traffic_path)
