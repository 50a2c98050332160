import pytest
from hypothesis import HealthCheck, settings

from panfuse.core import make_catalog
from helpers import BUILDING, CAR, PERSON, ROAD, SKY

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def catalog():
    return make_catalog(things=[(PERSON, "person"), (CAR, "car")],
                        stuff=[(ROAD, "road"), (BUILDING, "building"), (SKY, "sky")])


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
