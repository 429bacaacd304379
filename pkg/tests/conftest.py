import pytest

from gwfam import mitosis_model, rds_model


@pytest.fixture(scope="session")
def mitosis88():
    return mitosis_model(0.8, 0.8)


@pytest.fixture(scope="session")
def mitosis97():
    return mitosis_model(0.9, 0.7)


@pytest.fixture(scope="session")
def rds():
    return rds_model()
