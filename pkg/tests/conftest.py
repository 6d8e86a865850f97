import pytest
import threadpoolctl


@pytest.fixture(autouse=True, scope="session")
def single_threaded_blas():
    # desk-scale matrices: threaded BLAS only adds pool overhead, and some
    # builds degrade badly on small problems inside CPU-limited containers
    with threadpoolctl.threadpool_limits(limits=1):
        yield
