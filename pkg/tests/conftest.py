import numpy as np
import pytest

from conelab.flow import FlowConfig, FlowVariant
from conelab.geometry import ConeParams, DivisorConfig, DivisorKind, ModelGeometry
from conelab.mesh import build_mesh


@pytest.fixture
def one_point():
    return ModelGeometry(DivisorConfig(kind=DivisorKind.ONE_POINT, twist_c=1.0))


@pytest.fixture
def two_point():
    return ModelGeometry(DivisorConfig(kind=DivisorKind.TWO_POINT, twist_c=1.0))


@pytest.fixture
def smoke():
    return ModelGeometry(DivisorConfig(kind=DivisorKind.NONE))


@pytest.fixture
def small_mesh():
    return build_mesh(-8.0, 6.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_flow(one_point, small_mesh):
    """Factory for short runs on the small mesh; keyword overrides go to FlowConfig"""

    def factory(
        variant=FlowVariant.CONICAL,
        gamma=0.5,
        epsilon=0.1,
        horizon_T=0.3,
        geom=None,
        mesh=None,
        **overrides,
    ):
        kwargs = dict(dt_initial=1e-2, dt_growth=0.0, dt_max=0.05)
        kwargs.update(overrides)
        return FlowConfig(
            geom=geom or one_point,
            params=ConeParams(gamma=gamma, epsilon=epsilon, horizon_T=horizon_T),
            mesh=mesh or small_mesh,
            variant=variant,
            **kwargs,
        )

    return factory


@pytest.fixture
def bump(small_mesh):
    return 0.3 * np.exp(-small_mesh.nodes**2 / 8.0)
