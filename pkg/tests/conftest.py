import pytest

from orliczlab.nfunction import make_prototype

PROTOTYPE_PARAMS = [
    (kind, p, mu)
    for kind in ("A1", "A2", "A3")
    for p in (1.5, 2.0, 3.0)
    for mu in (0.0, 0.1, 1.0)
    if not (kind == "A3" and p < 2)
]


def prototype_id(params):
    kind, p, mu = params
    return f"{kind}-p{p:g}-mu{mu:g}"


@pytest.fixture(params=PROTOTYPE_PARAMS, ids=prototype_id)
def prototype(request):
    return make_prototype(*request.param)
