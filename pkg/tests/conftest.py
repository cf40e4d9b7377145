"""Shared builders for small test graphs."""

import pytest

from spaq.drift import LogisticDriftCfg
from spaq.graph import (
    ABS_LE,
    CheckSpec,
    GraphSpec,
    NodeSpec,
    ObservableSpec,
    ParamSpec,
    Rule,
    Term,
)


def make_node(
    node_id,
    deps=(),
    check_cost=1,
    calibrate_cost=2,
    timeout=10,
    post_cal_delay=0,
    sigma=0.02,
    tolerance=0.1,
    noise=0.0,
    extra_terms=(),
    compensate=None,
):
    """A one-parameter node whose observable is the parameter's deviation."""
    drift = LogisticDriftCfg(r_max=1.0, tau_mid=0.0, tau_scale=1.0, sigma=sigma)
    obs = ObservableSpec(
        kind="linear",
        offset=0.0,
        terms=(Term(param="p"),) + tuple(extra_terms),
        noise=noise,
        compensate=compensate,
    )
    return NodeSpec(
        id=node_id,
        check_cost=check_cost,
        calibrate_cost=calibrate_cost,
        timeout=timeout,
        post_cal_delay=post_cal_delay,
        dependencies=tuple(deps),
        params=(("p", ParamSpec(optimal=0.0, tolerance=tolerance, drift=drift)),),
        checks=(CheckSpec(observable=obs, rule=Rule(op=ABS_LE, bound=tolerance)),),
    )


def make_graph(*nodes, disturbances=()):
    return GraphSpec(nodes=tuple(nodes), disturbances=tuple(disturbances))


@pytest.fixture
def chain_graph():
    """c depends on b depends on a."""
    return make_graph(
        make_node("a"),
        make_node("b", deps=("a",)),
        make_node("c", deps=("b",)),
    )


@pytest.fixture
def diamond_graph():
    """d depends on b and c; both depend on a."""
    return make_graph(
        make_node("a"),
        make_node("b", deps=("a",)),
        make_node("c", deps=("a",)),
        make_node("d", deps=("b", "c")),
    )
