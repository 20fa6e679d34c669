import json

import pytest

from bursthdr.budget import (
    BudgetReport,
    OpNode,
    check_budget,
    count_flops,
    load_graph,
    pipeline_graph,
)
from bursthdr.config import RestoreConfig
from bursthdr.errors import ValidationError

# total for the default configuration at 768x1536 (regression value)
PIPELINE_FLOPS = 3_432_344_256


def test_conv_flops_by_hand():
    node = OpNode("conv2d", "c", {"cin": 4, "cout": 4, "kernel": 3, "height": 16, "width": 32},
                  param_count=148)
    rep = count_flops([node])
    assert rep.total_flops == 2 * 9 * 4 * 4 * 16 * 32 == 147456
    assert rep.total_params == 148
    assert count_flops([node], mac_flops=1).total_flops == 147456 / 2


def test_other_kinds_by_hand():
    bm = OpNode("blockmatch", "b", {"radius": 1, "block": 4, "height": 8, "width": 12})
    assert bm.flops() == 3 * 9 * 16 * 6
    lk = OpNode("lk_iter", "l", {"iters": 2, "block": 4, "height": 8, "width": 8})
    assert lk.flops() == 2 * (23 * 16 * 4 + 15 * 4)
    fft = OpNode("fft", "f", {"channels": 2, "height": 4, "width": 4})
    assert fft.flops() == 5 * 16 * 4 * 2
    ew = OpNode("elementwise", "e", {"channels": 3, "height": 2, "width": 5, "per_element": 7}, repeat=4)
    assert ew.flops() == 7 * 3 * 10 * 4


def test_empty_graph():
    rep = count_flops([])
    assert rep.total_flops == 0 and rep.total_params == 0 and rep.passed


def test_pipeline_golden_and_parameter_free():
    rep = count_flops(pipeline_graph())
    assert rep.total_flops == PIPELINE_FLOPS
    assert rep.total_params == 0
    assert check_budget(rep).passed


def test_pipeline_grows_with_search_radius():
    totals = [count_flops(pipeline_graph(RestoreConfig(radius=r))).total_flops for r in range(1, 7)]
    assert all(a < b for a, b in zip(totals, totals[1:]))


def test_check_budget_examples():
    assert check_budget((29_051_000, 3.965e12)).passed
    assert check_budget((0, 0)).passed
    assert check_budget((30_000_000, 4e12)).passed
    over = check_budget((30_000_001, 1.0))
    assert not over.passed and over.violations[0][0] == "params"
    assert "FAIL" in over.summary()
    assert not check_budget((1, 4e12 + 1)).passed
    with pytest.raises(ValidationError):
        check_budget((-1, 0))


def test_node_validation():
    with pytest.raises(ValidationError):
        OpNode("matmul", "x", {})
    with pytest.raises(ValidationError):
        OpNode("conv2d", "x", {"cin": 1, "cout": 1, "kernel": 3, "height": 4})
    with pytest.raises(ValidationError):
        OpNode("resample", "x", {"channels": 0, "height": 4, "width": 4})
    with pytest.raises(ValidationError):
        count_flops([OpNode("fft", "f", {"channels": 1, "height": 8, "width": 8})], input_dims=(4, 4))


def test_load_graph_forms(tmp_path):
    nodes = [OpNode("fft", "f", {"channels": 1, "height": 4, "width": 4}).to_dict()]
    p = tmp_path / "g.json"
    p.write_text(json.dumps({"nodes": nodes}))
    assert count_flops(load_graph(p)).total_flops == 5 * 16 * 4
    p.write_text(json.dumps({}))
    assert count_flops(load_graph(p)).total_flops == PIPELINE_FLOPS
    rep = count_flops(load_graph(p))
    assert isinstance(rep, BudgetReport) and "total" in rep.text_table()
    assert json.loads(json.dumps(rep.to_dict()))["pass"] is True
