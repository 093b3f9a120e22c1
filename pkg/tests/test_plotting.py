import pytest

from cogs import plotting

# two seeds x two epochs x two modes, as cogs_train would log them
LOG = [
    {"mode": "uniform", "seed": 0, "epoch": 1, "oracle": "local_search", "eval/mean": 0.10},
    {"mode": "uniform", "seed": 1, "epoch": 1, "oracle": "local_search", "eval/mean": 0.14},
    {"mode": "uniform", "seed": 0, "epoch": 2, "oracle": "local_search", "eval/mean": 0.08},
    {"mode": "uniform", "seed": 1, "epoch": 2, "oracle": "local_search", "eval/mean": 0.10},
    {"mode": "cogs", "seed": 0, "epoch": 1, "oracle": "local_search", "eval/mean": 0.12},
    {"mode": "cogs", "seed": 1, "epoch": 1, "oracle": "local_search", "eval/mean": 0.12},
    {"mode": "cogs", "seed": 0, "epoch": 2, "oracle": "local_search", "eval/mean": 0.05},
    {"mode": "cogs", "seed": 1, "epoch": 2, "oracle": "local_search", "eval/mean": 0.07},
    {"mode": "cogs", "seed": 0, "epoch": 3, "oracle": "local_search"},  # no metric: ignored
]

GOLDEN = """\
mode     epoch  mean  std        n
-------  -----  ----  ---------  -
cogs     1      0.12  0          2
cogs     2      0.06  0.0141421  2
uniform  1      0.12  0.0282843  2
uniform  2      0.09  0.0141421  2
"""


def test_curve_table_golden(tmp_path):
    table = plotting.plot_curves(LOG, "eval/mean", tmp_path / "c.svg")
    assert plotting.format_rows(table, ["mode", "epoch", "mean", "std", "n"]) == GOLDEN
    assert (tmp_path / "c.svg").stat().st_size > 0


def test_svg_reproducible(tmp_path):
    plotting.plot_curves(LOG, "eval/mean", tmp_path / "a.svg")
    plotting.plot_curves(LOG, "eval/mean", tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_refuses_mixed_oracles(tmp_path):
    rows = LOG[:2] + [{**LOG[2], "oracle": "held_karp"}]
    with pytest.raises(plotting.MixedOracleError):
        plotting.plot_curves(rows, "eval/mean", tmp_path / "x.png")
    assert not (tmp_path / "x.png").exists()


def test_missing_metric():
    with pytest.raises(ValueError):
        plotting.curve_table(LOG, "nope")


def test_gap_vs_size_rows(tmp_path):
    out = plotting.plot_gap_vs_size([(50, 0.01), (100, 0.02), (200, 0.04)], tmp_path / "s.png")
    assert out["pearson_r"] == pytest.approx(1.0)
    assert out["rows"][1] == {"size": 100.0, "gap": 0.02}


def test_worst_instances_table(tmp_path):
    import numpy as np

    pts = np.random.default_rng(0).random((3, 5, 2))
    worst = [{"index": 2, "gap": 0.3, "oracle_tour": [0, 1, 2, 3, 4], "model_tour": [0, 2, 1, 3, 4]},
             {"index": 0, "gap": 0.1, "oracle_tour": [0, 1, 2, 3, 4], "model_tour": [0, 1, 2, 4, 3]}]
    assert plotting.plot_worst_instances(pts, worst, tmp_path / "w.png") == [{"index": 2, "gap": 0.3}, {"index": 0, "gap": 0.1}]
