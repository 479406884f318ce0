"""Figure rendering: every report plot lands on disk as a PNG."""

import pytest

from minn.figures import plot_history, plot_power_tradeoff, plot_sweep


def history_rows(with_power: bool) -> list[dict]:
    rows = []
    for seed in (1, 2):
        for epoch in (1, 2, 3):
            row = {
                "epoch": epoch,
                "step": epoch * 10,
                "loss": 1.0 / epoch,
                "train_acc": 0.5 + 0.1 * epoch,
                "test_acc": 0.45 + 0.1 * epoch,
                "mean_power": 1.0,
                "seed": seed,
            }
            if with_power:
                row.update({"gamma": 0.01, "mean_power_dbm": 30.0 - epoch, "constraint_satisfied": 1})
            rows.append(row)
    return rows


def test_plot_history_renders(tmp_path):
    path = tmp_path / "metrics.png"
    plot_history(history_rows(with_power=False), path)
    assert path.stat().st_size > 1000


def test_plot_history_with_power_panel(tmp_path):
    path = tmp_path / "metrics.png"
    plot_history(history_rows(with_power=True), path)
    assert path.stat().st_size > 1000


def test_plot_sweep_renders(tmp_path):
    rows = [
        {"axis_value": v, "seed": s, "accuracy": 0.5 + 0.01 * v + 0.01 * s, "power": 1.0}
        for v in (-10.0, 0.0, 10.0)
        for s in (1, 2)
    ]
    path = tmp_path / "sweep.png"
    plot_sweep(rows, "snr", path)
    assert path.stat().st_size > 1000


def test_plot_power_tradeoff_renders(tmp_path):
    rows = [
        {"axis_value": g, "seed": s, "accuracy": 0.9 - g, "power": 1.0 - g}
        for g in (0.0, 0.1)
        for s in (1, 2)
    ]
    path = tmp_path / "tradeoff.png"
    plot_power_tradeoff(rows, path)
    assert path.stat().st_size > 1000


def test_empty_rows_are_rejected(tmp_path):
    with pytest.raises(ValueError, match="no history rows"):
        plot_history([], tmp_path / "x.png")
    with pytest.raises(ValueError, match="no sweep rows"):
        plot_sweep([], "snr", tmp_path / "y.png")
