"""Shared fixtures and the per-criterion acceptance summary."""

import json
from pathlib import Path

import pytest

from mlpr.config import preset

_RESULTS = {}  # criterion number -> {"title", "outcomes", "details"}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.fixture
def measure(request):
    """Attach measured values to the acceptance line of the current test."""
    marker = request.node.get_closest_marker("criterion")
    details = {}
    yield details
    if marker is not None:
        _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "outcomes": [],
                                             "details": {}})["details"].update(details)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    entry = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "outcomes": [],
                                                 "details": {}})
    entry["outcomes"].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        status = "PASS" if e["outcomes"] and all(e["outcomes"]) else "FAIL"
        detail = ", ".join(f"{k}={_fmt(v)}" for k, v in e["details"].items())
        tr.write_line(f"AC{n:<3}{status}  {e['title']}" + (f"  [{detail}]" if detail else ""))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def small_config(tmp_dir: Path, **train):
    """A quick variant of the small preset written as a JSON config file."""
    over = {
        "preset": "small",
        "data": {"funnel": {"n_queries": 60, "items_per_query": 20, "n_items": 600}},
        "train": {"epochs": 2, **train},
    }
    path = tmp_dir / "config.json"
    path.write_text(json.dumps(over), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """Dataset plus one trained checkpoint from the quick small config."""
    from mlpr.cli import main

    root = tmp_path_factory.mktemp("small")
    cfg = small_config(root)
    data = root / "data"
    assert main(["--config", str(cfg), "--out", str(data), "gen-data"]) == 0
    assert main(["--config", str(cfg), "--out", str(root / "train"), "train", "--data",
                 str(data)]) == 0
    return {"root": root, "config": cfg, "data": data, "ckpt": root / "train" / "model.ckpt"}


@pytest.fixture
def tiny_cfg():
    return preset("tiny")
