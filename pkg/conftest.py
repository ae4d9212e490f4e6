"""
Shared pytest setup

Tests marked `slow` train small models end to end; they run only when
DYNSGG_SLOW=1 is set.
"""

import os

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models end to end (set DYNSGG_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("DYNSGG_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set DYNSGG_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
