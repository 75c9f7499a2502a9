"""
Pytest configuration and shared fixtures for the paraling test suite.

This file is automatically loaded by pytest and provides:
- Marker registration and logging setup
- Automatic unit / integration / slow marking by directory
- Shared fixtures (tiny architectures, toy corpora, run configs)
"""

import logging
import sys
from pathlib import Path

import pytest

# Add project root to Python path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from tests.fixtures.synthetic import *  # noqa: F401, F403


# =============================================================================
# Pytest Configuration
# =============================================================================

def pytest_configure(config):
    """Configure pytest with custom markers and settings"""
    config.addinivalue_line("markers", "unit: Unit tests (no files outside tmp_path, fast)")
    config.addinivalue_line("markers", "integration: Integration tests (training runs, CLI pipelines)")
    config.addinivalue_line("markers", "slow: Slow running tests (>5 seconds)")

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def pytest_collection_modifyitems(config, items):
    """Modify test collection to add markers automatically"""
    for item in items:
        path = str(item.fspath)
        if "integration" in path:
            item.add_marker(pytest.mark.integration)
            item.add_marker(pytest.mark.slow)
        if "unit" in path:
            item.add_marker(pytest.mark.unit)


# =============================================================================
# Session-Level Fixtures
# =============================================================================

@pytest.fixture(scope="session")
def project_root_path():
    """Return project root directory path"""
    return project_root


# =============================================================================
# Function-Level Fixtures
# =============================================================================

@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep PARALING_* variables of the developer's shell out of config tests"""
    import os

    for key in list(os.environ):
        if key.upper().startswith("PARALING_"):
            monkeypatch.delenv(key, raising=False)
