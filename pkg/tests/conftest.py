from __future__ import annotations

import os

import pytest

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def conformance_doc() -> bytes:
    with open(os.path.join(DATA_DIR, "permit_inspection.json"), "rb") as fh:
        return fh.read()
