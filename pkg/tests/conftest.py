"""
Shared fixtures for the laboratory tests.
"""

import logging

import numpy as np
import pytest

from qnls_lab.lattice import TruncationMode, truncation_set
from qnls_lab.random_field import SpectralField, sample_data


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    # Default output directory of the command line front-end
    directory = tmp_path / "out"
    directory.mkdir()
    monkeypatch.setenv("QNLS_LAB_OUTPUT_DIR", str(directory))
    return directory


@pytest.fixture
def rough_data() -> SpectralField:
    return sample_data(7, 0.25, 8)


@pytest.fixture
def single_mode_field() -> SpectralField:
    # u = e^{i x_1} on the N = 4 truncation
    modes = truncation_set(4, TruncationMode.EUCLIDEAN, 2)
    amplitudes = np.zeros(modes.shape[0], dtype=np.complex128)
    amplitudes[np.flatnonzero((modes[:, 0] == 1) & (modes[:, 1] == 0))] = 1.0
    return SpectralField(4, modes, amplitudes)


@pytest.fixture(autouse=True)
def reset_package_logger():
    # Undo configure_logging so that caplog sees package records
    yield
    package_logger = logging.getLogger("qnls_lab")
    package_logger.handlers.clear()
    package_logger.setLevel(logging.NOTSET)
    package_logger.propagate = True
