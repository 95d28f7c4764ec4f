import numpy as np
import pytest

import decohkit.api.api_spectra as spectra_api

from decohkit.schema import (
    CoherenceTrace,
    LorentzianComponent,
    NoiseSpectrum,
)


@pytest.fixture
def core_shell():
    return spectra_api.core_shell_spectrum()


@pytest.fixture
def bare():
    return spectra_api.bare_spectrum()


@pytest.fixture
def white():
    return NoiseSpectrum(white_floor=2.0e4)


@pytest.fixture
def single_lorentzian():
    return NoiseSpectrum(lorentzians=(LorentzianComponent(delta=3.0e6, tau_c=20e-9),))


def make_trace(times, values, n_pulses=128, label="", **kwargs) -> CoherenceTrace:
    return CoherenceTrace(
        n_pulses=n_pulses,
        t_pi=0.0,
        times=np.asarray(times, dtype=float),
        values=np.asarray(values, dtype=float),
        label=label,
        **kwargs,
    )


def base_config(**sections) -> dict:
    config = {"schema_version": 1, "run": {"seed": 7}}
    config.update(sections)
    return config
