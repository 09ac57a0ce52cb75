"""Simulator for a single color center next to a cryogenic SiC Schottky contact.

The package is organised around the measurement chain of such a device:

* :mod:`sicschottky.core` - physical constants, the layered material stack
  and bulk carrier statistics.
* :mod:`sicschottky.junction` - 2-D nonlinear Poisson solver for the stripe
  contact, depletion contours, local fields and the thermionic diode law.
* :mod:`sicschottky.optics` - Stark shifts, lifetime limits and synthetic
  resonant-excitation scans of the defect line.
* :mod:`sicschottky.traps` - continuous-time Markov model of a nearby
  charge trap and its spectral fingerprints.
* :mod:`sicschottky.ionization` - vibrationally resolved photoionization
  cross sections and rate curves.
* :mod:`sicschottky.readout` - photon-counting Monte Carlo for charge
  resonance checks, single-shot readout and coherence-decay fits.
* :mod:`sicschottky.scenario` / :mod:`sicschottky.cli` - TOML scenario
  configs and the command-line front end emitting deterministic CSV data.
"""

__version__ = "0.1.0"
