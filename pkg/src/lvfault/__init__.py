"""Malfunction detection testbed for low-voltage distribution grids.

Simulates radial feeders with droop-controlled devices (some running a wrong
control curve), turns the measurements into labeled datasets and evaluates
detectors at the device connection point and at the substation.
"""

__version__ = "0.1.0"
