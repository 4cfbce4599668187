"""
Physical constants and rubidium-87 D2 line defaults (SI units)
"""
import numpy as np
from scipy import constants

HBAR = constants.hbar
H = constants.h
K_B = constants.k
AMU = constants.atomic_mass
G_ACCEL = constants.g

RB87_MASS = 86.909180527 * AMU
D2_WAVELENGTH = 780.241209686e-9
D2_GAMMA = 2 * np.pi * 6.0666e6

# Reference saturation intensity of the cycling transition, |d|^2 = 1/2 P_D2
I_SAT_REF = 16.7  # W/m^2 (1.67 mW/cm^2)
D_SQ_REF = 0.5

# Resonant cross section for the imaging transition
SIGMA_RB = 3 * D2_WAVELENGTH ** 2 / (2 * np.pi)

# Unit helpers
MW_PER_CM2 = 10.0           # 1 mW/cm^2 in W/m^2
PER_MW_CM2 = 1e7            # 1 mW^-1 cm^-2 in 1/(W m^2)
PER_CM4 = 1e8               # 1 cm^-4 in m^-4
MHZ = 2 * np.pi * 1e6       # 1 MHz in rad/s
