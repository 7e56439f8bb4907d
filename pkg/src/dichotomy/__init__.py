"""Resolvent set versus uniform hyperbolicity for dynamically defined matrix Jacobi operators.

[H u]_n = D(T^{n-1} w) u_{n-1} + D(T^n w) u_{n+1} + V(T^n w) u_n on l-vector
sequences, together with its transfer-matrix cocycle A_z.  The modules are

dynamics        base systems (rotations, translations, skew-shifts, cycles)
model           coefficient maps D, V and presets
cocycle         A_z, transfer matrices, stabilized products, solutions
hyperbolicity   finite growth certificates, bounded orbits, invariant splitting
finite_section  truncated operators, Weyl residuals, Floquet oracle
green           Wronskians, decaying frames, Green function, Herglotz indicator
config, scan    scan configuration, energy-axis classification, exports
"""
from .cocycle import cocycle_matrix, propagate_solution, stabilized_chain, transfer
from .config import ConfigError, ScanConfig, parse_config, serialize
from .dynamics import BaseSystem, cycle, rotation, sample_base, skew_shift, translation
from .finite_section import (periodic_monodromy_oracle, truncate, truncated_spectrum,
                             weyl_residual)
from .green import (build_decaying_frames, green_block, green_table, herglotz_indicator,
                    resolvent_check, verify_green_identities, wronskian, wronskian_Q)
from .hyperbolicity import (analyze, bounded_orbit_search, growth_indicator, splitting,
                            splitting_orbit, ug_certify)
from .model import (JacobiFamily, MatrixField, constant_block, cosine, free, matrix_trig,
                    periodic, validate)
from .scan import export, scan

__version__ = "0.1.0"
