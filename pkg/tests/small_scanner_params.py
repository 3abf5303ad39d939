"""Shared desk-scale scanner parameters for the core test suite."""

# Desk-scale ring: small enough for fast matrix builds, same sector layout
# as the default scanner.
SMALL_BASE = dict(ring_radius=60.0, crystal_width=2.2, fov_radius=30.0,
                  n_rotation_steps=10)
