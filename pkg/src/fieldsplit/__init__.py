"""Two-phase porous-media flow with field-split nonlinear solvers."""
