//! Independent semiclassical predictions for the driven dynamics: classical
//! trajectories on the phase torus, phase-averaged drift and spreading,
//! quasi-periods of the incommensurate drive, adiabaticity estimates, and the
//! metric-based purity prediction.
