//! Decimated time traces produced by the integrator.

use crate::kinematics::PhaseState;

/// One simulated trajectory on a uniform output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Sample times, s.
    pub times: Vec<f64>,
    /// Phase-space samples, one 12-vector per time.
    pub states: Vec<[f64; 12]>,
    /// Seed of this trajectory's noise stream.
    pub seed: u64,
    /// Index within the ensemble.
    pub index: u64,
    /// Hash of the generating configuration.
    pub config_hash: u64,
    /// Wall-clock integration time, s (in-memory metadata only; not
    /// serialized, so stored traces stay byte-identical across reruns).
    pub wall_time: f64,
    /// Set when a PLL feedback controller lost lock during the run.
    pub pll_unlocked: bool,
}

impl Trajectory {
    /// Output sampling interval, s.
    pub fn sample_dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn state_at(&self, i: usize) -> PhaseState {
        PhaseState::from_array(&self.states[i])
    }

    /// Extract one observable as a contiguous signal.
    pub fn signal(&self, observable: Observable) -> Vec<f64> {
        let idx = observable.index();
        self.states.iter().map(|s| s[idx]).collect()
    }
}

/// Selector for one of the twelve phase-space traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observable {
    X,
    Y,
    Z,
    Px,
    Py,
    Pz,
    Alpha,
    Beta,
    Gamma,
    PiAlpha,
    PiBeta,
    PiGamma,
}

impl Observable {
    pub const ALL: [Observable; 12] = [
        Observable::X,
        Observable::Y,
        Observable::Z,
        Observable::Px,
        Observable::Py,
        Observable::Pz,
        Observable::Alpha,
        Observable::Beta,
        Observable::Gamma,
        Observable::PiAlpha,
        Observable::PiBeta,
        Observable::PiGamma,
    ];

    /// Column index in the 12-number state layout.
    pub fn index(&self) -> usize {
        match self {
            Observable::X => 0,
            Observable::Y => 1,
            Observable::Z => 2,
            Observable::Px => 3,
            Observable::Py => 4,
            Observable::Pz => 5,
            Observable::Alpha => 6,
            Observable::Beta => 7,
            Observable::Gamma => 8,
            Observable::PiAlpha => 9,
            Observable::PiBeta => 10,
            Observable::PiGamma => 11,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Observable::X => "x",
            Observable::Y => "y",
            Observable::Z => "z",
            Observable::Px => "px",
            Observable::Py => "py",
            Observable::Pz => "pz",
            Observable::Alpha => "alpha",
            Observable::Beta => "beta",
            Observable::Gamma => "gamma",
            Observable::PiAlpha => "pi_alpha",
            Observable::PiBeta => "pi_beta",
            Observable::PiGamma => "pi_gamma",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|o| o.label() == label)
    }
}
