//! Option contracts, exercise payoffs and running-average state.
//!
//! Average-rate contracts average over the whole lifetime, with the initial
//! fixing `S_0` included: at grid index `i` the average runs over `i + 1`
//! points. American contracts may be exercised at every grid index, so an
//! American contract on an `n_steps` grid is the Bermudan contract with
//! `n_steps` exercise dates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptionKind {
    VanillaPut,
    VanillaCall,
    GeoAvgPut,
    ArithAvgPut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExerciseStyle {
    European,
    American,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Arithmetic,
    Geometric,
}

impl OptionKind {
    pub fn averaging(self) -> Option<Averaging> {
        match self {
            OptionKind::GeoAvgPut => Some(Averaging::Geometric),
            OptionKind::ArithAvgPut => Some(Averaging::Arithmetic),
            _ => None,
        }
    }

    pub fn is_call(self) -> bool {
        matches!(self, OptionKind::VanillaCall)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptionKind::VanillaPut => "vanilla-put",
            OptionKind::VanillaCall => "vanilla-call",
            OptionKind::GeoAvgPut => "geo-avg-put",
            OptionKind::ArithAvgPut => "arith-avg-put",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub kind: OptionKind,
    pub strike: f64,
    pub expiry: f64,
    pub style: ExerciseStyle,
    pub n_steps: usize,
}

impl ContractSpec {
    pub fn new(
        kind: OptionKind,
        strike: f64,
        expiry: f64,
        style: ExerciseStyle,
        n_steps: usize,
    ) -> Result<Self> {
        let c = Self {
            kind,
            strike,
            expiry,
            style,
            n_steps,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike.is_finite() && self.strike > 0.0) {
            return Err(invalid(format!("strike must be positive, got {}", self.strike)));
        }
        if !(self.expiry.is_finite() && self.expiry > 0.0) {
            return Err(invalid(format!("expiry must be positive, got {}", self.expiry)));
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn with_style(mut self, style: ExerciseStyle) -> Self {
        self.style = style;
        self
    }

    /// Immediate exercise value for a state.
    pub fn payoff(&self, state: AugmentedState) -> f64 {
        exercise_payoff(self, state)
    }
}

/// Underlying value together with the running average of the path so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub s: f64,
    pub s_bar: f64,
}

impl AugmentedState {
    /// State at the first fixing, where the average equals the spot.
    pub fn initial(s0: f64) -> Self {
        Self { s: s0, s_bar: s0 }
    }
}

pub fn exercise_payoff(contract: &ContractSpec, state: AugmentedState) -> f64 {
    let x = contract.strike;
    match contract.kind {
        OptionKind::VanillaPut => (x - state.s).max(0.0),
        OptionKind::VanillaCall => (state.s - x).max(0.0),
        OptionKind::GeoAvgPut | OptionKind::ArithAvgPut => (x - state.s_bar).max(0.0),
    }
}

/// Extends a running average over fixings `0..i` by the fixing `s_new` at index `i`.
pub fn update_average(averaging: Averaging, s_bar_prev: f64, s_new: f64, i: usize) -> f64 {
    debug_assert!(i >= 1);
    let n = i as f64;
    match averaging {
        Averaging::Arithmetic => (n * s_bar_prev + s_new) / (n + 1.0),
        Averaging::Geometric => ((n * s_bar_prev.ln() + s_new.ln()) / (n + 1.0)).exp(),
    }
}

pub fn discount_factor(rate: f64, dt: f64) -> f64 {
    (-rate * dt).exp()
}

/// Running averages of a whole path, one per grid index.
pub fn running_averages(averaging: Averaging, path: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.len());
    match averaging {
        Averaging::Arithmetic => {
            let mut acc = 0.0;
            for (i, &s) in path.iter().enumerate() {
                acc = if i == 0 { s } else { update_average(averaging, acc, s, i) };
                out.push(acc);
            }
        }
        Averaging::Geometric => {
            // carried in log space; exp only on output
            let mut log_acc = 0.0;
            for (i, &s) in path.iter().enumerate() {
                let n = i as f64;
                log_acc = (n * log_acc + s.ln()) / (n + 1.0);
                out.push(log_acc.exp());
            }
        }
    }
    out
}
