//! Log-normal diffusion paths: forward simulation, Brownian-bridge filling
//! and importance-sampled terminal draws.
//!
//! The log price follows `d ln S = (r - sigma^2/2) dt + sigma dW`, so the
//! discounted price (not the log price) is a martingale under the
//! simulation measure.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{ContractSpec, OptionKind};
use crate::error::{invalid, Error, Result};
use crate::rng::{PathRng, DOMAIN_BRIDGE, DOMAIN_FORWARD, DOMAIN_TERMINAL};

/// Paths per rayon work item. Only affects scheduling, never results.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessParams {
    pub rate: f64,
    pub sigma: f64,
    pub s0: f64,
}

impl ProcessParams {
    pub fn new(rate: f64, sigma: f64, s0: f64) -> Result<Self> {
        let p = Self { rate, sigma, s0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rate.is_finite() {
            return Err(invalid("rate must be finite"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(invalid(format!("s0 must be positive, got {}", self.s0)));
        }
        Ok(())
    }

    /// Drift of the log price under the pricing measure.
    pub fn log_drift(&self) -> f64 {
        self.rate - 0.5 * self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: Vec<f64>,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(expiry: f64, n_steps: usize) -> Result<Self> {
        if !(expiry.is_finite() && expiry > 0.0) {
            return Err(invalid(format!("expiry must be positive, got {expiry}")));
        }
        if n_steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        let dt = expiry / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
        times[n_steps] = expiry;
        let steps = times.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { steps, times })
    }

    pub fn from_steps(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(invalid("grid needs at least one step"));
        }
        if let Some(bad) = steps.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(invalid(format!("grid step must be positive, got {bad}")));
        }
        let mut times = Vec::with_capacity(steps.len() + 1);
        let mut t = 0.0;
        times.push(t);
        for d in &steps {
            t += d;
            times.push(t);
        }
        Ok(Self { steps, times })
    }

    pub fn for_contract(contract: &ContractSpec) -> Result<Self> {
        Self::uniform(contract.expiry, contract.n_steps)
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn expiry(&self) -> f64 {
        self.times[self.steps.len()]
    }

    /// Step from index `i` to `i + 1`.
    pub fn dt(&self, i: usize) -> f64 {
        self.steps[i]
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Cumulative discount factors `D_i = prod_{k<i} exp(-r dt_k)`, one per index.
    pub fn discount_curve(&self, rate: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut d = 1.0;
        out.push(d);
        for &dt in &self.steps {
            d *= crate::contract::discount_factor(rate, dt);
            out.push(d);
        }
        out
    }

    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.steps.len() == other.steps.len()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    }
}

/// N paths on `n_steps + 1` grid points, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    values: Vec<f64>,
    weights: Vec<f64>,
    n_paths: usize,
    pub seed: u64,
    pub params: ProcessParams,
    pub grid: TimeGrid,
}

impl PathSample {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_steps() + 1
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.n_points();
        &self.values[p * w..(p + 1) * w]
    }

    pub fn value(&self, p: usize, i: usize) -> f64 {
        self.values[p * self.n_points() + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, p: usize) -> f64 {
        self.weights[p]
    }

    pub fn terminal(&self, p: usize) -> f64 {
        self.value(p, self.grid.n_steps())
    }

    /// Values of every path at grid index `i`.
    pub fn slice(&self, i: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.value(p, i)).collect()
    }

    /// Replaces the weights. They are rescaled to mean one.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_paths {
            return Err(invalid(format!(
                "{} weights for {} paths",
                weights.len(),
                self.n_paths
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("weights must be positive and finite"));
        }
        self.weights = normalize_weights(weights);
        Ok(self)
    }

    /// Assembles a sample from raw parts; used by the file reader and tests.
    pub fn from_parts(
        params: ProcessParams,
        grid: TimeGrid,
        seed: u64,
        values: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let w = grid.n_steps() + 1;
        if weights.is_empty() || values.len() != weights.len() * w {
            return Err(invalid(format!(
                "{} values do not form {} paths of {} points",
                values.len(),
                weights.len(),
                w
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("path values must be positive and finite"));
        }
        let n_paths = weights.len();
        let sample = Self {
            values,
            weights: vec![1.0; n_paths],
            n_paths,
            seed,
            params,
            grid,
        };
        sample.with_weights(weights)
    }
}

fn normalize_weights(mut w: Vec<f64>) -> Vec<f64> {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    for x in &mut w {
        *x /= mean;
    }
    w
}

/// Likelihood ratios from log-likelihoods, rescaled to mean one.
fn weights_from_log_ratios(log_lr: &[f64]) -> Vec<f64> {
    let max = log_lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    normalize_weights(log_lr.iter().map(|l| (l - max).exp()).collect())
}

fn check_count(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    Ok(())
}

pub fn simulate_forward(
    params: &ProcessParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSample> {
    simulate_forward_tilted(params, grid, n_paths, seed, 0.0)
}

/// Forward simulation with the log drift raised by `log_shift / T` per unit
/// time. The path likelihood ratio of a constant drift change depends on the
/// terminal value only, so the weights are exact ratios of the terminal
/// densities (rescaled to mean one).
pub fn simulate_forward_tilted(
    params: &ProcessParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    log_shift: f64,
) -> Result<PathSample> {
    params.validate()?;
    check_count(n_paths)?;
    if !log_shift.is_finite() || (log_shift != 0.0 && params.sigma == 0.0) {
        return Err(invalid("a drift tilt needs a finite shift and positive sigma"));
    }
    let n_pts = grid.n_steps() + 1;
    let expiry = grid.expiry();
    let mu = params.log_drift();
    let incr: Vec<(f64, f64)> = grid
        .steps()
        .iter()
        .map(|&dt| ((mu + log_shift / expiry) * dt, params.sigma * dt.sqrt()))
        .collect();
    let ln_s0 = params.s0.ln();

    let mut values = vec![0.0; n_paths * n_pts];
    values
        .par_chunks_mut(n_pts * CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            for (k, path) in chunk.chunks_mut(n_pts).enumerate() {
                let p = c * CHUNK + k;
                let mut rng = PathRng::new(seed, DOMAIN_FORWARD, p as u64);
                // log return since time 0, so a zero return gives s0 exactly
                let mut x = 0.0;
                path[0] = params.s0;
                for (i, &(a, b)) in incr.iter().enumerate() {
                    x += a + b * rng.normal();
                    path[i + 1] = params.s0 * x.exp();
                }
            }
        });

    let weights = if log_shift == 0.0 {
        vec![1.0; n_paths]
    } else {
        let mean = ln_s0 + mu * expiry;
        let var = params.sigma * params.sigma * expiry;
        let log_lr: Vec<f64> = (0..n_paths)
            .map(|p| {
                let y = values[p * n_pts + n_pts - 1].ln() - mean;
                (-2.0 * log_shift * y + log_shift * log_shift) / (2.0 * var)
            })
            .collect();
        weights_from_log_ratios(&log_lr)
    };

    Ok(PathSample {
        values,
        weights,
        n_paths,
        seed,
        params: *params,
        grid: grid.clone(),
    })
}

/// Fills path interiors between the fixed start `s0` and given terminal
/// values by iterating the bridge step backward from expiry:
/// `x_i = x_0 + (t_i / t_{i+1}) (x_{i+1} - x_0) + sigma sqrt(t_i dt_i / t_{i+1}) z`.
pub fn simulate_bridge(
    params: &ProcessParams,
    grid: &TimeGrid,
    n_paths: usize,
    terminal_values: &[f64],
    seed: u64,
) -> Result<PathSample> {
    params.validate()?;
    check_count(n_paths)?;
    if terminal_values.len() != n_paths {
        return Err(invalid(format!(
            "{} terminal values for {} paths",
            terminal_values.len(),
            n_paths
        )));
    }
    if terminal_values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("terminal values must be positive"));
    }
    let n = grid.n_steps();
    let n_pts = n + 1;
    let times = grid.times();
    let coef: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let ratio = times[i] / times[i + 1];
            (ratio, params.sigma * (times[i] * grid.dt(i) / times[i + 1]).sqrt())
        })
        .collect();
    let ln_s0 = params.s0.ln();

    let mut values = vec![0.0; n_paths * n_pts];
    values
        .par_chunks_mut(n_pts * CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            for (k, path) in chunk.chunks_mut(n_pts).enumerate() {
                let p = c * CHUNK + k;
                let mut rng = PathRng::new(seed, DOMAIN_BRIDGE, p as u64);
                path[0] = params.s0;
                path[n] = terminal_values[p];
                let mut x = terminal_values[p].ln() - ln_s0;
                for i in (1..n).rev() {
                    let (ratio, vol) = coef[i];
                    x = ratio * x + vol * rng.normal();
                    path[i] = params.s0 * x.exp();
                }
            }
        });

    Ok(PathSample {
        values,
        weights: vec![1.0; n_paths],
        n_paths,
        seed,
        params: *params,
        grid: grid.clone(),
    })
}

/// Shift of the terminal log mean that places the strike one standard
/// deviation from the tilted mean, on the out-of-the-money side only.
/// Returns 0 when the strike already sits within one standard deviation or
/// the contract is already in the money at the untilted mean.
pub fn importance_shift(params: &ProcessParams, contract: &ContractSpec) -> f64 {
    let expiry = contract.expiry;
    let sd = params.sigma * expiry.sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    let mean = params.s0.ln() + params.log_drift() * expiry;
    let gap = contract.strike.ln() - mean;
    let toward_money = match contract.kind {
        OptionKind::VanillaCall => gap > sd,
        _ => gap < -sd,
    };
    if toward_money {
        gap - gap.signum() * sd
    } else {
        0.0
    }
}

/// Terminal values drawn from the tilted terminal law, with likelihood-ratio weights.
pub fn sample_terminal_importance(
    params: &ProcessParams,
    grid: &TimeGrid,
    n_paths: usize,
    contract: &ContractSpec,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    sample_terminal_with_shift(
        params,
        grid,
        n_paths,
        importance_shift(params, contract),
        seed,
    )
}

pub fn sample_terminal_with_shift(
    params: &ProcessParams,
    grid: &TimeGrid,
    n_paths: usize,
    log_shift: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    check_count(n_paths)?;
    if !log_shift.is_finite() || (log_shift != 0.0 && params.sigma == 0.0) {
        return Err(invalid("a drift tilt needs a finite shift and positive sigma"));
    }
    let expiry = grid.expiry();
    let mean = params.s0.ln() + params.log_drift() * expiry;
    let sd = params.sigma * expiry.sqrt();
    let z: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|p| PathRng::new(seed, DOMAIN_TERMINAL, p as u64).normal())
        .collect();
    let terminals = z
        .iter()
        .map(|z| (mean + log_shift + sd * z).exp())
        .collect();
    let weights = if log_shift == 0.0 {
        vec![1.0; n_paths]
    } else {
        let var = sd * sd;
        let log_lr: Vec<f64> = z
            .iter()
            .map(|z| {
                let y = log_shift + sd * z;
                (-2.0 * log_shift * y + log_shift * log_shift) / (2.0 * var)
            })
            .collect();
        weights_from_log_ratios(&log_lr)
    };
    Ok((terminals, weights))
}

pub const PATH_FORMAT_TAG: &str = "boundary-mc-paths-v1";

/// Writes a sample as text: a header of `key,value...` records followed by
/// one `weight,S_0,...,S_N` row per path. Floats use shortest round-trip
/// formatting, so reading back reproduces the sample bit for bit.
pub fn write_sample<W: Write>(sample: &PathSample, mut out: W) -> Result<()> {
    writeln!(out, "format,{PATH_FORMAT_TAG}")?;
    writeln!(out, "rate,{:?}", sample.params.rate)?;
    writeln!(out, "sigma,{:?}", sample.params.sigma)?;
    writeln!(out, "s0,{:?}", sample.params.s0)?;
    writeln!(out, "seed,{}", sample.seed)?;
    writeln!(out, "n_paths,{}", sample.n_paths)?;
    write!(out, "steps")?;
    for dt in sample.grid.steps() {
        write!(out, ",{dt:?}")?;
    }
    writeln!(out)?;
    writeln!(out, "data")?;
    for p in 0..sample.n_paths {
        write!(out, "{:?}", sample.weights[p])?;
        for v in sample.path(p) {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_sample<R: BufRead>(input: R) -> Result<PathSample> {
    let mut lines = input.lines();
    let mut header = |key: &str| -> Result<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing `{key}` record")))??;
        let mut fields = line.split(',').map(str::to_owned);
        match fields.next() {
            Some(k) if k == key => Ok(fields.collect()),
            other => Err(Error::Format(format!("expected `{key}`, found {other:?}"))),
        }
    };
    let one = |v: Vec<String>, key: &str| -> Result<String> {
        v.into_iter()
            .next()
            .ok_or_else(|| Error::Format(format!("empty `{key}` record")))
    };
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
    };

    let tag = one(header("format")?, "format")?;
    if tag != PATH_FORMAT_TAG {
        return Err(Error::Format(format!("unsupported format {tag:?}")));
    }
    let rate = num(&one(header("rate")?, "rate")?)?;
    let sigma = num(&one(header("sigma")?, "sigma")?)?;
    let s0 = num(&one(header("s0")?, "s0")?)?;
    let seed = one(header("seed")?, "seed")?
        .parse::<u64>()
        .map_err(|e| Error::Format(e.to_string()))?;
    let n_paths = one(header("n_paths")?, "n_paths")?
        .parse::<usize>()
        .map_err(|e| Error::Format(e.to_string()))?;
    let steps = header("steps")?
        .iter()
        .map(|s| num(s))
        .collect::<Result<Vec<_>>>()?;
    header("data")?;
    drop(header);

    let grid = TimeGrid::from_steps(steps)?;
    let n_pts = grid.n_steps() + 1;
    let mut values = Vec::with_capacity(n_paths * n_pts);
    let mut weights = Vec::with_capacity(n_paths);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row = line.split(',').map(num).collect::<Result<Vec<_>>>()?;
        if row.len() != n_pts + 1 {
            return Err(Error::Format(format!(
                "row has {} fields, expected {}",
                row.len(),
                n_pts + 1
            )));
        }
        weights.push(row[0]);
        values.extend_from_slice(&row[1..]);
    }
    if weights.len() != n_paths {
        return Err(Error::Format(format!(
            "header announces {n_paths} paths, found {}",
            weights.len()
        )));
    }
    let params = ProcessParams::new(rate, sigma, s0)?;
    let mut sample = PathSample::from_parts(params, grid, seed, values, vec![1.0; n_paths])?;
    // stored weights are already normalized; keep them verbatim
    sample.weights = weights;
    Ok(sample)
}
