//! Reference prices: Cox-Ross-Rubinstein trees, the Black-Scholes formula,
//! the discrete geometric-average closed form and an augmented-state tree
//! for geometric-average puts.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::contract::{ContractSpec, ExerciseStyle, OptionKind};
use crate::error::{invalid, Error, Result};
use crate::process::{ProcessParams, TimeGrid};

fn norm_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub n_steps: usize,
    pub params: ProcessParams,
    pub contract: ContractSpec,
}

#[derive(Debug, Clone, Copy)]
struct Crr {
    dt: f64,
    u: f64,
    q: f64,
    disc: f64,
    a: f64,
}

impl Crr {
    fn new(params: &ProcessParams, expiry: f64, n_steps: usize) -> Result<Self> {
        params.validate()?;
        if n_steps == 0 {
            return Err(invalid("tree needs at least one step"));
        }
        let dt = expiry / n_steps as f64;
        let a = params.sigma * dt.sqrt();
        let u = a.exp();
        let d = 1.0 / u;
        let q = ((params.rate * dt).exp() - d) / (u - d);
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Unstable {
                q,
                dt,
                sigma: params.sigma,
                rate: params.rate,
            });
        }
        Ok(Self {
            dt,
            u,
            q,
            disc: (-params.rate * dt).exp(),
            a,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeResult {
    pub price: f64,
    /// Per tree step: for puts the highest node where exercise is optimal,
    /// for calls the lowest; `None` where no node exercises.
    pub boundary: Vec<Option<f64>>,
    /// Per tree step: the exercise/hold crossing, linearly interpolated
    /// between the two nodes that bracket it.
    pub crossing: Vec<Option<f64>>,
}

/// Vanilla CRR tree. American nodes may exercise every step.
pub fn crr_price(config: &TreeConfig) -> Result<TreeResult> {
    crr_bermudan(config, 1)
}

/// CRR tree on `n_steps` steps where exercise is allowed only every
/// `exercise_every` steps (and at expiry). The boundary vectors are indexed
/// by exercise date.
pub fn crr_bermudan(config: &TreeConfig, exercise_every: usize) -> Result<TreeResult> {
    let c = &config.contract;
    c.validate()?;
    if c.kind.averaging().is_some() {
        return Err(invalid("crr_price prices vanilla contracts; use geo_avg_tree"));
    }
    if exercise_every == 0 || config.n_steps % exercise_every != 0 {
        return Err(invalid("exercise spacing must divide the step count"));
    }
    let n = config.n_steps;
    let tree = Crr::new(&config.params, c.expiry, n)?;
    let s0 = config.params.s0;
    let x = c.strike;
    let call = c.kind.is_call();
    let payoff = |s: f64| if call { (s - x).max(0.0) } else { (x - s).max(0.0) };
    let spot = |i: usize, j: usize| s0 * tree.u.powi(2 * j as i32 - i as i32);
    let american = c.style == ExerciseStyle::American;

    let dates = n / exercise_every;
    let mut boundary = vec![None; dates + 1];
    let mut crossing = vec![None; dates + 1];
    boundary[dates] = Some(x);
    crossing[dates] = Some(x);

    let mut v: Vec<f64> = (0..=n).map(|j| payoff(spot(n, j))).collect();
    for i in (0..n).rev() {
        let exercisable = american && i % exercise_every == 0;
        let mut diff = Vec::new();
        for j in 0..=i {
            let cont = tree.disc * (tree.q * v[j + 1] + (1.0 - tree.q) * v[j]);
            let g = payoff(spot(i, j));
            if exercisable {
                diff.push(g - cont);
                v[j] = if g > cont { g } else { cont };
            } else {
                v[j] = cont;
            }
        }
        v.truncate(i + 1);
        if exercisable {
            let date = i / exercise_every;
            let ex = |j: usize| diff[j] > 0.0 && payoff(spot(i, j)) > 0.0;
            let nodes: Vec<usize> = (0..=i).filter(|&j| ex(j)).collect();
            boundary[date] = if call {
                nodes.first().map(|&j| spot(i, j))
            } else {
                nodes.last().map(|&j| spot(i, j))
            };
            crossing[date] = interpolate_crossing(&diff, |j| spot(i, j), call, &nodes)
                .map(|b| if call { b.max(x) } else { b.min(x) });
        }
    }
    Ok(TreeResult {
        price: v[0],
        boundary,
        crossing,
    })
}

fn interpolate_crossing(
    diff: &[f64],
    spot: impl Fn(usize) -> f64,
    call: bool,
    exercised: &[usize],
) -> Option<f64> {
    // puts exercise at low nodes: the crossing sits between the highest
    // exercised node and its upper neighbour; calls mirror this
    let (inside, outside) = if call {
        let j = *exercised.first()?;
        (j, j.checked_sub(1)?)
    } else {
        let j = *exercised.last()?;
        (j, j + 1)
    };
    if outside >= diff.len() {
        return Some(spot(inside));
    }
    let (d0, d1) = (diff[inside], diff[outside]);
    let (s0, s1) = (spot(inside), spot(outside));
    if d0 == d1 {
        return Some(s0);
    }
    Some(s0 + (s1 - s0) * d0 / (d0 - d1))
}

/// Black-Scholes price of a European vanilla option. Zero volatility falls
/// back to the discounted deterministic payoff.
pub fn black_scholes(kind: OptionKind, params: &ProcessParams, strike: f64, expiry: f64) -> Result<f64> {
    params.validate()?;
    if kind.averaging().is_some() {
        return Err(invalid("black_scholes prices vanilla contracts"));
    }
    if !(strike > 0.0 && expiry >= 0.0) {
        return Err(invalid("strike must be positive and expiry nonnegative"));
    }
    let (s, r, sig) = (params.s0, params.rate, params.sigma);
    let df = (-r * expiry).exp();
    let vol = sig * expiry.sqrt();
    if vol == 0.0 {
        let fwd = s / df;
        let payoff = if kind.is_call() {
            (fwd - strike).max(0.0)
        } else {
            (strike - fwd).max(0.0)
        };
        return Ok(df * payoff);
    }
    let d1 = ((s / strike).ln() + (r + 0.5 * sig * sig) * expiry) / vol;
    let d2 = d1 - vol;
    Ok(if kind.is_call() {
        s * norm_cdf(d1) - strike * df * norm_cdf(d2)
    } else {
        strike * df * norm_cdf(-d2) - s * norm_cdf(-d1)
    })
}

/// European put on the geometric average over fixing times `fixings`
/// (which should start at 0), paid at `expiry`.
pub fn geo_asian_put_on_fixings(
    params: &ProcessParams,
    strike: f64,
    fixings: &[f64],
    expiry: f64,
) -> Result<f64> {
    params.validate()?;
    if fixings.is_empty() {
        return Err(invalid("need at least one fixing"));
    }
    let m = fixings.len() as f64;
    let mu = params.log_drift();
    let mean = params.s0.ln() + mu * fixings.iter().sum::<f64>() / m;
    // sum_{j,k} min(t_j, t_k) for sorted times
    let mut sorted = fixings.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let cov: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, t)| t * (2 * (n - 1 - k) + 1) as f64)
        .sum();
    let var = params.sigma * params.sigma * cov / (m * m);
    let df = (-params.rate * expiry).exp();
    if var <= 0.0 {
        return Ok(df * (strike - mean.exp()).max(0.0));
    }
    let sd = var.sqrt();
    let d1 = (mean - strike.ln() + var) / sd;
    let d2 = d1 - sd;
    Ok(df * (strike * norm_cdf(-d2) - (mean + 0.5 * var).exp() * norm_cdf(-d1)))
}

/// Closed form for a European geometric-average put whose fixings are the
/// grid points (including `S_0`).
pub fn geo_asian_closed_form(params: &ProcessParams, strike: f64, grid: &TimeGrid) -> Result<f64> {
    geo_asian_put_on_fixings(params, strike, grid.times(), grid.expiry())
}

/// Augmented-state tree for puts on the geometric average.
///
/// Node `(i, j)` carries the reachable range of the height sum
/// `A = sum_k (2 j_k - k)`, so that `ln S_bar = ln S_0 + sigma sqrt(dt) A / (i + 1)`.
/// Each node stores values on representative sums equally spaced over that
/// range, about `density` of them per `sigma sqrt(dt)` of `ln S_bar` (or every
/// reachable sum when that is fewer), and children are read by linear
/// interpolation in `A`, i.e. in `ln S_bar`. A node holds `O(density n)`
/// sums, so the work is `O(density n^3)`.
pub fn geo_avg_tree(config: &TreeConfig, density: usize) -> Result<f64> {
    let c = &config.contract;
    c.validate()?;
    if c.kind != OptionKind::GeoAvgPut {
        return Err(invalid("geo_avg_tree prices geometric-average puts"));
    }
    if density == 0 {
        return Err(invalid("representative-average density must be positive"));
    }
    let n = config.n_steps;
    let tree = Crr::new(&config.params, c.expiry, n)?;
    let ln_s0 = config.params.s0.ln();
    let x = c.strike;
    let american = c.style == ExerciseStyle::American;
    let payoff = |i: usize, sum: f64| (x - (ln_s0 + tree.a * sum / (i + 1) as f64).exp()).max(0.0);

    let grid_of = |i: usize, j: usize| -> Vec<f64> {
        let (lo, hi) = height_sum_range(i, j);
        let reachable = ((hi - lo) / 2 + 1) as usize;
        // spacing (i + 1) / density in A is sigma sqrt(dt) / density in ln S_bar
        let points = ((hi - lo) as f64 * density as f64 / (i + 1) as f64).ceil() as usize + 1;
        if reachable <= points {
            (0..reachable).map(|k| (lo + 2 * k as i64) as f64).collect()
        } else {
            let h = (hi - lo) as f64 / (points - 1) as f64;
            (0..points).map(|k| lo as f64 + k as f64 * h).collect()
        }
    };

    let mut sums: Vec<Vec<f64>> = (0..=n).map(|j| grid_of(n, j)).collect();
    let mut vals: Vec<Vec<f64>> = sums
        .iter()
        .map(|g| g.iter().map(|&a| payoff(n, a)).collect())
        .collect();

    for i in (0..n).rev() {
        let mut next_sums = Vec::with_capacity(i + 1);
        let mut next_vals = Vec::with_capacity(i + 1);
        for j in 0..=i {
            let g = grid_of(i, j);
            let h_up = (2 * (j + 1)) as f64 - (i + 1) as f64;
            let h_dn = (2 * j) as f64 - (i + 1) as f64;
            let v: Vec<f64> = g
                .iter()
                .map(|&a| {
                    let up = interp(&sums[j + 1], &vals[j + 1], a + h_up);
                    let dn = interp(&sums[j], &vals[j], a + h_dn);
                    let cont = tree.disc * (tree.q * up + (1.0 - tree.q) * dn);
                    if american {
                        cont.max(payoff(i, a))
                    } else {
                        cont
                    }
                })
                .collect();
            next_sums.push(g);
            next_vals.push(v);
        }
        sums = next_sums;
        vals = next_vals;
    }
    let _ = tree.dt;
    Ok(vals[0][0])
}

/// Smallest and largest height sum over paths reaching node `(i, j)`.
fn height_sum_range(i: usize, j: usize) -> (i64, i64) {
    let min = |i: i64, j: i64| {
        let downs = i - j;
        -downs * (downs + 1) / 2 - j * downs + j * (j + 1) / 2
    };
    let (i, j) = (i as i64, j as i64);
    (min(i, j), -min(i, i - j))
}

/// Linear interpolation on an equally spaced grid.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.len() == 1 {
        return ys[0];
    }
    let lo = xs[0];
    let h = xs[1] - xs[0];
    let pos = ((x - lo) / h).clamp(0.0, (xs.len() - 1) as f64);
    let k = (pos.floor() as usize).min(xs.len() - 2);
    let frac = pos - k as f64;
    ys[k] + frac * (ys[k + 1] - ys[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ProcessParams {
        ProcessParams::new(0.10, 0.40, 100.0).unwrap()
    }

    fn contract(kind: OptionKind, style: ExerciseStyle, strike: f64, n: usize) -> ContractSpec {
        ContractSpec::new(kind, strike, 0.5, style, n).unwrap()
    }

    #[test]
    fn one_step_call_by_hand() {
        let p = params();
        let c = contract(OptionKind::VanillaCall, ExerciseStyle::European, 100.0, 1);
        let cfg = TreeConfig { n_steps: 1, params: p, contract: c };
        let got = crr_price(&cfg).unwrap().price;
        let u = (0.4 * 0.5f64.sqrt()).exp();
        let d = 1.0 / u;
        let q = ((0.05f64).exp() - d) / (u - d);
        let hand = (-0.05f64).exp() * q * (100.0 * u - 100.0);
        assert_relative_eq!(got, hand, max_relative = 1e-14);
    }

    #[test]
    fn deep_in_the_money_american_put_exercises_now() {
        let p = ProcessParams::new(0.10, 0.05, 100.0).unwrap();
        let c = contract(OptionKind::VanillaPut, ExerciseStyle::American, 200.0, 200);
        let r = crr_price(&TreeConfig { n_steps: 200, params: p, contract: c }).unwrap();
        assert_relative_eq!(r.price, 100.0, max_relative = 1e-12);
        assert_eq!(r.boundary[200], Some(200.0));
        assert!(r.boundary[0].unwrap() >= 100.0);
    }

    #[test]
    fn unstable_tree_is_reported() {
        let p = ProcessParams::new(0.5, 0.01, 100.0).unwrap();
        let c = contract(OptionKind::VanillaPut, ExerciseStyle::American, 100.0, 10);
        let err = crr_price(&TreeConfig { n_steps: 10, params: p, contract: c }).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }

    #[test]
    fn put_call_parity_and_limits() {
        let p = params();
        let call = black_scholes(OptionKind::VanillaCall, &p, 95.0, 0.5).unwrap();
        let put = black_scholes(OptionKind::VanillaPut, &p, 95.0, 0.5).unwrap();
        let rhs = 100.0 - 95.0 * (-0.05f64).exp();
        assert!((call - put - rhs).abs() <= 1e-12 * rhs);
        assert!(black_scholes(OptionKind::VanillaPut, &p, 1e-6, 0.5).unwrap() < 1e-12);
        let flat = ProcessParams::new(0.0, 0.0, 100.0).unwrap();
        assert_eq!(black_scholes(OptionKind::VanillaPut, &flat, 120.0, 0.5).unwrap(), 20.0);
    }

    #[test]
    fn crr_european_matches_black_scholes() {
        let p = params();
        let c = contract(OptionKind::VanillaPut, ExerciseStyle::European, 100.0, 10_000);
        let tree = crr_price(&TreeConfig { n_steps: 10_000, params: p, contract: c })
            .unwrap()
            .price;
        let bs = black_scholes(OptionKind::VanillaPut, &p, 100.0, 0.5).unwrap();
        assert!((tree - bs).abs() / bs < 1e-3);
    }

    #[test]
    fn geo_closed_form_degenerate_cases() {
        let p = params();
        // a single fixing at time zero: the payoff is known today
        let v = geo_asian_put_on_fixings(&p, 110.0, &[0.0], 0.5).unwrap();
        assert_relative_eq!(v, (-0.05f64).exp() * 10.0, max_relative = 1e-14);
        // zero volatility: deterministic geometric average of s0 e^{r t_k}
        let flat = ProcessParams::new(0.10, 0.0, 100.0).unwrap();
        let g = TimeGrid::uniform(0.5, 4).unwrap();
        let avg = (g.times().iter().map(|t| (100.0f64).ln() + 0.10 * t).sum::<f64>() / 5.0).exp();
        let v = geo_asian_closed_form(&flat, 110.0, &g).unwrap();
        assert_relative_eq!(v, (-0.05f64).exp() * (110.0 - avg), max_relative = 1e-13);
    }

    /// Full enumeration of the 2^n paths of an n-step CRR tree.
    fn enumerate_geo_put(p: &ProcessParams, strike: f64, expiry: f64, n: usize) -> f64 {
        let dt = expiry / n as f64;
        let u = (p.sigma * dt.sqrt()).exp();
        let q = ((p.rate * dt).exp() - 1.0 / u) / (u - 1.0 / u);
        let mut total = 0.0;
        for bits in 0..(1u32 << n) {
            let mut s = p.s0;
            let mut log_sum = s.ln();
            let mut prob = 1.0;
            for k in 0..n {
                if bits >> k & 1 == 1 {
                    s *= u;
                    prob *= q;
                } else {
                    s /= u;
                    prob *= 1.0 - q;
                }
                log_sum += s.ln();
            }
            let avg = (log_sum / (n + 1) as f64).exp();
            total += prob * (strike - avg).max(0.0);
        }
        (-p.rate * expiry).exp() * total
    }

    #[test]
    fn geo_tree_matches_enumeration() {
        let p = params();
        for n in [2usize, 3, 6] {
            let c = contract(OptionKind::GeoAvgPut, ExerciseStyle::European, 104.0, n);
            let tree = geo_avg_tree(&TreeConfig { n_steps: n, params: p, contract: c }, 4).unwrap();
            let brute = enumerate_geo_put(&p, 104.0, 0.5, n);
            assert_relative_eq!(tree, brute, max_relative = 1e-12);
        }
    }

    #[test]
    fn geo_tree_american_dominates() {
        let p = params();
        let eu = contract(OptionKind::GeoAvgPut, ExerciseStyle::European, 105.0, 50);
        let am = eu.with_style(ExerciseStyle::American);
        let e = geo_avg_tree(&TreeConfig { n_steps: 50, params: p, contract: eu }, 4).unwrap();
        let a = geo_avg_tree(&TreeConfig { n_steps: 50, params: p, contract: am }, 4).unwrap();
        assert!(a >= e);
    }

    #[test]
    fn height_sums() {
        assert_eq!(height_sum_range(0, 0), (0, 0));
        assert_eq!(height_sum_range(1, 1), (1, 1));
        assert_eq!(height_sum_range(2, 1), (-1, 1));
        assert_eq!(height_sum_range(3, 0), (-6, -6));
    }

    #[test]
    fn bermudan_crossing_lies_between_nodes() {
        let p = ProcessParams::new(0.10, 0.40, 50.0).unwrap();
        let c = ContractSpec::new(OptionKind::VanillaPut, 50.0, 5.0 / 12.0, ExerciseStyle::American, 50)
            .unwrap();
        let r = crr_bermudan(&TreeConfig { n_steps: 2000, params: p, contract: c }, 40).unwrap();
        let b = r.boundary[45].unwrap();
        let x = r.crossing[45].unwrap();
        assert!(x >= b && x < 50.0);
    }
}
