//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` print FAIL like any other but do not
//! fail the process; every other failure does.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use boundary_mc::boundary::{BoundarySlice, SearchMode};
use boundary_mc::contract::{discount_factor, exercise_payoff, AugmentedState};
use boundary_mc::lattice::{black_scholes, crr_price, geo_asian_closed_form, geo_avg_tree, TreeConfig};
use boundary_mc::pricer::{generate_sample, price_american, price_american_on, price_european, AmericanConfig};
use boundary_mc::process::{sample_terminal_with_shift, simulate_bridge, simulate_forward, simulate_forward_tilted};
use boundary_mc::study::{
    run_error_study, sample_random_options, sweep_convergence, Moments, StudyConfig, StudyOutcome, SweepConfig,
};
use boundary_mc::{ContractSpec, ExerciseStyle, OptionKind, ProcessParams, TimeGrid};

const MASTER_SEED: u64 = 1;
const N_PATHS: usize = 100_000;
const N_STEPS: usize = 100;

const C1_OPTIONS: usize = 20;
const C1_MIN_INSIDE: usize = 19;
const C1_BUDGET: Duration = Duration::from_secs(120);

const C2_OPTIONS: usize = 50;
const C2_MAX_ABS_MEAN: f64 = 0.005;
const C2_SPREAD_RATIO: (f64, f64) = (0.5, 2.0);

const C4_SEEDS: u64 = 20;

const C5_OPTIONS: usize = 100;
const C5_SMOKE_OPTIONS: usize = 25;
const C5_TARGET_IN_SAMPLE: f64 = -0.0024;
const C5_TARGET_INDEPENDENT: f64 = -0.001;
const C5_TOL: f64 = 0.0025;
const C5_SMOKE_TOL: f64 = 0.005;

const C6_OPTIONS: usize = 50;
const C6_MAX_ABS_MEAN: f64 = 0.02;

const C7_CRR_STEPS: usize = 10_000;
const C7_CRR_REL: f64 = 1e-3;
const C7_GEO_STEPS: usize = 200;
const C7_GEO_DENSITY: usize = 16;
const C7_GEO_REL: f64 = 0.002;

const C8_BUDGET: Duration = Duration::from_secs(300);

/// Criteria expected to fail; the README explains each one.
const KNOWN_FAILURES: &[&str] = &["4", "5-smoke", "5"];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: &'static str, title: &str, pass: bool, detail: String, elapsed: Duration) -> Outcome {
    println!(
        "criterion {id}: {} {title}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    Outcome { id, pass, detail }
}

fn pct(x: f64) -> String {
    format!("{:+.3}%", 100.0 * x)
}

fn moments_line(name: &str, m: &Moments) -> String {
    format!("{name} mean {} sd {} (n={})", pct(m.mean), pct(m.std_dev), m.count)
}

fn study(kind: OptionKind, n_options: usize, mode: SearchMode) -> StudyOutcome {
    let cfg = StudyConfig {
        kind,
        n_options,
        n_paths: N_PATHS,
        n_steps: N_STEPS,
        mode,
        seed: MASTER_SEED,
        ..StudyConfig::default()
    };
    run_error_study(&cfg).expect("study config is valid")
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let draws = sample_random_options(C1_OPTIONS, MASTER_SEED, OptionKind::VanillaPut, N_STEPS).unwrap();
    let mut inside = 0;
    for (j, (p, c)) in draws.iter().enumerate() {
        let eu = c.with_style(ExerciseStyle::European);
        let s = generate_sample(p, &eu, N_PATHS, 1000 + j as u64, true).unwrap();
        let e = price_european(&s, &eu).unwrap();
        let bs = black_scholes(OptionKind::VanillaPut, p, c.strike, c.expiry).unwrap();
        if (e.value - bs).abs() <= 3.0 * e.std_error {
            inside += 1;
        }
    }
    let elapsed = t.elapsed();
    report(
        "1",
        "European sanity",
        inside >= C1_MIN_INSIDE && elapsed < C1_BUDGET,
        format!("{inside}/{C1_OPTIONS} within 3 SE of Black-Scholes (need {C1_MIN_INSIDE}, budget {} s)", C1_BUDGET.as_secs()),
        elapsed,
    )
}

fn criteria_2_3() -> Vec<Outcome> {
    let t = Instant::now();
    let a = study(OptionKind::VanillaPut, C2_OPTIONS, SearchMode::Exact);
    let b = study(OptionKind::VanillaPut, C2_OPTIONS, SearchMode::Grid);
    let elapsed = t.elapsed();

    let mut pass2 = true;
    let mut parts = Vec::new();
    for (label, out) in [("3a", &a), ("3b", &b)] {
        let s = out.summary();
        let ratio = s.in_sample.std_dev / s.european.std_dev;
        let ok = s.failed == 0
            && s.in_sample.count >= C2_OPTIONS - s.excluded
            && s.in_sample.mean.abs() <= C2_MAX_ABS_MEAN
            && ratio >= C2_SPREAD_RATIO.0
            && ratio <= C2_SPREAD_RATIO.1;
        pass2 &= ok;
        parts.push(format!(
            "[{label}] {}; sd ratio to European {ratio:.2}; {}; {}",
            moments_line("in-sample", &s.in_sample),
            moments_line("averaged", &s.averaged),
            moments_line("european", &s.european),
        ));
    }
    let c2 = report(
        "2",
        "vanilla American accuracy",
        pass2,
        format!(
            "{} (need |mean| <= {}, ratio in [{}, {}])",
            parts.join(" "),
            pct(C2_MAX_ABS_MEAN),
            C2_SPREAD_RATIO.0,
            C2_SPREAD_RATIO.1
        ),
        elapsed,
    );

    let ga = a.summary().bias_gap;
    let gb = b.summary().bias_gap;
    let c3 = report(
        "3",
        "bias bracket",
        ga.mean > 0.0 && gb.mean.abs() < ga.mean.abs(),
        format!(
            "mean (in-sample - independent) / reference: 3a {} (se {}), 3b {} (se {})",
            pct(ga.mean),
            pct(ga.std_dev / (ga.count as f64).sqrt()),
            pct(gb.mean),
            pct(gb.std_dev / (gb.count as f64).sqrt())
        ),
        Duration::ZERO,
    );
    vec![c2, c3]
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let cfg = SweepConfig::demo();
    let seeds: Vec<u64> = (1..=C4_SEEDS).collect();
    let rows = sweep_convergence(&cfg, &seeds).unwrap();
    let monotone = rows.windows(2).all(|w| w[1].median_distance <= w[0].median_distance);
    let last = rows.last().unwrap();
    let close = last.median_distance <= last.median_spacing;
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("N={} dist {:.4} spacing {:.5}", r.n_paths, r.median_distance, r.median_spacing))
        .collect();
    report(
        "4",
        "objective argmax convergence",
        monotone && close,
        format!(
            "{}; nonincreasing: {monotone}; within spacing at N={}: {close}",
            table.join(", "),
            last.n_paths
        ),
        t.elapsed(),
    )
}

fn criterion_5() -> Vec<Outcome> {
    let t = Instant::now();
    let full = study(OptionKind::GeoAvgPut, C5_OPTIONS, SearchMode::Exact);
    let elapsed = t.elapsed();
    let smoke = StudyOutcome {
        config: full.config.clone(),
        records: full.records[..C5_SMOKE_OPTIONS].to_vec(),
    };
    let check = |out: &StudyOutcome, tol: f64| {
        let s = out.summary();
        let ok_in = (s.in_sample.mean - C5_TARGET_IN_SAMPLE).abs() <= tol;
        let ok_ind = (s.independent.mean - C5_TARGET_INDEPENDENT).abs() <= tol;
        let detail = format!(
            "{} (target {}); {} (target {}); tolerance {} pp; {}",
            moments_line("in-sample", &s.in_sample),
            pct(C5_TARGET_IN_SAMPLE),
            moments_line("independent", &s.independent),
            pct(C5_TARGET_INDEPENDENT),
            100.0 * tol,
            moments_line("european vs closed form", &s.european),
        );
        (s.failed == 0 && ok_in && ok_ind, detail)
    };
    let (ok_smoke, d_smoke) = check(&smoke, C5_SMOKE_TOL);
    let (ok_full, d_full) = check(&full, C5_TOL);
    vec![
        report("5-smoke", "geometric-average study (25 options)", ok_smoke, d_smoke, elapsed),
        report("5", "geometric-average study (100 options)", ok_full, d_full, Duration::ZERO),
    ]
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let out = study(OptionKind::ArithAvgPut, C6_OPTIONS, SearchMode::Exact);
    let s = out.summary();
    report(
        "6",
        "arithmetic-average approximation",
        s.failed == 0 && s.in_sample.count == C6_OPTIONS && s.in_sample.mean.abs() < C6_MAX_ABS_MEAN,
        format!(
            "MC American vs approximation: {}; {} (need |mean| < {})",
            moments_line("in-sample", &s.in_sample),
            moments_line("averaged", &s.averaged),
            pct(C6_MAX_ABS_MEAN)
        ),
        t.elapsed(),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut worst_crr: f64 = 0.0;
    for (p, c) in sample_random_options(3, MASTER_SEED + 6, OptionKind::VanillaPut, C7_CRR_STEPS).unwrap() {
        let eu = c.with_style(ExerciseStyle::European);
        let tree = crr_price(&TreeConfig {
            n_steps: C7_CRR_STEPS,
            params: p,
            contract: eu,
        })
        .unwrap()
        .price;
        let bs = black_scholes(OptionKind::VanillaPut, &p, c.strike, c.expiry).unwrap();
        worst_crr = worst_crr.max(((tree - bs) / bs).abs());
    }

    let mut worst_geo: f64 = 0.0;
    let draws = sample_random_options(3, MASTER_SEED + 7, OptionKind::GeoAvgPut, C7_GEO_STEPS).unwrap();
    for (p, c) in &draws {
        let eu = c.with_style(ExerciseStyle::European);
        let tree = geo_avg_tree(
            &TreeConfig {
                n_steps: C7_GEO_STEPS,
                params: *p,
                contract: eu,
            },
            C7_GEO_DENSITY,
        )
        .unwrap();
        let grid = TimeGrid::for_contract(&eu).unwrap();
        let closed = geo_asian_closed_form(p, c.strike, &grid).unwrap();
        worst_geo = worst_geo.max(((tree - closed) / closed).abs());
    }

    let (p, c) = sample_random_options(1, MASTER_SEED + 8, OptionKind::GeoAvgPut, N_STEPS).unwrap()[0];
    let eu = c.with_style(ExerciseStyle::European);
    let s = generate_sample(&p, &eu, N_PATHS, 5, true).unwrap();
    let mc = price_european(&s, &eu).unwrap();
    let closed = geo_asian_closed_form(&p, c.strike, &s.grid).unwrap();
    let z = (mc.value - closed) / mc.std_error;

    report(
        "7",
        "oracle cross-validation",
        worst_crr <= C7_CRR_REL && worst_geo <= C7_GEO_REL && z.abs() <= 3.0,
        format!(
            "CRR({C7_CRR_STEPS}) vs Black-Scholes worst {:.2e} (need {C7_CRR_REL:e}); geometric tree({C7_GEO_STEPS}) vs closed form worst {} (need {}); MC geometric European z = {z:.2}",
            worst_crr,
            pct(worst_geo),
            pct(C7_GEO_REL)
        ),
        t.elapsed(),
    )
}

fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let p = ProcessParams::new(0.10, 0.40, 100.0).unwrap();
    let mut failed = Vec::new();

    // bridge marginals against forward marginals
    let g = TimeGrid::uniform(0.5, 4).unwrap();
    let n = 20_000;
    let (terminal, _) = sample_terminal_with_shift(&p, &g, n, 0.0, 31).unwrap();
    let bridged = simulate_bridge(&p, &g, n, &terminal, 32).unwrap();
    let forward = simulate_forward(&p, &g, n, 33).unwrap();
    let crit = 1.628 * (2.0 / n as f64).sqrt();
    for i in 1..4 {
        let mut a: Vec<f64> = (0..n).map(|q| bridged.value(q, i)).collect();
        let mut b: Vec<f64> = (0..n).map(|q| forward.value(q, i)).collect();
        if ks_statistic(&mut a, &mut b) >= crit {
            failed.push("bridge marginals");
        }
    }

    // weight normalization
    let tilted = simulate_forward_tilted(&p, &g, 10_000, 3, -0.5).unwrap();
    let mean_w = tilted.weights().iter().sum::<f64>() / 10_000.0;
    if (mean_w - 1.0).abs() > 1e-12 {
        failed.push("weight normalization");
    }

    // payoff identities
    let call = ContractSpec::new(OptionKind::VanillaCall, 100.0, 0.5, ExerciseStyle::European, 1).unwrap();
    let put = ContractSpec::new(OptionKind::VanillaPut, 100.0, 0.5, ExerciseStyle::European, 1).unwrap();
    for k in 1..400 {
        let st = AugmentedState::initial(k as f64 * 0.5);
        let diff = exercise_payoff(&call, st) - exercise_payoff(&put, st);
        if (diff - (st.s - 100.0)).abs() > 1e-12 {
            failed.push("call-put payoff identity");
            break;
        }
    }

    // discount multiplicativity
    let prod: f64 = (0..100).map(|_| discount_factor(0.10, 0.5 / 100.0)).product();
    if ((prod - (-0.05f64).exp()) / prod).abs() > 1e-12 {
        failed.push("discount multiplicativity");
    }

    // American dominates European on the same sample
    for (strike, seed) in [(90.0, 1u64), (100.0, 2), (115.0, 3)] {
        let c = ContractSpec::new(OptionKind::VanillaPut, strike, 0.5, ExerciseStyle::American, 25).unwrap();
        let s = generate_sample(&p, &c, 20_000, seed, true).unwrap();
        let cfg = AmericanConfig {
            n_paths: 20_000,
            seed,
            ..AmericanConfig::default()
        };
        let am = price_american_on(&s, &c, cfg).unwrap().estimate;
        let eu = price_european(&s, &c.with_style(ExerciseStyle::European)).unwrap();
        if am.value < eu.value - 3.0 * am.std_error.hypot(eu.std_error) {
            failed.push("American >= European");
        }
    }

    // expiry boundary equals the strike
    for kind in [OptionKind::VanillaPut, OptionKind::GeoAvgPut, OptionKind::ArithAvgPut] {
        let c = ContractSpec::new(kind, 95.0, 0.5, ExerciseStyle::American, 10).unwrap();
        let cfg = AmericanConfig {
            n_paths: 2_000,
            ..AmericanConfig::default()
        };
        let b = price_american(&p, &c, cfg).unwrap().boundary;
        let at_strike = match &b.slices[10] {
            BoundarySlice::Scalar(pt) => pt.threshold == 95.0,
            BoundarySlice::Binned(bb) => bb.points.iter().all(|pt| pt.threshold == 95.0),
        };
        if !at_strike {
            failed.push("expiry boundary");
        }
    }

    // determinism under thread-count variation
    let c = ContractSpec::new(OptionKind::VanillaPut, 100.0, 0.5, ExerciseStyle::American, 30).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let cfg = AmericanConfig {
                    n_paths: 20_000,
                    seed: 8,
                    ..AmericanConfig::default()
                };
                let r = price_american(&p, &c, cfg).unwrap();
                (r.estimate, r.boundary)
            })
    };
    if run(1) != run(4) {
        failed.push("thread-count determinism");
    }

    let elapsed = t.elapsed();
    let pass = failed.is_empty() && elapsed < C8_BUDGET;
    let detail = if failed.is_empty() {
        format!("all property checks hold (budget {} s)", C8_BUDGET.as_secs())
    } else {
        format!("failed: {}", failed.join(", "))
    };
    report("8", "property suite", pass, detail, elapsed)
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut outcomes = vec![criterion_7(), criterion_8(), criterion_1(), criterion_4()];
    outcomes.extend(criteria_2_3());
    outcomes.extend(criterion_5());
    outcomes.push(criterion_6());

    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_FAILURES.contains(&o.id))
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria pass; {} unexpected failure(s) [{:.0} s total]",
        outcomes.len(),
        unexpected.len(),
        start.elapsed().as_secs_f64()
    );
    for o in &unexpected {
        eprintln!("unexpected failure of criterion {}: {}", o.id, o.detail);
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
