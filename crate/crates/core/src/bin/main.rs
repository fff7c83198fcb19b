use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use boundary_mc::boundary::{FlashlightConfig, SearchMode, DEFAULT_BINS, DEFAULT_MIN_BIN_PATHS};
use boundary_mc::lattice::{black_scholes, crr_price, geo_asian_closed_form, geo_avg_tree, TreeConfig};
use boundary_mc::pricer::{
    generate_sample, price_american_on, price_averaged, price_european, reprice_independent,
    AmericanConfig, AmericanResult, PricingRecord,
};
use boundary_mc::rng::derive_seed;
use boundary_mc::study::{objective_sweep, run_error_study, write_study, write_sweep, StudyConfig, SweepConfig};
use boundary_mc::{ContractSpec, Error, ExerciseStyle, OptionKind, ProcessParams, TimeGrid};

const OUT_DIR_ENV: &str = "BOUNDARY_MC_OUT_DIR";

#[derive(Parser)]
#[command(name = "boundary-mc", version, about = "Monte Carlo option pricing by exercise-boundary tracking")]
struct Cli {
    /// Worker threads (results do not depend on this)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price one contract by Monte Carlo
    Price(PriceArgs),
    /// Price one contract with a lattice or closed-form reference
    Oracle(OracleArgs),
    /// Locate the exercise boundary and write it as CSV
    Boundary(PriceArgs),
    /// Run a random-option error study from a JSON config
    Study(StudyArgs),
    /// Objective curves at one time step for several sample sizes
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct ContractArgs {
    /// ContractSpec JSON; individual flags override its fields
    #[arg(long)]
    contract: Option<PathBuf>,
    /// ProcessParams JSON; individual flags override its fields
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<OptionKind>,
    #[arg(long, value_parser = parse_style)]
    style: Option<ExerciseStyle>,
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long)]
    expiry: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
}

#[derive(Args)]
struct PriceArgs {
    #[command(flatten)]
    contract: ContractArgs,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seed of the independent sample (default: derived from --seed)
    #[arg(long)]
    seed2: Option<u64>,
    #[arg(long, default_value = "3a", value_parser = parse_mode)]
    mode: SearchMode,
    /// Keep tracking the boundary after it leaves the sample
    #[arg(long)]
    no_cutoff: bool,
    #[arg(long)]
    flashlight: bool,
    /// Plain forward sampling without the drift tilt
    #[arg(long)]
    no_importance: bool,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Directory for the boundary CSV
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
    /// Boundary CSV file name
    #[arg(long, default_value = "boundary.csv")]
    boundary_file: String,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    contract: ContractArgs,
    /// Tree steps (default: the contract's n_steps)
    #[arg(long)]
    tree_steps: Option<usize>,
    /// Representative averages per tree log-step for geometric-average trees
    #[arg(long, default_value_t = 16)]
    density: usize,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// SweepConfig JSON (default: the 50-step demo put)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
}

/// Config problems exit with 2, numerical or runtime failures with 1.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Json(_) | Error::Format(_) => Failure::Config(e.to_string()),
            Error::Unstable { .. } | Error::Io(_) => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_kind(s: &str) -> Result<OptionKind, String> {
    serde_json::from_value(json!(s)).map_err(|_| {
        format!("unknown kind {s:?} (expected vanilla-put, vanilla-call, geo-avg-put or arith-avg-put)")
    })
}

fn parse_style(s: &str) -> Result<ExerciseStyle, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown style {s:?} (expected european or american)"))
}

fn parse_mode(s: &str) -> Result<SearchMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_config(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_json(path: &Option<PathBuf>) -> CliResult<serde_json::Map<String, serde_json::Value>> {
    let Some(path) = path else {
        return Ok(Default::default());
    };
    let text = read_config(path)?;
    match serde_json::from_str(&text) {
        Ok(serde_json::Value::Object(map)) => Ok(map),
        Ok(_) => Err(Failure::Config(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(Failure::Config(format!("{}: {e}", path.display()))),
    }
}

fn field<T: serde::Serialize>(map: &mut serde_json::Map<String, serde_json::Value>, name: &str, v: Option<T>) {
    if let Some(v) = v {
        map.insert(name.to_string(), json!(v));
    }
}

fn require(map: &serde_json::Map<String, serde_json::Value>, names: &[&str]) -> CliResult<()> {
    match names.iter().find(|n| !map.contains_key(**n)) {
        Some(n) => Err(Failure::Config(format!("missing required field: {n} (use --{})", n.replace('_', "-")))),
        None => Ok(()),
    }
}

impl ContractArgs {
    fn resolve(&self) -> CliResult<(ProcessParams, ContractSpec)> {
        let mut c = load_json(&self.contract)?;
        field(&mut c, "kind", self.kind);
        field(&mut c, "style", self.style);
        field(&mut c, "strike", self.strike);
        field(&mut c, "expiry", self.expiry);
        field(&mut c, "n_steps", self.n_steps);
        c.entry("n_steps").or_insert(json!(100));
        require(&c, &["kind", "style", "strike", "expiry"])?;

        let mut p = load_json(&self.params)?;
        field(&mut p, "rate", self.rate);
        field(&mut p, "sigma", self.sigma);
        field(&mut p, "s0", self.s0);
        require(&p, &["rate", "sigma", "s0"])?;

        let contract: ContractSpec =
            serde_json::from_value(c.into()).map_err(|e| Failure::Config(format!("contract: {e}")))?;
        contract.validate()?;
        let params: ProcessParams =
            serde_json::from_value(p.into()).map_err(|e| Failure::Config(format!("params: {e}")))?;
        params.validate()?;
        Ok((params, contract))
    }
}

impl PriceArgs {
    fn american(&self) -> AmericanConfig {
        AmericanConfig {
            n_paths: self.paths,
            seed: self.seed,
            mode: self.mode,
            cutoff: !self.no_cutoff,
            flashlight: self.flashlight.then(FlashlightConfig::default),
            bins: self.bins,
            min_bin_paths: DEFAULT_MIN_BIN_PATHS,
            grid_tol: None,
            importance: !self.no_importance,
        }
    }

    fn seed2(&self) -> u64 {
        self.seed2.unwrap_or_else(|| derive_seed(self.seed, 0, 2))
    }

    fn check(&self) -> CliResult<()> {
        if self.paths < 2 {
            return Err(Failure::Config("paths must be at least 2".into()));
        }
        if self.bins == 0 {
            return Err(Failure::Config("bins must be at least 1".into()));
        }
        Ok(())
    }
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn write_boundary(result: &AmericanResult, dir: &Path, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    result
        .boundary
        .write_csv(BufWriter::new(file))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(path)
}

fn cmd_price(args: &PriceArgs) -> CliResult<()> {
    args.check()?;
    let (params, contract) = args.contract.resolve()?;
    let cfg = args.american();
    let sample = generate_sample(&params, &contract, args.paths, args.seed, cfg.importance)?;
    let european = price_european(&sample, &contract.with_style(ExerciseStyle::European))?;
    let mut record = PricingRecord {
        contract,
        params,
        seed: args.seed,
        seed2: None,
        mode: None,
        cutoff: cfg.cutoff,
        flashlight: args.flashlight,
        european: Some(european),
        in_sample: None,
        independent: None,
        averaged: None,
        boundary_file: None,
    };
    if contract.style == ExerciseStyle::American {
        let result = price_american_on(&sample, &contract, cfg)?;
        drop(sample);
        let seed2 = args.seed2();
        let independent =
            reprice_independent(&params, &contract, &result.boundary, args.paths, seed2, cfg.importance)?;
        let path = write_boundary(&result, &args.out_dir, &args.boundary_file)?;
        record.seed2 = Some(seed2);
        record.mode = Some(args.mode);
        record.averaged = Some(price_averaged(&result.estimate, &independent)?);
        record.in_sample = Some(result.estimate);
        record.independent = Some(independent);
        record.boundary_file = Some(path.display().to_string());
    }
    print_json(&record)
}

fn cmd_boundary(args: &PriceArgs) -> CliResult<()> {
    args.check()?;
    let (params, contract) = args.contract.resolve()?;
    if contract.style != ExerciseStyle::American {
        return Err(Failure::Config("style: boundaries exist for american contracts only".into()));
    }
    let cfg = args.american();
    let sample = generate_sample(&params, &contract, args.paths, args.seed, cfg.importance)?;
    let result = price_american_on(&sample, &contract, cfg)?;
    let path = write_boundary(&result, &args.out_dir, &args.boundary_file)?;
    print_json(&json!({
        "boundary_file": path.display().to_string(),
        "rows": result.boundary.slices.len(),
        "in_sample": result.estimate,
    }))
}

fn cmd_oracle(args: &OracleArgs) -> CliResult<()> {
    let (params, contract) = args.contract.resolve()?;
    let steps = args.tree_steps.unwrap_or(contract.n_steps);
    if steps == 0 || args.density == 0 {
        return Err(Failure::Config("tree_steps and density must be positive".into()));
    }
    let tree = TreeConfig {
        n_steps: steps,
        params,
        contract,
    };
    let european = contract.style == ExerciseStyle::European;
    let out = match contract.kind {
        OptionKind::VanillaPut | OptionKind::VanillaCall => {
            let t = crr_price(&tree)?;
            let mut v = json!({ "method": "crr", "tree_steps": steps, "price": t.price });
            if european {
                v["black_scholes"] = json!(black_scholes(contract.kind, &params, contract.strike, contract.expiry)?);
            } else {
                v["boundary"] = json!(t.boundary);
            }
            v
        }
        OptionKind::GeoAvgPut => {
            let mut v = json!({
                "method": "geo-avg-tree",
                "tree_steps": steps,
                "density": args.density,
                "price": geo_avg_tree(&tree, args.density)?,
            });
            if european {
                let grid = TimeGrid::for_contract(&contract)?;
                v["closed_form"] = json!(geo_asian_closed_form(&params, contract.strike, &grid)?);
            }
            v
        }
        OptionKind::ArithAvgPut => {
            return Err(Failure::Config(
                "kind: no lattice reference exists for arithmetic averages".into(),
            ))
        }
    };
    let mut out = out;
    out["contract"] = json!(contract);
    out["params"] = json!(params);
    print_json(&out)
}

fn cmd_study(args: &StudyArgs) -> CliResult<()> {
    let cfg = StudyConfig::from_json(&read_config(&args.config)?)?;
    let outcome = run_error_study(&cfg)?;
    let manifest = write_study(&outcome, &args.out_dir)?;
    print_json(&manifest)
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<SweepConfig>(&read_config(path)?).map_err(Error::from)?,
        None => SweepConfig::demo(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let output = objective_sweep(&cfg)?;
    let files = write_sweep(&output, &args.out_dir)?;
    print_json(&json!({
        "tree_boundary": output.tree_boundary,
        "argmax": output.points.iter().map(|p| json!({
            "n_paths": p.n_paths,
            "curve": p.curve_argmax,
            "exact": p.exact_argmax,
        })).collect::<Vec<_>>(),
        "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
    }))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Price(a) => cmd_price(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Boundary(a) => cmd_boundary(a),
        Command::Study(a) => cmd_study(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
