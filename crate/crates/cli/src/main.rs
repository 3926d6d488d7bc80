use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ris_chanest::channel::{sample_channel, synthesize_rx, write_realization_csv};
use ris_chanest::estimators::{ls_baseline, nmse, run_algorithm1, Method};
use ris_chanest::harness::{self, SweepSpec};
use ris_chanest::neural::{
    detection_rate, estimate_channels_offgrid, evaluate_residuals, generate_dataset, train_neural_estimator,
    write_dataset_csv, NeuralEstimator, NeuralTrainingConfig, OffgridMode,
};
use ris_chanest::{CMatrix, Error, Scenario};

#[derive(Parser)]
#[command(
    name = "ris-chanest",
    version,
    about = "RIS-assisted uplink channel estimation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Draw path angles off the grid.
    #[arg(long)]
    off_grid: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and dump the channel, pilots and estimates.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Generate datasets and train the occupancy and residual networks.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training examples for the occupancy network.
        #[arg(long)]
        trials: Option<usize>,
        /// Also write the occupancy training set as CSV.
        #[arg(long)]
        dump_dataset: bool,
    },
    /// Run an NMSE-versus-power sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated subset of alg1, ls, nn, alg1-perfect-aoa.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Directory with trained models (for nn).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Also render an SVG plot.
        #[arg(long)]
        plot: bool,
    },
    /// Score trained models on held-out data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: PathBuf,
        /// Held-out examples.
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        /// Transmit power of the held-out set.
        #[arg(long, default_value_t = 20.0)]
        power_dbm: f64,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_spec(common: &Common) -> Result<SweepSpec, Failure> {
    let mut spec = match &common.config {
        Some(path) => harness::load_config(path).map_err(|e| match e {
            Error::Io(io) => Failure::Usage(format!("{}: {io}", path.display())),
            other => other.into(),
        })?,
        None => SweepSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.scenario.seed = seed;
    }
    if common.off_grid {
        spec.scenario.off_grid = true;
    }
    spec.validate()?;
    Ok(spec)
}

fn write_matrix(path: &Path, m: &CMatrix) -> std::io::Result<()> {
    let mut s = String::from("row,col,re,im\n");
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let z = m[(r, c)];
            s.push_str(&format!("{r},{c},{},{}\n", z.re, z.im));
        }
    }
    fs::write(path, s)
}

fn simulate(common: &Common) -> Result<(), Failure> {
    let spec = load_spec(common)?;
    let scenario = Scenario::new(spec.scenario.clone())?;
    fs::create_dir_all(&common.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.scenario.seed);
    let (real, truth) = sample_channel(&scenario, &mut rng)?;
    let y = synthesize_rx(&scenario, &real, &truth, &mut rng)?;

    let mut buf = Vec::new();
    write_realization_csv(&real, &truth, &mut buf)?;
    fs::write(common.out.join("realization.csv"), buf)?;
    write_matrix(&common.out.join("received.csv"), &y)?;
    fs::write(common.out.join("config.txt"), harness::to_config_string(&spec))?;

    let alg1 = run_algorithm1(&y, &scenario.dictionary, &scenario.codebook, &scenario.config)?;
    let (ls_h, ls_phi) = ls_baseline(&y, &scenario.codebook, &scenario.config)?;
    write_matrix(&common.out.join("alg1_h_d.csv"), &alg1.h_d_hat)?;
    write_matrix(&common.out.join("alg1_phi.csv"), &alg1.phi_hat)?;
    write_matrix(&common.out.join("ls_h_d.csv"), &ls_h)?;
    write_matrix(&common.out.join("ls_phi.csv"), &ls_phi)?;

    println!("true support      {:?}", real.support());
    println!("detected support  {:?}", alg1.sorted_support());
    let show = |name: &str, v: ris_chanest::Result<f64>| match v {
        Ok(v) => println!("{name:<18}{v:.3e}"),
        Err(e) => println!("{name:<18}n/a ({e})"),
    };
    show("alg1 direct NMSE", nmse(&alg1.h_d_hat, &truth.h_d));
    show("alg1 ris NMSE", nmse(&alg1.phi_hat, &truth.phi));
    show("ls direct NMSE", nmse(&ls_h, &truth.h_d));
    show("ls ris NMSE", nmse(&ls_phi, &truth.phi));
    if spec.scenario.off_grid {
        let perfect = estimate_channels_offgrid(&y, &scenario, OffgridMode::PerfectAoa(&real))?;
        show("perfect direct", nmse(&perfect.h_d_hat, &truth.h_d));
    }
    Ok(())
}

fn train(common: &Common, trials: Option<usize>, dump_dataset: bool) -> Result<(), Failure> {
    let spec = load_spec(common)?;
    let scenario = Scenario::new(spec.scenario.clone())?;
    let mut cfg = NeuralTrainingConfig::default();
    if let Some(n) = trials {
        if n == 0 {
            return Err(Failure::Usage("--trials must be at least 1".into()));
        }
        cfg.occupancy_samples = n;
    }
    let lo = spec.power_grid_dbm.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = spec.power_grid_dbm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    cfg.power_range_dbm = (lo, hi);
    fs::create_dir_all(&common.out)?;
    if dump_dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.scenario.seed);
        let data = generate_dataset(&scenario, cfg.occupancy_samples, cfg.power_range_dbm, None, &mut rng)?;
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf)?;
        fs::write(common.out.join("dataset.csv"), buf)?;
    }
    info!("training on {} occupancy examples", cfg.occupancy_samples);
    let est = train_neural_estimator(&scenario, &cfg, spec.scenario.seed)?;
    est.save(&common.out)?;
    fs::write(common.out.join("config.txt"), harness::to_config_string(&spec))?;
    println!("models written to {}", common.out.display());
    Ok(())
}

fn sweep(
    common: &Common,
    trials: Option<usize>,
    methods: Option<Vec<String>>,
    models: Option<PathBuf>,
    plot: bool,
) -> Result<(), Failure> {
    let mut spec = load_spec(common)?;
    if let Some(n) = trials {
        if n == 0 {
            return Err(Failure::Usage("--trials must be at least 1".into()));
        }
        spec.trials_per_point = n;
    }
    if let Some(list) = methods {
        spec.methods = list
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if models.is_some() {
        spec.model_dir = models;
    }
    fs::create_dir_all(&common.out)?;
    let result = harness::run_power_sweep(&spec)?;
    harness::emit_csv(&result, &common.out.join("sweep.csv"))?;
    harness::emit_trials_csv(&result, &common.out.join("trials.csv"))?;
    fs::write(common.out.join("config.txt"), harness::to_config_string(&spec))?;
    if plot {
        harness::emit_plot(&result, &common.out.join("sweep.svg"))?;
    }
    for r in &result.rows {
        println!(
            "{:>6} dBm  {:<17}{:<7}{:.3e}",
            harness::format_real(r.power_dbm),
            r.method.name(),
            r.target.name(),
            r.mean_nmse
        );
    }
    if result.support_failures > 0 {
        println!("{} trials with OMP support errors", result.support_failures);
    }
    Ok(())
}

fn eval(common: &Common, models: &Path, trials: usize, power_dbm: f64) -> Result<(), Failure> {
    let mut spec = load_spec(common)?;
    spec.scenario.off_grid = true;
    let scenario = Scenario::new(spec.scenario.clone())?;
    let est = NeuralEstimator::load(models, scenario.config.grid_points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.scenario.seed ^ 0x5eed_e7a1);
    let data = generate_dataset(&scenario, trials, (power_dbm, power_dbm), None, &mut rng)?;
    let rate = detection_rate(&est.occupancy, &data, scenario.config.num_paths)?;
    let (err, base) = evaluate_residuals(&est.residuals, &scenario, &data)?;
    println!("held-out examples     {trials} at {power_dbm} dBm");
    println!("support detection     {:.1}%", 100.0 * rate);
    println!("mean |delta error|    {err:.4e} rad");
    println!("zero-residual mean    {base:.4e} rad");
    println!("ratio                 {:.3}", err / base);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Simulate { common } => simulate(common),
        Command::Train {
            common,
            trials,
            dump_dataset,
        } => train(common, *trials, *dump_dataset),
        Command::Sweep {
            common,
            trials,
            methods,
            models,
            plot,
        } => sweep(common, *trials, methods.clone(), models.clone(), *plot),
        Command::Eval {
            common,
            models,
            trials,
            power_dbm,
        } => eval(common, models, *trials, *power_dbm),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
