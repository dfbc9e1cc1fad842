//! Command-line surface. `main` parses [`Cli`] and hands it to [`run`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::autodiff::ParamVector;
use crate::bench::{extrapolation_curve, fit_power_law, landscape_scan, pauli_budget_sweep, warmed_up_center};
use crate::config::{csv_preamble, ModelKind, OutputDir, RunConfig, OUT_ENV};
use crate::data::{generate, sample_ground_truth, CountTable, Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::model::{HybridModel, ModelFile};
use crate::pauli::build_hamiltonian;
use crate::statevec::parse_bitstring;
use crate::train::{
    curriculum1_stages, curriculum2_stages, initial_params, nll_loss, relative_error, success_rate_harness,
    vanilla_stages, Checkpoint, Schedule, TrainConfig, Trainer, TrialResult,
};

#[derive(Debug, Parser)]
#[command(
    name = "hamlearn",
    version,
    about = "Learn spin-chain Hamiltonians from measurement bitstrings"
)]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Without it a fresh directory is created under
    /// `$HAMLEARN_OUT` (or `runs/`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataInput {
    /// Dataset file; generated from the config when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Ground-truth sidecar for the dataset.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate measurements and write a dataset with its ground truth.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Print the record count without sampling.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train one model; exits 2 when the run completes without success.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataInput,
        /// Ansatz-only baseline.
        #[arg(long)]
        vanilla: bool,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer steps and checkpoint.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Loss and relative error of a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataInput,
        #[arg(long)]
        model: PathBuf,
    },
    /// Vanilla and neural ODE success rates over seeded trials.
    SuccessRate {
        #[command(flatten)]
        common: Common,
    },
    /// Extrapolation infidelity curve and power-law fit.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataInput,
        /// Use a saved model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Success rate against the number of measurement bases.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Loss on a grid around the ground truth.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataInput,
    },
}

/// How a command finished, for the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Done { out: Option<PathBuf> },
    NotConverged { out: PathBuf },
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Done { .. } => 0,
            Outcome::NotConverged { .. } => 2,
        }
    }

    pub fn out_dir(&self) -> Option<&Path> {
        match self {
            Outcome::Done { out } => out.as_deref(),
            Outcome::NotConverged { out } => Some(out),
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    if let Some(jobs) = cli.jobs {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    match cli.command {
        Command::GenData { common, dry_run } => gen_data(&common, dry_run),
        Command::Train {
            common,
            input,
            vanilla,
            resume,
            max_steps,
        } => train(&common, &input, vanilla, resume.as_deref(), max_steps),
        Command::Eval { common, input, model } => eval(&common, &input, &model),
        Command::SuccessRate { common } => success_rate(&common),
        Command::Benchmark { common, input, model } => benchmark(&common, &input, model.as_deref()),
        Command::Sweep { common } => sweep(&common),
        Command::Landscape { common, input } => landscape(&common, &input),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default_resolved(),
    };
    let cfg = match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(command: &str, common: &Common, cfg: &RunConfig) -> Result<OutputDir> {
    if let Some(dir) = &common.out {
        return OutputDir::at(dir);
    }
    let base = cfg
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    OutputDir::fresh(&base, &format!("{command}-{}", cfg.short_hash()?))
}

/// Serializes `value` and, for objects, adds the config hash and seed.
fn stamped_json(value: &impl Serialize, cfg: &RunConfig) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("config_hash".into(), cfg.hash()?.into());
        map.insert("seed".into(), cfg.seed.into());
    }
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn begin(command: &str, common: &Common, cfg: &RunConfig) -> Result<OutputDir> {
    let out = output_dir(command, common, cfg)?;
    out.write("config.toml", cfg.to_toml()?.as_bytes())?;
    log::info!("{command}: writing to {}", out.path().display());
    Ok(out)
}

#[derive(Serialize)]
struct Timing {
    wall_time_secs: f64,
}

/// Wall time goes to its own file so the primary artifacts stay byte-stable.
fn write_timing(out: &OutputDir, cfg: &RunConfig, secs: f64) -> Result<()> {
    out.write("timing.json", &stamped_json(&Timing { wall_time_secs: secs }, cfg)?)?;
    Ok(())
}

struct Inputs {
    dataset: Dataset,
    truth: Option<Vec<f64>>,
}

fn load_inputs(cfg: &RunConfig, input: &DataInput) -> Result<Inputs> {
    let family = cfg.system.family;
    let n = cfg.system.num_sites;
    match &input.data {
        Some(path) => {
            let dataset = Dataset::read_from(std::io::BufReader::new(fs::File::open(path)?))?;
            if dataset.header.family != family || dataset.num_sites() != n {
                return Err(Error::invalid("dataset family or size differs from the config"));
            }
            let truth = match &input.truth {
                Some(p) => {
                    let gt: GroundTruth = serde_json::from_str(&fs::read_to_string(p)?)?;
                    if gt.family != family || gt.num_sites != n || gt.params.len() != family.num_params(n) {
                        return Err(Error::invalid("ground truth does not match the config"));
                    }
                    Some(gt.params)
                }
                None => None,
            };
            Ok(Inputs { dataset, truth })
        }
        None => {
            let truth = sample_ground_truth(family, n, cfg.seed);
            let dataset = generate(&cfg.dataset.spec(family, n, cfg.seed), &truth)?;
            Ok(Inputs {
                dataset,
                truth: Some(truth),
            })
        }
    }
}

fn build_model(cfg: &RunConfig, vanilla: bool) -> Result<HybridModel> {
    let family = cfg.system.family;
    let n = cfg.system.num_sites;
    if vanilla || cfg.model.vanilla {
        HybridModel::vanilla(family, n)
    } else {
        HybridModel::hybrid(family, n, cfg.model.mlp(n))
    }
}

fn gen_data(common: &Common, dry_run: bool) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let family = cfg.system.family;
    let n = cfg.system.num_sites;
    let spec = cfg.dataset.spec(family, n, cfg.seed);
    if dry_run {
        spec.validate()?;
        println!("records: {}", spec.cardinality());
        return Ok(Outcome::Done { out: None });
    }
    let started = std::time::Instant::now();
    let truth = sample_ground_truth(family, n, cfg.seed);
    let mut dataset = generate(&spec, &truth)?;
    dataset.header.config_hash = Some(cfg.hash()?);
    let out = begin("gen-data", common, &cfg)?;
    out.write("dataset.txt", &dataset.to_bytes()?)?;
    let gt = GroundTruth {
        family,
        num_sites: n,
        params: truth,
        seed: Some(cfg.seed),
    };
    out.write("ground_truth.json", &stamped_json(&gt, &cfg)?)?;
    write_timing(&out, &cfg, started.elapsed().as_secs_f64())?;
    println!("records: {}", dataset.len());
    Ok(Outcome::Done {
        out: Some(out.path().to_path_buf()),
    })
}

fn train(
    common: &Common,
    input: &DataInput,
    vanilla: bool,
    resume: Option<&Path>,
    max_steps: Option<usize>,
) -> Result<Outcome> {
    let started = std::time::Instant::now();
    let cfg = load_config(common)?;
    let inputs = load_inputs(&cfg, input)?;
    let table = CountTable::from_dataset(&inputs.dataset)?;

    let mut trainer = match resume {
        Some(path) => {
            let cp = Checkpoint::from_json(&fs::read_to_string(path)?)?;
            if cp.config != cfg.train {
                return Err(Error::invalid(
                    "checkpoint was written with a different training config",
                ));
            }
            Trainer::resume(&cp, &table)?
        }
        None => {
            let model = build_model(&cfg, vanilla)?;
            let params = initial_params(&model, cfg.train.theta_init, cfg.seed)?;
            let (schedule, stages) = if !model.has_network() {
                (Schedule::Vanilla, vanilla_stages(&model, &cfg.train))
            } else {
                match cfg.schedule.curriculum {
                    Schedule::Curriculum1 => (Schedule::Curriculum1, curriculum1_stages(&model, &cfg.train)),
                    Schedule::Curriculum2 => (
                        Schedule::Curriculum2,
                        curriculum2_stages(&model, &cfg.train, cfg.schedule.max_order)?,
                    ),
                    Schedule::Vanilla => (Schedule::Vanilla, vanilla_stages(&model, &cfg.train)),
                }
            };
            Trainer::new(model, params, &table, cfg.train.clone(), schedule, stages)?
        }
    };
    match max_steps {
        Some(k) => trainer.run_steps(k)?,
        None => trainer.run()?,
    }

    let out = begin("train", common, &cfg)?;
    out.write("checkpoint.json", &stamped_json(&trainer.checkpoint()?, &cfg)?)?;
    if !trainer.is_done() {
        println!("stopped after {} steps; checkpoint written", trainer.steps_taken());
        write_timing(&out, &cfg, started.elapsed().as_secs_f64())?;
        return Ok(Outcome::Done {
            out: Some(out.path().to_path_buf()),
        });
    }
    let model_file = ModelFile::capture(trainer.model(), trainer.params())?;
    out.write("model.json", &stamped_json(&model_file, &cfg)?)?;
    let result = trainer.finish(inputs.truth.as_deref())?;
    out.write("result.json", &stamped_json(&result, &cfg)?)?;
    write_timing(&out, &cfg, started.elapsed().as_secs_f64())?;
    report_trial(&result);
    let path = out.path().to_path_buf();
    Ok(if result.success {
        Outcome::Done { out: Some(path) }
    } else {
        Outcome::NotConverged { out: path }
    })
}

fn report_trial(r: &TrialResult) {
    match (r.relative_error, &r.failure) {
        (_, Some(f)) => println!("failed: {f}"),
        (Some(e), None) => println!(
            "relative error {e:.6} ({})",
            if r.success { "success" } else { "not converged" }
        ),
        (None, None) => println!("final loss {:?}", r.final_loss),
    }
}

fn load_model(path: &Path) -> Result<(HybridModel, ParamVector)> {
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let file: ModelFile = serde_json::from_value(value)?;
    file.restore()
}

#[derive(Serialize)]
struct EvalReport {
    loss: f64,
    relative_error: Option<f64>,
    theta: Vec<f64>,
}

fn eval(common: &Common, input: &DataInput, model_path: &Path) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let inputs = load_inputs(&cfg, input)?;
    let table = CountTable::from_dataset(&inputs.dataset)?;
    let (model, params) = load_model(model_path)?;
    let loss = nll_loss(&model, &params, &table, &cfg.train.integrator)?;
    let theta = params.values[..model.num_theta()].to_vec();
    let relative_error = inputs.truth.as_deref().map(|t| relative_error(t, &theta)).transpose()?;
    let out = begin("eval", common, &cfg)?;
    out.write(
        "eval.json",
        &stamped_json(
            &EvalReport {
                loss,
                relative_error,
                theta,
            },
            &cfg,
        )?,
    )?;
    println!("loss {loss:.8}");
    if let Some(e) = relative_error {
        println!("relative error {e:.6}");
    }
    Ok(Outcome::Done {
        out: Some(out.path().to_path_buf()),
    })
}

fn percent(rate: Option<f64>) -> String {
    rate.map(|r| format!("{:.1}", 100.0 * r)).unwrap_or_default()
}

fn success_rate(common: &Common) -> Result<Outcome> {
    let started = std::time::Instant::now();
    let cfg = load_config(common)?;
    let report = success_rate_harness(&cfg.harness())?;
    let out = begin("success-rate", common, &cfg)?;
    let mut csv = csv_preamble("success-rate", &cfg)?;
    csv.push_str("Hamiltonian,N,Vanilla,NeuralODE\n");
    writeln!(
        csv,
        "{},{},{},{}",
        report.family,
        report.num_sites,
        percent(report.vanilla.as_ref().map(|s| s.success_rate)),
        percent(report.node.as_ref().map(|s| s.success_rate)),
    )
    .expect("string write");
    out.write("table1.csv", csv.as_bytes())?;
    out.write("harness.json", &stamped_json(&report, &cfg)?)?;
    write_timing(&out, &cfg, started.elapsed().as_secs_f64())?;
    print!("{}", csv.lines().skip(1).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(Outcome::Done {
        out: Some(out.path().to_path_buf()),
    })
}

fn benchmark(common: &Common, input: &DataInput, model_path: Option<&Path>) -> Result<Outcome> {
    let started = std::time::Instant::now();
    let cfg = load_config(common)?;
    let inputs = load_inputs(&cfg, input)?;
    let truth = inputs
        .truth
        .clone()
        .ok_or_else(|| Error::invalid("benchmark needs the ground truth (--truth)"))?;
    let family = cfg.system.family;
    let n = cfg.system.num_sites;
    let (model, params) = match model_path {
        Some(p) => load_model(p)?,
        None => {
            let table = CountTable::from_dataset(&inputs.dataset)?;
            let model = build_model(&cfg, false)?;
            let init = initial_params(&model, cfg.train.theta_init, cfg.seed)?;
            let stages = if model.has_network() {
                curriculum1_stages(&model, &cfg.train)
            } else {
                vanilla_stages(&model, &cfg.train)
            };
            let mut trainer = Trainer::new(model, init, &table, cfg.train.clone(), Schedule::Curriculum1, stages)?;
            trainer.run()?;
            trainer.into_params()
        }
    };
    let h = build_hamiltonian(family, n, &truth)?;
    let training_states: Vec<u64> = inputs
        .dataset
        .header
        .states
        .iter()
        .map(|s| parse_bitstring(s))
        .collect::<Result<_>>()?;
    let curve = extrapolation_curve(&model, &params, &h, &training_states, &cfg.benchmark.curve)?;
    let exact = HybridModel::vanilla(family, n)?;
    let exact_params = ParamVector::new(truth.clone(), exact.layout().clone())?;
    let baseline = extrapolation_curve(&exact, &exact_params, &h, &training_states, &cfg.benchmark.curve)?;
    let window = (cfg.benchmark.fit_window[0], cfg.benchmark.fit_window[1]);
    let fit = fit_power_law(&curve.points, window)?;

    let out = begin("benchmark", common, &cfg)?;
    let mut csv = csv_preamble("benchmark", &cfg)?;
    csv.push_str("t,infidelity,integrator_baseline\n");
    for (p, b) in curve.points.iter().zip(&baseline.points) {
        writeln!(csv, "{},{},{}", p.t, p.infidelity, b.infidelity).expect("string write");
    }
    out.write("curve.csv", csv.as_bytes())?;
    out.write("fit.json", &stamped_json(&fit, &cfg)?)?;
    out.write(
        "model.json",
        &stamped_json(&ModelFile::capture(&model, &params)?, &cfg)?,
    )?;
    write_timing(&out, &cfg, started.elapsed().as_secs_f64())?;
    println!(
        "A = {:.4e} ± {:.2e}, b = {:.4} ± {:.2e}",
        fit.a, fit.stderr_a, fit.b, fit.stderr_b
    );
    Ok(Outcome::Done {
        out: Some(out.path().to_path_buf()),
    })
}

fn sweep(common: &Common) -> Result<Outcome> {
    let started = std::time::Instant::now();
    let cfg = load_config(common)?;
    let report = pauli_budget_sweep(&cfg.harness(), &cfg.sweep.k_values)?;
    let out = begin("sweep", common, &cfg)?;
    let mut csv = csv_preamble("sweep", &cfg)?;
    csv.push_str("K,records,success_rate,median_error\n");
    for row in &report.rows {
        writeln!(
            csv,
            "{},{},{},{}",
            row.num_bases,
            row.num_records,
            row.summary.success_rate,
            row.summary.median_error.map(|e| e.to_string()).unwrap_or_default()
        )
        .expect("string write");
    }
    out.write("sweep.csv", csv.as_bytes())?;
    out.write("sweep.json", &stamped_json(&report, &cfg)?)?;
    write_timing(&out, &cfg, started.elapsed().as_secs_f64())?;
    if let Some(k) = report.threshold_bases {
        println!("smallest K with success >= 50%: {k}");
    }
    Ok(Outcome::Done {
        out: Some(out.path().to_path_buf()),
    })
}

fn landscape(common: &Common, input: &DataInput) -> Result<Outcome> {
    let started = std::time::Instant::now();
    let cfg = load_config(common)?;
    let inputs = load_inputs(&cfg, input)?;
    let truth = inputs
        .truth
        .clone()
        .ok_or_else(|| Error::invalid("landscape needs the ground truth (--truth)"))?;
    let table = CountTable::from_dataset(&inputs.dataset)?;
    let (model, center) = match cfg.landscape.model_kind {
        ModelKind::Vanilla => {
            let model = HybridModel::vanilla(cfg.system.family, cfg.system.num_sites)?;
            let center = ParamVector::new(truth.clone(), model.layout().clone())?;
            (model, center)
        }
        ModelKind::Hybrid => {
            let model = build_model(&cfg, false)?;
            let train: TrainConfig = cfg.train.clone();
            let center = warmed_up_center(&model, &truth, &table, &train)?;
            (model, center)
        }
    };
    let scan = landscape_scan(&model, &center, &table, &cfg.landscape.grid)?;

    let out = begin("landscape", common, &cfg)?;
    let mut csv = csv_preamble("landscape", &cfg)?;
    let res = scan.resolution();
    if scan.directions.len() == 1 {
        csv.push_str("i,alpha,loss\n");
        for (i, (a, v)) in scan.offsets.iter().zip(&scan.values).enumerate() {
            writeln!(csv, "{i},{a},{v}").expect("string write");
        }
    } else {
        csv.push_str("i,j,alpha,beta,loss\n");
        for i in 0..res {
            for j in 0..res {
                writeln!(
                    csv,
                    "{i},{j},{},{},{}",
                    scan.offsets[i],
                    scan.offsets[j],
                    scan.value(i, j)
                )
                .expect("string write");
            }
        }
    }
    out.write("landscape.csv", csv.as_bytes())?;
    out.write("landscape.json", &stamped_json(&scan, &cfg)?)?;
    write_timing(&out, &cfg, started.elapsed().as_secs_f64())?;
    println!(
        "local minima: {} (axis slices {:?})",
        scan.local_minima, scan.axis_slice_minima
    );
    Ok(Outcome::Done {
        out: Some(out.path().to_path_buf()),
    })
}
