//! Batch command-line interface: `simulate` writes a synthetic dataset with
//! its ground truth, `fit` runs the full pipeline (match -> fit -> partition
//! -> groups -> estimands) on a dataset, and `study` runs replicated
//! simulation studies. Every run writes a manifest sufficient to reproduce
//! its outputs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdbmm::config::{MatchingConfig, RunConfig};
use cdbmm::error::Result;
use cdbmm::estimands::{ate_posterior, form_groups, garr_posterior, gate_posterior, group_profiles};
use cdbmm::gibbs::run_chain;
use cdbmm::io;
use cdbmm::matching::{balance_table, fit_propensity, nearest_neighbor_match};
use cdbmm::model::Dataset;
use cdbmm::partition::{build_psm, point_estimate_partition, PartitionLoss};
use cdbmm::simulate::{
    replicate_study, sensitivity_grid, simulate_scenario, ScenarioSpec, StudyReport,
};

#[derive(Parser)]
#[command(name = "cdbmm", version, about = "Confounder-dependent Bayesian mixture modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from one of the built-in scenarios.
    Simulate(SimulateArgs),
    /// Fit the model to a dataset and write all posterior artifacts.
    Fit(FitArgs),
    /// Run a replicated simulation study (optionally a sensitivity grid).
    Study(StudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario identifier, 1 through 7.
    #[arg(long)]
    scenario: usize,
    /// Sample size.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Data-generating seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (defaults to the configured output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dataset (delimited text with a header row).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chain seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Partition loss: binder or vi.
    #[arg(long)]
    loss: Option<PartitionLoss>,
    /// Enable propensity-score matching before the fit.
    #[arg(long = "match")]
    matching: bool,
    /// Matching caliper in propensity units (implies --match).
    #[arg(long)]
    caliper: Option<f64>,
    /// Worker threads (0 = all available; 1 = reproducibility reference).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct StudyArgs {
    /// Scenario identifier, 1 through 7.
    #[arg(long)]
    scenario: usize,
    /// Number of replicates.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Sample size per replicate.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Data seed stream; replicate r derives its own seed from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Partition loss used for scoring: binder or vi.
    #[arg(long, default_value = "binder")]
    loss: PartitionLoss,
    /// Run the sensitivity grid over these sigma2_beta values instead of a
    /// single study (comma-separated).
    #[arg(long, value_delimiter = ',')]
    sigma2_beta: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all available; 1 = reproducibility reference).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Study(args) => cmd_study(args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn init_workers(workers: usize) {
    if workers > 0 {
        // Ignore failure: the global pool can only be configured once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = RunConfig::default();
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    config.chain.seed = args.seed;
    let spec = ScenarioSpec { id: args.scenario, n: args.n, seed: args.seed, overrides: Default::default() };
    let synth = simulate_scenario(&spec)?;
    let dir = &config.output_dir;
    io::save_dataset(&dir.join("data.tsv"), &synth.data)?;
    io::save_partition(&dir.join("true_groups.txt"), &synth.true_groups)?;
    let mut po = String::from("y0\ty1");
    for i in 0..synth.data.n() {
        po.push_str(&format!(
            "\n{}\t{}",
            io::fmt_sig(synth.y0[i]),
            io::fmt_sig(synth.y1[i])
        ));
    }
    po.push('\n');
    std::fs::write(dir.join("potential_outcomes.tsv"), po)
        .map_err(|e| cdbmm::Error::input(format!("cannot write potential outcomes: {e}")))?;
    let mut truth = String::from("group\tprobability\tgate");
    let probs = synth.truth.group_probabilities();
    for (g, gate) in synth.true_gate.iter().enumerate() {
        truth.push_str(&format!("\n{g}\t{}\t{}", io::fmt_sig(probs[g]), io::fmt_sig(*gate)));
    }
    truth.push_str(&format!("\n# ate = {}\n", io::fmt_sig(synth.true_ate)));
    std::fs::write(dir.join("truth_summary.tsv"), truth)
        .map_err(|e| cdbmm::Error::input(format!("cannot write truth summary: {e}")))?;
    io::save_manifest(
        dir,
        &format!("simulate --scenario {} --n {} --seed {}", args.scenario, args.n, args.seed),
        &config,
    )?;
    eprintln!(
        "simulated scenario {}: n={} ({} groups)",
        args.scenario,
        synth.data.n(),
        synth.true_gate.len()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(input) = args.input {
        config.input = input;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(seed) = args.seed {
        config.chain.seed = seed;
    }
    if let Some(loss) = args.loss {
        config.loss = loss;
    }
    if args.matching || args.caliper.is_some() {
        config.matching =
            MatchingConfig { enabled: true, caliper: args.caliper, ridge: config.matching.ridge };
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.validate()?;
    init_workers(config.workers);
    run_pipeline(&config)
}

/// The full batch pipeline: match -> fit -> partition -> groups -> estimands.
fn run_pipeline(config: &RunConfig) -> Result<()> {
    let dir = &config.output_dir;
    let (full_data, categorical) = io::load_dataset(&config.input, &config.columns)?;
    let n_treated = full_data.t.iter().filter(|&&v| v == 1).count();
    eprintln!(
        "loaded {}: {} rows ({} treated, {} control)",
        config.input.display(),
        full_data.n(),
        n_treated,
        full_data.n() - n_treated
    );

    let data: Dataset<f64> = if config.matching.enabled {
        let fit = fit_propensity(
            &full_data.x,
            full_data.p,
            &full_data.t,
            &full_data.column_names,
            config.matching.ridge,
        )?;
        let result = nearest_neighbor_match(&fit.scores, &full_data.t, config.matching.caliper)?;
        let balance =
            balance_table(&full_data.x, full_data.p, &full_data.t, &full_data.column_names, &result);
        io::save_balance(&dir.join("balance.tsv"), &balance)?;
        io::save_pairs(&dir.join("matched_pairs.tsv"), &result.pairs)?;
        let retained: Vec<usize> =
            (0..full_data.n()).filter(|&i| result.retained[i]).collect();
        io::save_partition(
            &dir.join("retained_rows.txt"),
            &retained,
        )?;
        eprintln!("matched {} pairs; fitting on {} units", result.pairs.len(), retained.len());
        let y = retained.iter().map(|&i| full_data.y[i]).collect();
        let t = retained.iter().map(|&i| full_data.t[i]).collect();
        let mut x = Vec::with_capacity(retained.len() * full_data.p);
        for &i in &retained {
            x.extend_from_slice(full_data.row(i));
        }
        Dataset::new(y, t, x, full_data.p, full_data.column_names.clone())?
    } else {
        full_data
    };

    let draws = run_chain(&data, &config.hyper, &config.chain)?;
    io::save_traces(dir, &draws)?;

    let min_size = config.merge_min_size(data.n());
    let mut partitions = Vec::with_capacity(2);
    for arm in 0..2 {
        let alloc: Vec<Vec<usize>> = draws
            .states
            .iter()
            .map(|s| {
                cdbmm::partition::merge_coincident_clusters(
                    &s.alloc[arm],
                    &s.arms[arm].eta,
                    &s.arms[arm].sigma2,
                    config.merge_kappa,
                    min_size,
                )
            })
            .collect();
        let psm = build_psm(&alloc)?;
        let part = point_estimate_partition(&psm, &alloc, config.loss)?;
        io::save_partition(&dir.join(format!("partition_t{arm}.txt")), &part.canonical())?;
        partitions.push(part);
    }

    let groups = form_groups(&partitions[0], &partitions[1])?;
    io::save_groups(dir, &groups)?;
    let level = config.credible_level;
    let gate = gate_posterior(&draws, &groups, level)?;
    io::save_group_effects(&dir.join("gate_summary.tsv"), &gate)?;
    io::save_effect_draws(&dir.join("gate_draws.tsv"), &gate)?;
    let garr = garr_posterior(&draws, &groups, level);
    match garr {
        Ok(garr) => {
            io::save_group_effects(&dir.join("garr_summary.tsv"), &garr)?;
            io::save_effect_draws(&dir.join("garr_draws.tsv"), &garr)?;
        }
        // A group with all-zero control means has no response ratio; the
        // remaining artifacts are still valid.
        Err(e) => eprintln!("skipping response ratios: {e}"),
    }
    let ate = ate_posterior(&draws, level)?;
    io::save_ate(dir, &ate)?;
    let profiles = group_profiles(&data, &groups, &categorical)?;
    io::save_profiles(&dir.join("group_profiles.tsv"), &profiles, &data.column_names)?;
    io::save_manifest(dir, "fit", config)?;
    eprintln!(
        "fit complete: {} stored draws, {} groups",
        draws.n_draws(),
        groups.n_groups
    );
    Ok(())
}

fn cmd_study(args: StudyArgs) -> Result<()> {
    init_workers(args.workers);
    let mut config = RunConfig::default();
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    config.loss = args.loss;
    let dir = config.output_dir.clone();
    let spec = ScenarioSpec { id: args.scenario, n: args.n, seed: args.seed, overrides: Default::default() };
    let reports: Vec<StudyReport> = if args.sigma2_beta.is_empty() {
        vec![replicate_study(&spec, args.reps, &config.hyper, &config.chain, config.loss)?]
    } else {
        sensitivity_grid(
            &spec,
            &args.sigma2_beta,
            args.reps,
            &config.hyper,
            &config.chain,
            config.loss,
        )?
    };
    let mut table = StudyReport::table_header();
    for r in &reports {
        table.push('\n');
        table.push_str(&r.table_row());
    }
    table.push('\n');
    std::fs::create_dir_all(&dir)
        .map_err(|e| cdbmm::Error::input(format!("cannot create {}: {e}", dir.display())))?;
    std::fs::write(dir.join("study_report.tsv"), &table)
        .map_err(|e| cdbmm::Error::input(format!("cannot write study report: {e}")))?;
    for r in &reports {
        let name = if args.sigma2_beta.is_empty() {
            "replicates.tsv".to_string()
        } else {
            format!("replicates_sigma2_beta_{}.tsv", r.sigma2_beta)
        };
        std::fs::write(dir.join(name), r.replicate_table() + "\n")
            .map_err(|e| cdbmm::Error::input(format!("cannot write replicate table: {e}")))?;
    }
    io::save_manifest(
        &dir,
        &format!(
            "study --scenario {} --reps {} --n {} --seed {}",
            args.scenario, args.reps, args.n, args.seed
        ),
        &config,
    )?;
    print!("{table}");
    Ok(())
}
