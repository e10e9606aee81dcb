use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ppmx::conjugate::{predict_conjugate, run_chain_conjugate, ConjClusterParams, RegressionData};
use ppmx::io::benchmark::{appendix_e_sampler, appendix_f_harness, run_appendix_e};
use ppmx::io::data::{read_labels_csv, write_labels_csv};
use ppmx::io::output::{
    read_conjugate_trace, read_recurrent_trace, write_cluster_summary_csv, write_conjugate_trace, write_cpo_csv, write_psm_csv,
    write_recurrent_trace,
};
use ppmx::io::{
    chain_rng, read_covariate_rows, read_recurrent_table, read_regression_table, write_recurrent_csv, write_regression_csv, FlatConfig,
    Manifest, ModelKind, RecurrentNames, RecurrentTable, RegressionTable, RunConfig,
};
use ppmx::recurrent::{predict_new_subject, run_chain_recurrent, NewSubject, RecurrentDataset, RecurrentTrace};
use ppmx::simulate::{simulate_appendix_e, simulate_recurrent_synthetic, RecurrentSimSpec};
use ppmx::similarity::calibrate_lambda;
use ppmx::summaries::{cluster_summaries, estimate_partition_vi, lpml, misclassification_rate, similarity_matrix};
use ppmx::trace::TraceStore;
use ppmx::{Error, Partition, Result, SimilarityConfig, SimilarityFamily};

/// Random partition models with covariates: fitting, prediction and summaries.
#[derive(Parser, Debug)]
#[command(name = "ppmx", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// flat `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the conjugate regression model to a regression CSV
    FitRegression {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit the recurrent-event model
    FitRecurrent {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        subjects: PathBuf,
    },
    /// Posterior predictive summaries for new items, from a finished run
    Predict {
        /// directory of a finished fit
        #[arg(long)]
        run: PathBuf,
        /// new rows in the regression schema (`y` optional)
        #[arg(long)]
        new: Option<PathBuf>,
        /// new subjects (recurrent runs): events and subjects files
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        subjects: Option<PathBuf>,
    },
    /// Similarity matrix, point estimate, LPML and cluster tables of a run
    Summarize {
        #[arg(long)]
        run: PathBuf,
        /// true labels (`item,label`); adds the misclassification rate
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Write a synthetic data set
    Simulate {
        #[arg(value_enum)]
        kind: SimKind,
    },
    /// Run the λ heuristic on a data set's covariates
    CalibrateLambda {
        /// regression CSV, or a subjects file with `--subjects`
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        subjects: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        eps_star: f64,
        #[arg(long, default_value_t = 10)]
        n_mc: usize,
    },
    /// Benchmark protocols
    Benchmark {
        #[arg(value_enum)]
        kind: BenchKind,
        /// source data for appendix-f
        #[arg(long)]
        data: Option<PathBuf>,
        /// number of seeds for appendix-e
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// shorten appendix-e runs (total sweeps, burn-in)
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long)]
        n_burnin: Option<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SimKind {
    AppendixE,
    Recurrent,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BenchKind {
    AppendixE,
    AppendixF,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut flat = match &common.config {
        Some(p) => FlatConfig::from_file(p)?,
        None => FlatConfig::default(),
    };
    flat.apply_env(std::env::vars());
    if let Some(s) = common.seed {
        flat.set("seed", s.to_string())?;
    }
    if let Some(c) = common.chains {
        flat.set("chains", c.to_string())?;
    }
    if let Some(o) = &common.out {
        flat.set("output_dir", o.display().to_string())?;
    }
    RunConfig::from_flat(&flat)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.txt"), cfg.flat().to_text())?;
    Ok(cfg.output_dir.clone())
}

/// Runs `chains` chains on scoped threads, each on its own stream of the
/// seed, and returns the traces in chain order.
fn run_chains<T: Send>(chains: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..chains)
            .map(|c| {
                let f = &f;
                s.spawn(move || f(&mut chain_rng(seed, c)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    })
}

/// Stream reserved for the λ heuristic, distinct from every chain stream.
fn calibration_rng(seed: u64) -> ChaCha8Rng {
    chain_rng(seed, usize::MAX)
}

fn base_manifest(cfg: &RunConfig, sim: &SimilarityConfig) -> Manifest {
    let mut m = Manifest::default();
    m.push("ppmx_version", env!("CARGO_PKG_VERSION"));
    m.push("model", cfg.model);
    m.push("config_hash", cfg.hash());
    m.push("seed", cfg.seed);
    m.push("chains", cfg.chains);
    m.push("similarity.family", sim.family);
    m.push("similarity.lambda_used", sim.lambda);
    m
}

fn absolute(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn fit_regression(common: &Common, data_path: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.model = ModelKind::ConjugateRegression;
    let table = read_regression_table(data_path)?;
    let data = table.to_data(cfg.metric)?;
    let sim = cfg.similarity(&data.covariates, &mut calibration_rng(cfg.seed))?;
    let config = cfg.conjugate_config(data.design.ncols(), sim)?;
    config.validate(&data)?;
    let out = prepare_out(&cfg)?;
    let traces = run_chains(cfg.chains, cfg.seed, |rng| run_chain_conjugate(&data, &config, rng))?;
    let mut manifest = base_manifest(&cfg, &sim);
    manifest.push("data", absolute(data_path));
    manifest.push("n_items", data.n_items());
    for (c, t) in traces.iter().enumerate() {
        write_conjugate_trace(&out, c, t)?;
        manifest.push(&format!("chain{c}.draws"), t.len());
        manifest.push(&format!("chain{c}.u_acceptance"), t.u_acceptance);
    }
    manifest.write(&out.join("manifest.txt"))?;
    println!("wrote {} chain(s) to {}", traces.len(), out.display());
    Ok(())
}

fn fit_recurrent(common: &Common, events: &Path, subjects: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.model = ModelKind::Recurrent;
    let table = read_recurrent_table(events, subjects)?;
    let data = table.to_dataset(cfg.metric)?;
    let sim = cfg.similarity(data.covariates(), &mut calibration_rng(cfg.seed))?;
    let config = cfg.recurrent_config(data.p1(), sim)?;
    config.validate(&data)?;
    let out = prepare_out(&cfg)?;
    let traces = run_chains(cfg.chains, cfg.seed, |rng| run_chain_recurrent(&data, &config, rng))?;
    let mut manifest = base_manifest(&cfg, &sim);
    manifest.push("events", absolute(events));
    manifest.push("subjects", absolute(subjects));
    manifest.push("n_subjects", data.n_subjects());
    for (c, t) in traces.iter().enumerate() {
        write_recurrent_trace(&out, c, t)?;
        manifest.push(&format!("chain{c}.draws"), t.len());
        manifest.push(&format!("chain{c}.u_acceptance"), t.u_acceptance);
    }
    manifest.write(&out.join("manifest.txt"))?;
    println!("wrote {} chain(s) to {}", traces.len(), out.display());
    Ok(())
}

/// A finished run read back from its directory.
struct Run {
    cfg: RunConfig,
    manifest: FlatManifest,
    dir: PathBuf,
}

struct FlatManifest(Vec<(String, String)>);

impl FlatManifest {
    fn get(&self, key: &str) -> Result<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse {
                row: 0,
                column: key.to_string(),
                message: "missing from manifest".into(),
            })
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Parse {
            row: 0,
            column: key.to_string(),
            message: format!("cannot parse `{v}`"),
        })
    }
}

impl Run {
    fn open(dir: &Path) -> Result<Self> {
        let cfg = RunConfig::from_flat(&FlatConfig::from_file(&dir.join("config.txt"))?)?;
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let manifest = FlatManifest(
            text.lines()
                .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
                .collect(),
        );
        Ok(Run {
            cfg,
            manifest,
            dir: dir.to_path_buf(),
        })
    }

    fn model(&self) -> Result<ModelKind> {
        self.manifest.get("model")?.parse()
    }

    fn similarity(&self) -> Result<SimilarityConfig> {
        let family: SimilarityFamily = self.manifest.get("similarity.family")?.parse()?;
        SimilarityConfig::new(family, self.manifest.parsed("similarity.lambda_used")?, self.cfg.alpha)
    }

    fn chains(&self) -> Result<usize> {
        self.manifest.parsed("chains")
    }

    fn regression(&self) -> Result<(RegressionTable, RegressionData, TraceStore<ConjClusterParams>)> {
        let table = read_regression_table(Path::new(self.manifest.get("data")?))?;
        let data = table.to_data(self.cfg.metric)?;
        let mut pooled = TraceStore::default();
        for c in 0..self.chains()? {
            pooled.draws.extend(read_conjugate_trace(&self.dir, c)?.draws);
        }
        Ok((table, data, pooled))
    }

    fn recurrent(&self) -> Result<(RecurrentTable, RecurrentDataset, RecurrentTrace)> {
        let table = read_recurrent_table(Path::new(self.manifest.get("events")?), Path::new(self.manifest.get("subjects")?))?;
        let data = table.to_dataset(self.cfg.metric)?;
        let mut pooled = TraceStore::default();
        for c in 0..self.chains()? {
            pooled.draws.extend(read_recurrent_trace(&self.dir, c)?.draws);
        }
        Ok((table, data, pooled))
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn band(draws: &[f64]) -> [f64; 3] {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    [quantile(&v, 0.05), quantile(&v, 0.5), quantile(&v, 0.95)]
}

fn predict(common: &Common, run_dir: &Path, new: Option<&Path>, events: Option<&Path>, subjects: Option<&Path>) -> Result<()> {
    let run = Run::open(run_dir)?;
    let out = common.out.clone().unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&out)?;
    let mut rng = chain_rng(common.seed.unwrap_or(run.cfg.seed), usize::MAX - 1);
    let sim = run.similarity()?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv")).map_err(Error::from)?;
    match run.model()? {
        ModelKind::ConjugateRegression => {
            let new = new.ok_or_else(|| Error::config("predict", "--new is required for a regression run"))?;
            let (_, data, trace) = run.regression()?;
            let config = run.cfg.conjugate_config(data.design.ncols(), sim)?;
            let rows = read_covariate_rows(new)?;
            let design: Vec<f64> = (0..rows.n_items()).flat_map(|i| rows.design_row(i)).collect();
            let design = DMatrix::from_row_slice(rows.n_items(), data.design.ncols(), &design);
            let cov: Vec<(Vec<f64>, Vec<u8>)> = (0..rows.n_items()).map(|i| (rows.continuous[i].clone(), rows.binary[i].clone())).collect();
            let pred = predict_conjugate(&trace, &data, &config, &design, &cov, &mut rng)?;
            w.write_record(["row", "mean", "q05", "q50", "q95"]).map_err(Error::from)?;
            for (i, m) in pred.mean.iter().enumerate() {
                let [a, b, c] = band(&pred.draws[i]);
                w.write_record([i.to_string(), m.to_string(), a.to_string(), b.to_string(), c.to_string()])
                    .map_err(Error::from)?;
            }
        }
        ModelKind::Recurrent => {
            let (events, subjects) = events
                .zip(subjects)
                .ok_or_else(|| Error::config("predict", "--events and --subjects are required for a recurrent run"))?;
            let (_, data, trace) = run.recurrent()?;
            let config = run.cfg.recurrent_config(data.p1(), sim)?;
            let table = read_recurrent_table(events, subjects)?;
            let new: Vec<NewSubject> = table
                .subjects
                .iter()
                .map(|s| NewSubject {
                    x_fixed: s.x_fixed.clone(),
                    x_time: s.x_time.clone(),
                    covariates: (s.continuous.clone(), s.binary.clone()),
                })
                .collect();
            let pred = predict_new_subject(&trace, &data, &config, &new, &mut rng)?;
            w.write_record(["subject_id", "t", "mean", "q05", "q50", "q95"]).map_err(Error::from)?;
            for (h, s) in table.subjects.iter().enumerate() {
                for (t, m) in pred.mean[h].iter().enumerate() {
                    let draws: Vec<f64> = pred.draws[h].iter().map(|g| g[t]).collect();
                    let [a, b, c] = band(&draws);
                    w.write_record([s.id.clone(), (t + 1).to_string(), m.to_string(), a.to_string(), b.to_string(), c.to_string()])
                        .map_err(Error::from)?;
                }
            }
        }
    }
    w.flush()?;
    println!("wrote {}", out.join("predictions.csv").display());
    Ok(())
}

fn summarize(run_dir: &Path, truth: Option<&Path>) -> Result<()> {
    let run = Run::open(run_dir)?;
    let (partitions, log_lik, x, names) = match run.model()? {
        ModelKind::ConjugateRegression => {
            let (table, data, trace) = run.regression()?;
            (trace.partitions(), trace.log_lik_matrix(), data.covariates, (table.continuous_names, table.binary_names))
        }
        ModelKind::Recurrent => {
            let (table, data, trace) = run.recurrent()?;
            (trace.partitions(), trace.log_lik_matrix(), data.covariates().clone(), (table.continuous_names, table.binary_names))
        }
    };
    if partitions.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let psm = similarity_matrix(&partitions)?;
    let (estimate, loss) = estimate_partition_vi(&partitions, &psm)?;
    let fit = lpml(&log_lik)?;
    write_psm_csv(&run_dir.join("psm.csv"), &psm)?;
    write_labels_csv(&run_dir.join("partition.csv"), estimate.labels())?;
    write_cpo_csv(&run_dir.join("cpo.csv"), &fit)?;
    write_cluster_summary_csv(&run_dir.join("cluster_summary.csv"), &cluster_summaries(&estimate, &x)?, &names.0, &names.1)?;
    let mut m = Manifest::default();
    m.push("draws", partitions.len());
    m.push("estimated_blocks", estimate.n_blocks());
    m.push("expected_vi", loss);
    m.push("lpml", fit.lpml);
    m.push("non_finite_cpo", fit.non_finite.len());
    if let Some(t) = truth {
        let rate = misclassification_rate(&estimate, &Partition::from_labels(&read_labels_csv(t)?))?;
        m.push("misclassification", rate);
        println!("misclassification {rate:.4}");
    }
    m.write(&run_dir.join("summary.txt"))?;
    println!("blocks {}  expected VI {:.4}  LPML {:.3}", estimate.n_blocks(), loss, fit.lpml);
    Ok(())
}

fn simulate(common: &Common, kind: SimKind) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match kind {
        SimKind::AppendixE => {
            let sim = simulate_appendix_e(&mut rng);
            let table = RegressionTable::from_data(&sim.data, vec!["x1".into(), "x2".into()], vec!["x3".into(), "x4".into()])?;
            write_regression_csv(&out.join("data.csv"), &table)?;
            write_labels_csv(&out.join("truth.csv"), sim.truth.labels())?;
        }
        SimKind::Recurrent => {
            let sim = simulate_recurrent_synthetic(&RecurrentSimSpec::default_three_groups(), &mut rng)?;
            let names = RecurrentNames {
                time: vec!["age".into()],
                fixed: vec!["gender".into(), "blood_b".into(), "blood_ab".into(), "blood_o".into()],
                continuous: vec!["age".into(), "bmi".into()],
                binary: vec!["gender".into(), "smoke".into()],
            };
            let table = RecurrentTable::from_dataset(&sim.data, names)?;
            write_recurrent_csv(&out.join("events.csv"), &out.join("subjects.csv"), &table)?;
            write_labels_csv(&out.join("truth.csv"), sim.truth.labels())?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn calibrate(common: &Common, data: Option<&Path>, events: Option<&Path>, subjects: Option<&Path>, eps_star: f64, n_mc: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let x = match (data, events, subjects) {
        (Some(d), None, None) => read_regression_table(d)?.covariates(cfg.metric)?,
        (None, Some(e), Some(s)) => read_recurrent_table(e, s)?.to_dataset(cfg.metric)?.covariates().clone(),
        _ => return Err(Error::config("calibrate-lambda", "give --data, or both --events and --subjects")),
    };
    let cal = calibrate_lambda(&x, eps_star, n_mc, &mut calibration_rng(cfg.seed))?;
    println!("lambda = {}\neps_hat = {}\nrecords = {}", cal.lambda, cal.eps_hat, cal.records);
    Ok(())
}

fn benchmark(common: &Common, kind: BenchKind, data: Option<&Path>, seeds: u64, n_iter: Option<usize>, n_burnin: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    match kind {
        BenchKind::AppendixE => {
            let mut sampler = appendix_e_sampler();
            if let Some(n) = n_iter {
                sampler.n_iter = n;
            }
            if let Some(b) = n_burnin {
                sampler.n_burnin = b;
            }
            sampler.validate()?;
            let mut w = csv::Writer::from_path(out.join("misclassification.csv")).map_err(Error::from)?;
            w.write_record(["seed", "family", "misclassification", "estimated_blocks", "mean_blocks"]).map_err(Error::from)?;
            println!("{:>6} {:>6} {:>10} {:>8}", "seed", "family", "misclass", "blocks");
            for seed in cfg.seed..cfg.seed + seeds {
                for family in [SimilarityFamily::GC, SimilarityFamily::GA, SimilarityFamily::One] {
                    let r = run_appendix_e(seed, family, sampler.clone())?;
                    println!("{:>6} {:>6} {:>10.3} {:>8}", seed, family, r.misclassification, r.estimated_blocks);
                    w.write_record([
                        seed.to_string(),
                        family.to_string(),
                        r.misclassification.to_string(),
                        r.estimated_blocks.to_string(),
                        r.mean_blocks.to_string(),
                    ])
                    .map_err(Error::from)?;
                }
            }
            w.flush()?;
        }
        BenchKind::AppendixF => {
            let data = data.ok_or_else(|| Error::config("benchmark", "--data is required for appendix-f"))?;
            let table = read_regression_table(data)?;
            let cells = appendix_f_harness(&table, &cfg, &mut chain_rng(cfg.seed, 0))?;
            let mut w = csv::Writer::from_path(out.join("cell_rmse.csv")).map_err(Error::from)?;
            let mut header: Vec<String> = table.continuous_names.iter().map(|n| format!("c:{n}")).collect();
            header.extend(table.binary_names.iter().map(|n| format!("b:{n}")));
            header.extend(["reference".to_string(), "rmse".to_string()]);
            w.write_record(&header).map_err(Error::from)?;
            for c in &cells {
                let mut rec: Vec<String> = c.continuous.iter().map(f64::to_string).collect();
                rec.extend(c.binary.iter().map(u8::to_string));
                rec.extend([c.reference.to_string(), c.rmse.to_string()]);
                println!("{}", rec.join(" "));
                w.write_record(&rec).map_err(Error::from)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::FitRegression { data } => fit_regression(common, data),
        Command::FitRecurrent { events, subjects } => fit_recurrent(common, events, subjects),
        Command::Predict { run, new, events, subjects } => predict(common, run, new.as_deref(), events.as_deref(), subjects.as_deref()),
        Command::Summarize { run, truth } => summarize(run, truth.as_deref()),
        Command::Simulate { kind } => simulate(common, *kind),
        Command::CalibrateLambda {
            data,
            subjects,
            events,
            eps_star,
            n_mc,
        } => calibrate(common, data.as_deref(), events.as_deref(), subjects.as_deref(), *eps_star, *n_mc),
        Command::Benchmark {
            kind,
            data,
            seeds,
            n_iter,
            n_burnin,
        } => benchmark(common, *kind, data.as_deref(), *seeds, *n_iter, *n_burnin),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
