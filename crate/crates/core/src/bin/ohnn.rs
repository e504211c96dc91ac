use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ohnn::anonymizer::{load_model, model_to_json, save_model, SelectionConfig, SelectionPool, Variant};
use ohnn::attack::{
    distinctiveness, fit_calibration, pair_cosine_report, run_scenarios, Anonymizer, AnonymizerKind, Scenario,
    ScenarioReport, Side,
};
use ohnn::config::ExperimentConfig;
use ohnn::losses::LossVariant;
use ohnn::metrics::weighted_average_eer;
use ohnn::pool::{load_pool_any, save_pool, EmbeddingPool, Split};
use ohnn::training::{train, Optimizer};
use ohnn::{Error, Result};

/// Orthogonal Householder speaker-vector anonymization.
#[derive(Parser)]
#[command(name = "ohnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding pool.
    GenData(GenData),
    /// Train an orthogonal Householder anonymizer.
    Train(Train),
    /// Anonymize a pool with a trained model.
    Anonymize(Anonymize),
    /// Similarity matrices, D_diag, G_VD and pair-cosine dumps.
    Evaluate(Evaluate),
    /// Run the attack scenarios and print an EER summary.
    AttackSim(AttackSim),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenData {
    #[command(flatten)]
    common: Common,
    /// Number of speakers C.
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    sigma_within: Option<f64>,
    #[arg(long)]
    sigma_between: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Speakers assigned to the train split; the rest are enroll/trial.
    #[arg(long)]
    train_speakers: Option<usize>,
    /// Enrollment utterances per evaluation speaker.
    #[arg(long)]
    enroll_per_speaker: Option<usize>,
    /// Project vectors onto the unit sphere.
    #[arg(long)]
    normalize: bool,
    /// Output file (`.emb`, or `.csv` for text).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Aam,
    Waam,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Roh,
    Loh,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnonymizerArg {
    OhnnRoh,
    OhnnLoh,
    Selection,
}

#[derive(Args)]
struct TrainFlags {
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also sets the cycle length unless `--cycle-length` is given.
    #[arg(long)]
    iterations: Option<usize>,
    /// Even batch size N (N/2 original-anonymized pairs).
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    cycle_length: Option<usize>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Angular margin on the target class.
    #[arg(long)]
    m1: Option<f64>,
    /// Angular margin on the paired class (w-AAM).
    #[arg(long)]
    m2: Option<f64>,
    /// Logit scale s.
    #[arg(long)]
    scale: Option<f64>,
    /// Weight of the cosine hinge.
    #[arg(long)]
    lambda: Option<f64>,
    /// Hinge threshold on cos(original, anonymized).
    #[arg(long)]
    cos_margin: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Number of Householder layers L.
    #[arg(long)]
    layers: Option<usize>,
    /// Reflections per layer q.
    #[arg(long)]
    reflections: Option<usize>,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    common: Common,
    /// Pool file; the config's synthetic spec is used when absent.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Output directory for the model, report and effective config.
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Trials,
    Enrollment,
    Both,
    All,
}

#[derive(Args)]
struct Anonymize {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    side: SideArg,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Trained model; omit with `--anonymizer selection`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    anonymizer: Option<AnonymizerArg>,
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AttackSim {
    #[command(flatten)]
    common: Common,
    /// Evaluation pool; repeat for subsets aggregated with `--weights`.
    #[arg(long)]
    pool: Vec<PathBuf>,
    /// One weight per pool for the weighted-average row.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    #[arg(long, value_enum)]
    anonymizer: Option<AnonymizerArg>,
    /// Comma-separated subset of unprotected, ignorant, lazy-informed, semi-informed.
    #[arg(long, value_delimiter = ',')]
    scenarios: Vec<String>,
    #[arg(long)]
    user_seed: Option<u64>,
    #[arg(long)]
    attacker_seed: Option<u64>,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_anonymizer(cfg: &mut ExperimentConfig, a: AnonymizerArg) {
    cfg.anonymizer = match a {
        AnonymizerArg::OhnnRoh => AnonymizerKind::OhnnRoh,
        AnonymizerArg::OhnnLoh => AnonymizerKind::OhnnLoh,
        AnonymizerArg::Selection => AnonymizerKind::Selection,
    };
    match cfg.anonymizer {
        AnonymizerKind::OhnnRoh => cfg.stack.variant = Variant::Roh,
        AnonymizerKind::OhnnLoh => cfg.stack.variant = Variant::Loh,
        AnonymizerKind::Selection => {}
    }
}

fn apply_train_flags(cfg: &mut ExperimentConfig, f: &TrainFlags) {
    let t = &mut cfg.train;
    set(&mut t.seed, f.seed);
    set(&mut t.iterations, f.iterations);
    set(&mut t.batch_size, f.batch_size);
    set(&mut t.cycle_length, f.cycle_length.or(f.iterations));
    set(&mut t.lr_min, f.lr_min);
    set(&mut t.lr_max, f.lr_max);
    set(&mut t.loss.m1, f.m1);
    set(&mut t.loss.m2, f.m2);
    set(&mut t.loss.s, f.scale);
    set(&mut t.loss.lambda, f.lambda);
    set(&mut t.loss.cos_margin, f.cos_margin);
    if let Some(l) = f.loss {
        t.loss_variant = match l {
            LossArg::Aam => LossVariant::Aam,
            LossArg::Waam => LossVariant::Waam,
        };
    }
    if let Some(o) = f.optimizer {
        t.optimizer = match o {
            OptimizerArg::Adam => Optimizer::default(),
            OptimizerArg::Sgd => Optimizer::Sgd,
        };
    }
    set(&mut cfg.stack.layers, f.layers);
    set(&mut cfg.stack.reflections_per_layer, f.reflections);
    if let Some(v) = f.variant {
        set_anonymizer(
            cfg,
            match v {
                VariantArg::Roh => AnonymizerArg::OhnnRoh,
                VariantArg::Loh => AnonymizerArg::OhnnLoh,
            },
        );
    }
}

fn write_effective(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("effective_config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn echo_hyperparameters(cfg: &ExperimentConfig) {
    let t = &cfg.train;
    let l = &t.loss;
    println!(
        "loss={} m1={} m2={} s={} lambda={} cos_margin={}",
        t.loss_variant, l.m1, l.m2, l.s, l.lambda, l.cos_margin
    );
    println!(
        "seed={} iterations={} batch_size={} cycle_length={} lr=[{}, {}] optimizer={:?}",
        t.seed, t.iterations, t.batch_size, t.cycle_length, t.lr_min, t.lr_max, t.optimizer
    );
    println!(
        "stack: variant={:?} layers={} reflections_per_layer={} reduction={:?} form={:?}",
        cfg.stack.variant, cfg.stack.layers, cfg.stack.reflections_per_layer, cfg.stack.reduction, cfg.stack.form
    );
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_pool(pool: &EmbeddingPool, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        pool.write_csv(BufWriter::new(File::create(path)?))
    } else {
        save_pool(pool, path)
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let s = &mut cfg.data.synthetic;
    set(&mut s.num_speakers, a.speakers);
    set(&mut s.utterances_per_speaker, a.utterances);
    set(&mut s.dim, a.dim);
    set(&mut s.sigma_within, a.sigma_within);
    set(&mut s.sigma_between, a.sigma_between);
    set(&mut s.seed, a.seed);
    set(&mut s.enroll_per_speaker, a.enroll_per_speaker);
    if let Some(t) = a.train_speakers {
        s.train_speakers = t;
    } else if s.train_speakers > s.num_speakers {
        // keep half the speakers for evaluation when only --speakers is given
        s.train_speakers = s.num_speakers / 2;
    }
    s.normalize |= a.normalize;
    cfg.data.pool = None;
    cfg.validate()?;
    let pool = cfg.data.load_pool()?;
    write_pool(&pool, &a.output)?;
    write_effective(&cfg, &parent_dir(&a.output))?;
    println!("wrote {} ({} records, d={}, sha256 {})", a.output.display(), pool.len(), pool.dim(), pool.fingerprint());
    Ok(())
}

fn cmd_train(a: Train) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if a.pool.is_some() {
        cfg.data.pool = a.pool;
    }
    set(&mut cfg.output_dir, a.out_dir);
    apply_train_flags(&mut cfg, &a.flags);
    if cfg.anonymizer == AnonymizerKind::Selection {
        return Err(Error::InvalidConfig("train needs an OHNN anonymizer, not selection".into()));
    }
    cfg.validate()?;
    echo_hyperparameters(&cfg);
    let pool = cfg.data.load_pool()?;
    let out = train(&pool, &cfg.stack, &cfg.train)?;
    let dir = &cfg.output_dir;
    write_effective(&cfg, dir)?;
    save_model(&out.model, dir.join("model.ohnn"))?;
    fs::write(dir.join("model.json"), model_to_json(&out.model)?)?;
    fs::write(dir.join("train_report.json"), out.report.to_json()? + "\n")?;
    println!(
        "final loss {:.6}, mean pair cosine {:.4}, model sha256 {}",
        out.report.loss_trace.last().copied().unwrap_or(f64::NAN),
        out.report.final_mean_pair_cosine,
        out.report.model_sha256
    );
    Ok(())
}

fn cmd_anonymize(a: Anonymize) -> Result<()> {
    let model = load_model(&a.model)?;
    let pool = load_pool_any(&a.pool)?;
    let splits: &[Split] = match a.side {
        SideArg::Trials => Side::Trials.splits(),
        SideArg::Enrollment => Side::Enrollment.splits(),
        SideArg::Both => Side::Both.splits(),
        SideArg::All => &[Split::Train, Split::Enroll, Split::Trial],
    };
    let anon = ohnn::attack::anonymize_splits(&pool, &Anonymizer::Ohnn(model), splits)?;
    write_pool(&anon, &a.output)?;
    println!("wrote {} ({} records)", a.output.display(), anon.len());
    Ok(())
}

fn selection_anonymizer(cfg: &ExperimentConfig, dim: usize) -> Result<Anonymizer> {
    let ext = cfg.data.load_external(dim)?;
    Ok(Anonymizer::Selection {
        pool: SelectionPool::new(&ext)?,
        cfg: SelectionConfig { seed: cfg.attack.user_seed, ..cfg.selection.clone() },
    })
}

fn cmd_evaluate(a: Evaluate) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if a.pool.is_some() {
        cfg.data.pool = a.pool;
    }
    set(&mut cfg.output_dir, a.out_dir);
    if let Some(k) = a.anonymizer {
        set_anonymizer(&mut cfg, k);
    }
    cfg.validate()?;
    let pool = cfg.data.load_pool()?;
    let anonymizer = match (&a.model, cfg.anonymizer) {
        (Some(m), _) => Anonymizer::Ohnn(load_model(m)?),
        (None, AnonymizerKind::Selection) => selection_anonymizer(&cfg, pool.dim())?,
        (None, _) => return Err(Error::InvalidConfig("evaluate needs --model or --anonymizer selection".into())),
    };
    let calib = fit_calibration(&pool, cfg.attack.calibration)?;
    let report = distinctiveness(&pool, &anonymizer, calib)?;
    let pairs = pair_cosine_report(&pool, &anonymizer)?;
    let dir = &cfg.output_dir;
    write_effective(&cfg, dir)?;
    for m in [&report.m_oo, &report.m_oa, &report.m_aa] {
        m.write_csv(BufWriter::new(File::create(dir.join(format!("m_{}.csv", m.block.as_str())))?))?;
    }
    write_json(&dir.join("matrices.json"), &[&report.m_oo, &report.m_oa, &report.m_aa])?;
    pairs.write_csv(BufWriter::new(File::create(dir.join("pair_cosines.csv"))?))?;
    #[derive(Serialize)]
    struct Summary {
        pool_fingerprint: String,
        calibration: ohnn::metrics::Calibration,
        d_diag_oo: f64,
        d_diag_aa: f64,
        g_vd_db: f64,
        mean_positive_cosine: f64,
        mean_negative_cosine: f64,
    }
    let summary = Summary {
        pool_fingerprint: pool.fingerprint(),
        calibration: calib,
        d_diag_oo: report.d_diag_oo,
        d_diag_aa: report.d_diag_aa,
        g_vd_db: report.g_vd_db,
        mean_positive_cosine: pairs.mean_positive(),
        mean_negative_cosine: pairs.mean_negative(),
    };
    write_json(&dir.join("metrics.json"), &summary)?;
    println!(
        "D_diag(oo) {:.6}  D_diag(aa) {:.6}  G_VD {:.3} dB  mean pair cosine {:.4}",
        summary.d_diag_oo, summary.d_diag_aa, summary.g_vd_db, summary.mean_positive_cosine
    );
    Ok(())
}

fn cmd_attack_sim(a: AttackSim) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    set(&mut cfg.output_dir, a.out_dir);
    if let Some(k) = a.anonymizer {
        set_anonymizer(&mut cfg, k);
    }
    apply_train_flags(&mut cfg, &a.flags);
    set(&mut cfg.attack.user_seed, a.user_seed);
    set(&mut cfg.attack.attacker_seed, a.attacker_seed);
    if !a.scenarios.is_empty() {
        cfg.attack.scenarios = a.scenarios.iter().map(|s| s.parse()).collect::<Result<Vec<Scenario>>>()?;
    }
    if !a.weights.is_empty() {
        cfg.attack.weights = a.weights;
    }
    let pools: Vec<Option<PathBuf>> =
        if a.pool.is_empty() { vec![cfg.data.pool.clone()] } else { a.pool.into_iter().map(Some).collect() };
    if !cfg.attack.weights.is_empty() && cfg.attack.weights.len() != pools.len() {
        return Err(Error::InvalidConfig(format!(
            "attack.weights: {} weights for {} pools",
            cfg.attack.weights.len(),
            pools.len()
        )));
    }
    if pools.len() == 1 {
        cfg.data.pool = pools[0].clone();
    }
    cfg.validate()?;
    if cfg.anonymizer != AnonymizerKind::Selection {
        echo_hyperparameters(&cfg);
    }
    let dir = cfg.output_dir.clone();
    write_effective(&cfg, &dir)?;

    let scenario_cfg = cfg.scenario_config(cfg.attack.scenarios[0]);
    let mut table: Vec<(String, Vec<ScenarioReport>)> = Vec::new();
    for (k, p) in pools.iter().enumerate() {
        let data = ohnn::config::DataConfig { pool: p.clone(), ..cfg.data.clone() };
        let pool = data.load_pool()?;
        let external =
            if cfg.anonymizer == AnonymizerKind::Selection { Some(data.load_external(pool.dim())?) } else { None };
        let name = match p {
            Some(p) => format!("{k}-{}", p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()),
            None => format!("{k}-synthetic"),
        };
        let reports = run_scenarios(&pool, external.as_ref(), &scenario_cfg, &cfg.attack.scenarios)?;
        let sub = dir.join(&name);
        fs::create_dir_all(&sub)?;
        for r in &reports {
            fs::write(sub.join(format!("{}.json", r.scenario.as_str())), r.to_json()? + "\n")?;
            r.write_scores_csv(BufWriter::new(File::create(sub.join(format!("{}_scores.csv", r.scenario.as_str())))?))?;
        }
        table.push((name, reports));
    }

    #[derive(Serialize)]
    struct Row {
        scenario: Scenario,
        eer_percent: Vec<f64>,
        weighted_average_percent: Option<f64>,
    }
    let mut rows = Vec::new();
    print!("{:<16}", "scenario");
    for (name, _) in &table {
        print!(" {:>14}", name);
    }
    if !cfg.attack.weights.is_empty() {
        print!(" {:>14}", "weighted avg");
    }
    println!();
    for (i, &scenario) in cfg.attack.scenarios.iter().enumerate() {
        let eers: Vec<f64> = table.iter().map(|(_, r)| 100.0 * r[i].eer).collect();
        let avg = if cfg.attack.weights.is_empty() {
            None
        } else {
            let pairs: Vec<(f64, f64)> = eers.iter().cloned().zip(cfg.attack.weights.iter().cloned()).collect();
            Some(weighted_average_eer(&pairs)?)
        };
        print!("{:<16}", scenario.as_str());
        for e in &eers {
            print!(" {:>14.2}", e);
        }
        if let Some(a) = avg {
            print!(" {:>14.2}", a);
        }
        println!();
        rows.push(Row { scenario, eer_percent: eers, weighted_average_percent: avg });
    }
    write_json(&dir.join("summary.json"), &rows)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Anonymize(a) => cmd_anonymize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::AttackSim(a) => cmd_attack_sim(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidSpec(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
