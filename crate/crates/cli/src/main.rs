//! Command-line interface: train, predict, cross-validate, run ablations,
//! generate synthetic corpora, and score prediction files.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 missing or unreadable resource.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cefr_core::corpus::write_dataset_csv;
use cefr_core::eval::{
    accuracy, cost_error, render_ablation_table, render_cv_summary, run_ablation, run_cv,
    write_ablation_report, write_cv_report, AblationMode, ConfusionMatrix, CostMatrix,
};
use cefr_core::model_io::{load_model, save_model};
use cefr_core::pipeline::{predict_pipeline, train_model, FamilyToggles, PipelineConfig};
use cefr_core::synth::{gen_synthetic, write_resources, DEFAULT_LEVEL_DISTRIBUTION};
use cefr_core::{load_dataset, Error, Level, Result, NUM_LEVELS};

#[derive(Parser)]
#[command(name = "cefr", version, about = "CEFR essay level prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a labeled dataset and save it.
    Train(TrainArgs),
    /// Predict levels and per-level probabilities with a trained model.
    Predict(PredictArgs),
    /// Stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Feature-family ablation study over cross-validation.
    Ablate(AblateArgs),
    /// Generate a synthetic labeled corpus (and optionally its resources).
    Synth(SynthArgs),
    /// Score a prediction file against gold labels.
    Score(ScoreArgs),
}

/// Configuration source plus command-line overrides. Flags win over the
/// config file; the file wins over built-in defaults.
#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated feature families to enable
    /// (numeric, lm, clusters, topics, pos, bow).
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
    /// Dictionary word list (numeric family).
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Easy-word list (numeric family).
    #[arg(long)]
    easy_words: Option<PathBuf>,
    /// Word-embedding table (clusters family).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// POS lexicon for the baseline tagger (lm/pos families).
    #[arg(long)]
    pos_lexicon: Option<PathBuf>,
    /// Precomputed POS tags, one `essay-id TAG...` line per essay.
    #[arg(long)]
    pos_tags: Option<PathBuf>,
    /// Boosting rounds override.
    #[arg(long)]
    rounds: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(families) = &self.families {
            let mut toggles = FamilyToggles::none();
            for family in families {
                toggles.set(family.trim(), true)?;
            }
            config.families = toggles;
        }
        let paths = [
            (&self.dictionary, &mut config.resources.dictionary),
            (&self.easy_words, &mut config.resources.easy_words),
            (&self.embeddings, &mut config.resources.embeddings),
            (&self.pos_lexicon, &mut config.resources.pos_lexicon),
            (&self.pos_tags, &mut config.resources.pos_tags),
        ];
        for (flag, slot) in paths {
            if let Some(path) = flag {
                *slot = Some(path.clone());
            }
        }
        if let Some(rounds) = self.rounds {
            config.booster.n_rounds = rounds;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled dataset (CSV `id,text,label` or JSON lines).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset to predict (labels optional and ignored).
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with columns id, level, p_A1..p_C2.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    /// Labeled dataset.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of folds.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Cost-matrix file (6 lines of 6 numbers); default is built in.
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Directory for cv_summary.txt and cv_folds.csv.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Labeled dataset.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// `cumulative` or `loo` (leave-one-out).
    #[arg(long, default_value = "cumulative")]
    mode: String,
    /// Number of folds.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Cost-matrix file; default is built in.
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Directory for ablation.txt, ablation.csv, and plot_data.csv.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of essays.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated six-entry level distribution summing to 1;
    /// defaults to the built-in imbalanced shape.
    #[arg(long, value_delimiter = ',')]
    distribution: Option<Vec<f64>>,
    /// Also write the matching dictionary, easy-word list, embeddings, and
    /// POS lexicon into this directory.
    #[arg(long)]
    resources: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Prediction CSV with at least id and level columns.
    #[arg(long)]
    pred: PathBuf,
    /// Gold dataset with labels.
    #[arg(long)]
    gold: PathBuf,
    /// Cost-matrix file; default is built in.
    #[arg(long)]
    cost: Option<PathBuf>,
}

fn load_cost(path: &Option<PathBuf>) -> Result<CostMatrix> {
    match path {
        Some(path) => CostMatrix::load(path),
        None => Ok(CostMatrix::default()),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let (pipeline, model) = train_model(&dataset, &config)?;
    save_model(&args.out, &pipeline, &model)?;
    println!(
        "trained {} rounds on {} essays ({} features) -> {}",
        model.trees.len(),
        dataset.len(),
        pipeline.layout().width(),
        args.out.display()
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let predictions = predict_pipeline(&dataset.essays, &saved.pipeline, &saved.model)?;

    let mut writer =
        csv::Writer::from_path(&args.out).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec!["id".to_string(), "level".to_string()];
    header.extend(Level::ALL.iter().map(|l| format!("p_{l}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(e.to_string()))?;
    for (essay, (level, proba)) in dataset.essays.iter().zip(&predictions) {
        let mut record = vec![essay.id.clone(), level.name().to_string()];
        record.extend(proba.iter().map(|p| format!("{p:.6}")));
        writer
            .write_record(&record)
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    writer.flush()?;
    println!(
        "wrote {} predictions -> {}",
        predictions.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let cost = load_cost(&args.cost)?;
    let report = run_cv(&dataset, &config, args.k, config.seed, &cost)?;
    print!("{}", render_cv_summary(&report));
    if let Some(dir) = &args.report {
        write_cv_report(dir, &report)?;
        println!("report files -> {}", dir.display());
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let cost = load_cost(&args.cost)?;
    let mode: AblationMode = args.mode.parse()?;
    let families: Vec<String> = config
        .families
        .names()
        .into_iter()
        .map(str::to_string)
        .collect();
    let report = run_ablation(&dataset, &config, &families, mode, args.k, config.seed, &cost)?;
    print!("{}", render_ablation_table(&report));
    if let Some(dir) = &args.report {
        write_ablation_report(dir, &report)?;
        println!("report files -> {}", dir.display());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let distribution: [f64; NUM_LEVELS] = match &args.distribution {
        None => DEFAULT_LEVEL_DISTRIBUTION,
        Some(values) => values.as_slice().try_into().map_err(|_| {
            Error::Config(format!(
                "distribution needs exactly {NUM_LEVELS} entries (got {})",
                values.len()
            ))
        })?,
    };
    let dataset = gen_synthetic(&distribution, args.n, args.seed)?;
    write_dataset_csv(&dataset, &args.out)?;
    println!("wrote {} essays -> {}", dataset.len(), args.out.display());
    if let Some(dir) = &args.resources {
        write_resources(dir)?;
        println!("resource files -> {}", dir.display());
    }
    Ok(())
}

/// Read id and level columns from a prediction CSV.
fn read_predictions(path: &PathBuf) -> Result<BTreeMap<String, Level>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Resource {
        kind: "prediction file",
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad prediction header: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col =
        find("id").ok_or_else(|| Error::Data("prediction file missing `id` column".into()))?;
    let level_col = find("level")
        .ok_or_else(|| Error::Data("prediction file missing `level` column".into()))?;

    let mut predictions = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let id = record
            .get(id_col)
            .ok_or_else(|| Error::Data(format!("row {row}: missing id")))?;
        let level = record
            .get(level_col)
            .ok_or_else(|| Error::Data(format!("row {row}: missing level")))?;
        let level: Level = level.parse().map_err(|_| Error::Label {
            row,
            value: level.to_string(),
        })?;
        if predictions.insert(id.to_string(), level).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(predictions)
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let gold = load_dataset(&args.gold)?;
    let predictions = read_predictions(&args.pred)?;
    let cost = load_cost(&args.cost)?;

    let mut confusion = ConfusionMatrix::new();
    for essay in &gold.essays {
        let truth = essay.label.ok_or_else(|| {
            Error::Data(format!("essay {:?} has no gold label", essay.id))
        })?;
        let predicted = predictions.get(&essay.id).ok_or_else(|| {
            Error::Data(format!("no prediction for essay {:?}", essay.id))
        })?;
        confusion.record(truth, *predicted);
    }
    println!(
        "error {:.6}  accuracy {:.6}",
        cost_error(&confusion, &cost)?,
        accuracy(&confusion)?
    );
    print!("{confusion}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Score(args) => cmd_score(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
