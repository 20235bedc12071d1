//! The `tagvat` command line: corpus generation, the sentiment and spam
//! training stages, tagging, evaluation and the visual reports.
//!
//! [`run_args`] runs one invocation in-process and returns its exit code;
//! the `tagvat` binary is a thin wrapper around it.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::adversarial::AdvMethod;
use crate::data::{generate, load_csv, write_csv, Example, LoadReport, Schema};
use crate::interpret::{extract_attention, head_summary, integrated_gradients, word_importance};
use crate::model::argmax;
use crate::pipeline::{
    improve, stage1_tag, train_classifier, write_json, Preprocessing, RunConfig, TextClassifier, TrainRequest,
};
use crate::report::{
    attention_file_name, importance_file_name, render_attention_svg, render_head_grid, render_importance_html,
    HeadSelection, HeatmapView, ImportanceView, NamedGrid, GRID_FILE_NAME,
};
use crate::train::{Metrics, TrainHistory};
use crate::{Error, Result};

#[derive(Parser)]
#[command(name = "tagvat", version, about = "Sentiment-tagged adversarial spam detection pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all commands. Precedence: flag, then environment
/// (`RUN_SEED`, `RUN_DIR`), then the config file, then built-in defaults.
#[derive(Args)]
struct Common {
    /// Run configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts without an explicit path.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Labeled training CSV (`text,label`).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Labeled validation CSV; metrics are reported on it when given.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Output directory for the model.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seeded synthetic sentiment and spam corpora.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the stage-one sentiment classifier.
    TrainSentiment {
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Prefix every text with the sentiment tag predicted by a model.
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the tag distribution JSON.
        #[arg(long)]
        distribution: Option<PathBuf>,
    },
    /// Train the spam classifier.
    TrainSpam {
        #[command(flatten)]
        flags: TrainFlags,
        /// Adversarial method: none, fgm, pgd or vat.
        #[arg(long)]
        adv: Option<AdvMethod>,
        /// Perturbation radius per sequence.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Unlabeled CSV for the smoothness term (vat only).
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        /// Remove leading sentiment tags before training and prediction.
        #[arg(long)]
        no_sentiment_tags: bool,
        /// Classifier head depth: 1 or 2.
        #[arg(long)]
        head_layers: Option<usize>,
    },
    /// Print precision, recall, accuracy and F1.
    Evaluate {
        #[arg(long, required_unless_present = "predictions")]
        model: Option<PathBuf>,
        #[arg(long, required_unless_present = "predictions")]
        test: Option<PathBuf>,
        /// Score a `label,prediction` CSV instead of a model.
        #[arg(long, conflicts_with_all = ["model", "test"])]
        predictions: Option<PathBuf>,
        /// Metrics CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Word-importance pages by integrated gradients.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated ids to explain; all rows when absent.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        /// At most this many rows.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        ig_steps: Option<usize>,
        /// Display names of classes 0 and 1.
        #[arg(long, value_delimiter = ',', default_values_t = ["0".to_string(), "1".to_string()])]
        class_names: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attention heatmaps of one text.
    Attention {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        /// `all` or 1-based `layer-head` pairs such as `3-6,1-2`.
        #[arg(long, default_value = "all")]
        heads: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add URL tags after the sentiment tag.
    Improve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Keep the URL text next to its tag.
        #[arg(long)]
        keep_url_body: bool,
        /// Where to write the URL tag summary JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Side-by-side attention heads of two models on one text.
    Compare {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "all")]
        heads: String,
        #[arg(long, default_value = "left")]
        left_name: String,
        #[arg(long, default_value = "right")]
        right_name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

macro_rules! say {
    ($w:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*).map_err(|e| Error::io("<stdout>", e))?
    };
}

/// Parses `args` (program name first) and runs the command, writing its
/// report lines to `stdout`. Returns the process exit code: 0 on success,
/// 1 for usage errors, otherwise [`Error::exit_code`].
pub fn run_args<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(common.config.as_deref(), |k| std::env::var(k).ok())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.run_dir {
        cfg.run_dir = d.clone();
    }
    let cfg = cfg.seeded()?;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load(path: &Path, schema: &Schema) -> Result<Vec<Example>> {
    let (examples, report) = load_csv(path, schema)?;
    warn_skipped(path, &report);
    Ok(examples)
}

fn warn_skipped(path: &Path, report: &LoadReport) {
    if !report.skipped.is_empty() {
        eprintln!(
            "warning: {}: skipped {} of {} rows (first at line {}: {})",
            path.display(),
            report.skipped.len(),
            report.rows,
            report.skipped[0].line,
            report.skipped[0].reason
        );
    }
}

fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("no {what} CSV: pass --{what} or set paths.{what}")))
}

fn run(cli: Cli, w: &mut dyn Write) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Generate { out } => cmd_generate(w, &cfg, out),
        Command::TrainSentiment { flags } => {
            let opts = SpamOptions::default();
            cmd_train(w, &cfg, &flags, &opts, "sentiment-model", &Schema::sentiment())
        }
        Command::Tag {
            model,
            input,
            output,
            distribution,
        } => cmd_tag(w, &cfg, &model, &input, &output, distribution),
        Command::TrainSpam {
            flags,
            adv,
            epsilon,
            unlabeled,
            no_sentiment_tags,
            head_layers,
        } => {
            let opts = SpamOptions {
                adv,
                epsilon,
                unlabeled,
                no_sentiment_tags,
                head_layers,
            };
            cmd_train(w, &cfg, &flags, &opts, "spam-model", &Schema::labeled())
        }
        Command::Evaluate {
            model,
            test,
            predictions,
            out,
        } => cmd_evaluate(w, &cfg, model, test, predictions, out),
        Command::Explain {
            model,
            input,
            ids,
            limit,
            ig_steps,
            class_names,
            out,
        } => cmd_explain(w, &cfg, &model, &input, &ids, limit, ig_steps, &class_names, out),
        Command::Attention {
            model,
            text,
            heads,
            out,
        } => cmd_attention(w, &cfg, &model, &text, &heads, out),
        Command::Improve {
            input,
            output,
            keep_url_body,
            summary,
        } => cmd_improve(w, &cfg, &input, &output, keep_url_body, summary),
        Command::Compare {
            left,
            right,
            text,
            heads,
            left_name,
            right_name,
            out,
        } => cmd_compare(w, &cfg, (&left, &left_name), (&right, &right_name), &text, &heads, out),
    }
}

fn cmd_generate(w: &mut dyn Write, cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.run_dir.join("data"));
    create_dir(&dir)?;
    let corpus = generate(&cfg.synth)?;
    let files = [
        ("sentiment_train.csv", &corpus.sentiment.train),
        ("sentiment_validation.csv", &corpus.sentiment.validation),
        ("sentiment_test.csv", &corpus.sentiment.test),
        ("spam_train.csv", &corpus.spam.train),
        ("spam_validation.csv", &corpus.spam.validation),
        ("spam_test.csv", &corpus.spam.test),
        ("unlabeled.csv", &corpus.unlabeled),
    ];
    for (name, examples) in files {
        write_csv(&dir.join(name), examples)?;
    }
    let total: usize = files.iter().map(|(_, e)| e.len()).sum();
    say!(w, "wrote {} files with {total} examples to {}", files.len(), dir.display());
    Ok(())
}

#[derive(Default)]
struct SpamOptions {
    adv: Option<AdvMethod>,
    epsilon: Option<f64>,
    unlabeled: Option<PathBuf>,
    no_sentiment_tags: bool,
    head_layers: Option<usize>,
}

fn cmd_train(w: &mut dyn Write, cfg: &RunConfig, flags: &TrainFlags, opts: &SpamOptions, default_out: &str, schema: &Schema) -> Result<()> {
    let train_path = required(&flags.train.clone().or_else(|| cfg.paths.train.clone()), "train")?;
    let val_path = flags.validation.clone().or_else(|| cfg.paths.validation.clone());
    let train = load(&train_path, schema)?;
    let validation = val_path.as_deref().map(|p| load(p, schema)).transpose()?;
    let unlabeled_path = opts.unlabeled.clone().or_else(|| {
        (opts.adv.unwrap_or(cfg.train.adv.method) == AdvMethod::Vat)
            .then(|| cfg.paths.unlabeled.clone())
            .flatten()
    });
    let unlabeled = unlabeled_path
        .as_deref()
        .map(|p| load(p, &Schema::any()))
        .transpose()?
        .unwrap_or_default();

    let mut model = cfg.model.clone();
    if let Some(h) = opts.head_layers {
        model.head_layers = h;
    }
    let mut train_config = cfg.train.clone();
    if let Some(s) = flags.steps {
        train_config.steps = s;
    }
    if let Some(lr) = flags.learning_rate {
        train_config.learning_rate = lr;
    }
    if let Some(b) = flags.batch_size {
        train_config.batch_size = b;
    }
    if let Some(m) = opts.adv {
        train_config.adv.method = m;
    }
    if let Some(e) = opts.epsilon {
        train_config.adv.epsilon = e;
    }
    if !unlabeled.is_empty() && train_config.adv.method != AdvMethod::Vat {
        return Err(Error::Config("--unlabeled needs --adv vat".into()));
    }
    let req = TrainRequest {
        train: &train,
        validation: validation.as_deref(),
        unlabeled: &unlabeled,
        model,
        train_config,
        vocab: cfg.vocab.clone(),
        preprocessing: Preprocessing {
            strip_sentiment_tags: opts.no_sentiment_tags,
        },
    };
    let (clf, history) = train_classifier(&req)?;
    for w in &history.warnings {
        eprintln!("warning: {w}");
    }
    let out = flags
        .out
        .clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .unwrap_or_else(|| cfg.run_dir.join(default_out));
    clf.save(&out)?;
    history.write_csv(&out.join("history.csv"))?;
    let (split, metrics) = final_metrics(&clf, &history, &train, validation.as_deref())?;
    write_text(&out.join("metrics.csv"), &Metrics::table_csv(&[(split, metrics)])?)?;
    say!(w, 
        "{} ({split}, {} steps, {} parameters) -> {}",
        metrics.summary(),
        history.losses.len(),
        clf.model.num_parameters(),
        out.display()
    );
    Ok(())
}

fn final_metrics<'a>(
    clf: &TextClassifier,
    history: &TrainHistory,
    train: &[Example],
    validation: Option<&[Example]>,
) -> Result<(&'a str, Metrics)> {
    let split = if validation.is_some() { "validation" } else { "train" };
    match history.last_metrics() {
        Some(m) => Ok((split, *m)),
        None => Ok((split, clf.evaluate(validation.unwrap_or(train))?)),
    }
}

fn cmd_tag(w: &mut dyn Write, cfg: &RunConfig, model: &Path, input: &Path, output: &Path, distribution: Option<PathBuf>) -> Result<()> {
    let clf = TextClassifier::load(model)?;
    let examples = load(input, &Schema::any())?;
    let (tagged, dist) = stage1_tag(&examples, &clf)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv(output, &tagged)?;
    let dist_path = distribution.unwrap_or_else(|| cfg.run_dir.join("tag_distribution.json"));
    if let Some(parent) = dist_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&dist_path, &dist)?;
    say!(w, 
        "tagged {} examples: {} positive, {} neutral, {} negative -> {}",
        dist.total(),
        dist.counts["positive"],
        dist.counts["neutral"],
        dist.counts["negative"],
        output.display()
    );
    Ok(())
}

/// Reads `label,prediction` rows.
fn read_predictions(path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name:?}", path.display())))
    };
    let (li, pi) = (col("label")?, col("prediction")?);
    let (mut labels, mut preds) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |i: usize| -> Result<usize> {
            cells
                .get(i)
                .and_then(|c| c.parse().ok())
                .filter(|v| *v <= 1)
                .ok_or_else(|| Error::Data(format!("{}: bad row {}: {line:?}", path.display(), n + 2)))
        };
        labels.push(parse(li)?);
        preds.push(parse(pi)?);
    }
    Ok((labels, preds))
}

fn cmd_evaluate(
    w: &mut dyn Write,
    cfg: &RunConfig,
    model: Option<PathBuf>,
    test: Option<PathBuf>,
    predictions: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let metrics = match (predictions, model) {
        (Some(p), _) => {
            let (labels, preds) = read_predictions(&p)?;
            Metrics::from_predictions(&labels, &preds)?
        }
        (None, Some(m)) => {
            let test = required(&test.or_else(|| cfg.paths.test.clone()), "test")?;
            let clf = TextClassifier::load(&m)?;
            clf.evaluate(&load(&test, &Schema::labeled())?)?
        }
        (None, None) => return Err(Error::Config("pass --model and --test, or --predictions".into())),
    };
    let out = out.unwrap_or_else(|| cfg.run_dir.join("metrics.csv"));
    write_text(&out, &Metrics::table_csv(&[("test", metrics)])?)?;
    say!(w, "{}", metrics.summary());
    Ok(())
}

#[derive(Serialize)]
struct ExplainEntry {
    id: String,
    file: String,
    #[serde(flatten)]
    record: crate::interpret::AttributionRecord,
}

#[allow(clippy::too_many_arguments)]
fn cmd_explain(
    w: &mut dyn Write,
    cfg: &RunConfig,
    model: &Path,
    input: &Path,
    ids: &[String],
    limit: Option<usize>,
    ig_steps: Option<usize>,
    class_names: &[String],
    out: Option<PathBuf>,
) -> Result<()> {
    let clf = TextClassifier::load(model)?;
    if class_names.len() != clf.model.config().num_classes {
        return Err(Error::Config(format!(
            "{} class names for {} classes",
            class_names.len(),
            clf.model.config().num_classes
        )));
    }
    let examples = load(input, &Schema::any())?;
    let selected: Vec<&Example> = examples
        .iter()
        .filter(|e| ids.is_empty() || ids.contains(&e.id))
        .take(limit.unwrap_or(usize::MAX))
        .collect();
    if selected.is_empty() {
        return Err(Error::Data("no examples match the requested ids".into()));
    }
    let mut ig = cfg.ig.clone();
    if let Some(s) = ig_steps {
        ig.steps = s;
    }
    let dir = out.unwrap_or_else(|| cfg.run_dir.join("explain"));
    create_dir(&dir)?;
    let mut entries = Vec::new();
    let mut worst_gap: f64 = 0.0;
    for e in selected {
        let seq = clf.encode(&e.text)?;
        let record = integrated_gradients(&clf.model, &seq, &ig)?;
        worst_gap = worst_gap.max(record.relative_gap());
        let predicted = argmax(&record.probabilities);
        let view = ImportanceView {
            id: e.id.clone(),
            tokens: record.tokens.clone(),
            scores: word_importance(&record),
            true_label: e.label.map(|l| class_names[l].clone()),
            predicted_label: class_names[predicted].clone(),
            predicted_probability: record.probabilities[predicted],
            attribution_score: record.total(),
        };
        let file = importance_file_name(&e.id);
        write_text(&dir.join(&file), &render_importance_html(&view)?)?;
        entries.push(ExplainEntry {
            id: e.id.clone(),
            file,
            record,
        });
    }
    write_json(&dir.join("attributions.json"), &entries)?;
    say!(w, 
        "wrote {} importance pages to {} (largest relative completeness gap {:.2e})",
        entries.len(),
        dir.display(),
        worst_gap
    );
    Ok(())
}

fn cmd_attention(w: &mut dyn Write, cfg: &RunConfig, model: &Path, text: &str, heads: &str, out: Option<PathBuf>) -> Result<()> {
    let clf = TextClassifier::load(model)?;
    let selection = HeadSelection::parse(heads)?;
    let grid = extract_attention(&clf.model, &clf.encode(text)?)?;
    let dir = out.unwrap_or_else(|| cfg.run_dir.join("attention"));
    create_dir(&dir)?;
    let chosen: Vec<(usize, usize)> = match &selection {
        HeadSelection::All => (0..grid.layers).flat_map(|l| (0..grid.heads).map(move |h| (l, h))).collect(),
        HeadSelection::Heads(v) => v.clone(),
    };
    for &(l, h) in &chosen {
        if l >= grid.layers || h >= grid.heads {
            return Err(Error::Config(format!(
                "model has {} layers and {} heads, no head {}-{}",
                grid.layers,
                grid.heads,
                l + 1,
                h + 1
            )));
        }
        let svg = render_attention_svg(&HeatmapView::from_grid(&grid, l, h))?;
        write_text(&dir.join(attention_file_name(l, h)), &svg)?;
    }
    let page = render_head_grid(&[NamedGrid { name: "model", grid: &grid }], &selection)?;
    write_text(&dir.join(GRID_FILE_NAME), &page)?;
    write_json(&dir.join("head_stats.json"), &head_summary(&grid))?;
    say!(w, "wrote {} heatmaps for {} tokens to {}", chosen.len(), grid.len(), dir.display());
    Ok(())
}

fn cmd_improve(
    w: &mut dyn Write,
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    keep_url_body: bool,
    summary: Option<PathBuf>,
) -> Result<()> {
    let examples = load(input, &Schema::any())?;
    let (improved, s) = improve(&examples, keep_url_body || cfg.keep_url_body);
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv(output, &improved)?;
    let path = summary.unwrap_or_else(|| cfg.run_dir.join("url_tags.json"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&path, &s)?;
    say!(w, 
        "URL tags: {} short, {} long in {} of {} examples -> {}",
        s.short,
        s.long,
        s.examples_with_urls,
        s.examples,
        output.display()
    );
    Ok(())
}

fn cmd_compare(
    w: &mut dyn Write,
    cfg: &RunConfig,
    left: (&Path, &str),
    right: (&Path, &str),
    text: &str,
    heads: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let selection = HeadSelection::parse(heads)?;
    let l = TextClassifier::load(left.0)?;
    let r = TextClassifier::load(right.0)?;
    let lg = extract_attention(&l.model, &l.encode(text)?)?;
    let rg = extract_attention(&r.model, &r.encode(text)?)?;
    let page = render_head_grid(
        &[
            NamedGrid {
                name: left.1,
                grid: &lg,
            },
            NamedGrid {
                name: right.1,
                grid: &rg,
            },
        ],
        &selection,
    )?;
    let path = out.unwrap_or_else(|| cfg.run_dir.join(GRID_FILE_NAME));
    write_text(&path, &page)?;
    say!(w, "wrote side-by-side heads to {}", path.display());
    Ok(())
}
