use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use seqforge_core::classifier::build_adjacency;
use seqforge_core::data::{generate_synthetic, load_dataset, write_dataset, Dataset, FeatureSchema, GeneratorSpec};
use seqforge_core::evaluation::{
    adjacency_entropy, cluster_profiles, export_embeddings, profiles_csv, ClusterProfile, MetricsReport,
    SequenceAssignment,
};
use seqforge_core::numerics::Matrix;
use seqforge_core::training::{load_run, run_pipeline, sweep, SweepGrid, SweepOptions, SweepSummary, TrainingConfig};

use crate::manifest::{digest_file, timestamp, ManifestDraft};
use crate::{
    Cli, CliError, Command, ConfigOverrides, DataArgs, EvaluateArgs, ExportArgs, GenerateArgs, InspectArgs, SweepArgs,
    TrainArgs,
};

/// Seed used when neither a flag nor the config file sets one.
pub const SEED_ENV: &str = "SEQFORGE_SEED";

const DATASET_FILE: &str = "dataset.jsonl";
const SCHEMA_FILE: &str = "schema.json";
const SPEC_FILE: &str = "spec.json";

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(a),
    }
}

/// Defaults, then `SEQFORGE_SEED`, then the config file, then flags.
pub fn resolve_config(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<TrainingConfig, CliError> {
    let mut config = TrainingConfig::default();
    if let Ok(seed) = std::env::var(SEED_ENV) {
        config
            .set("seed", &seed)
            .map_err(|e| CliError::invalid(anyhow::anyhow!("{SEED_ENV}: {e}")))?;
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::Invalid)?;
        config
            .apply_text(&text)
            .map_err(|e| CliError::invalid(anyhow::anyhow!("{}: {e}", path.display())))?;
    }
    for (key, value) in overrides.pairs() {
        config
            .set(key, value)
            .map_err(|e| CliError::invalid(anyhow::anyhow!("--{key}: {e}")))?;
    }
    config.validate()?;
    Ok(config)
}

struct LoadedData {
    dataset: Dataset,
    schema: FeatureSchema,
    files: Vec<PathBuf>,
}

fn load_data(args: &DataArgs) -> Result<LoadedData, CliError> {
    let path = if args.data.is_dir() {
        args.data.join(DATASET_FILE)
    } else {
        args.data.clone()
    };
    if !path.is_file() {
        return Err(CliError::invalid(anyhow::anyhow!("dataset {} does not exist", path.display())));
    }
    let schema_path = match &args.schema {
        Some(p) => p.clone(),
        None => path.parent().unwrap_or(Path::new(".")).join(SCHEMA_FILE),
    };
    if !schema_path.is_file() {
        return Err(CliError::invalid(anyhow::anyhow!(
            "schema {} does not exist (pass --schema)",
            schema_path.display()
        )));
    }
    let schema = FeatureSchema::load(&schema_path)
        .with_context(|| format!("schema {}", schema_path.display()))
        .map_err(CliError::Invalid)?;
    let dataset = load_dataset(&path, &schema)
        .with_context(|| format!("dataset {}", path.display()))
        .map_err(CliError::Invalid)?;
    if dataset.is_empty() {
        return Err(CliError::invalid(anyhow::anyhow!("dataset {} has no players", path.display())));
    }
    Ok(LoadedData {
        dataset,
        schema,
        files: vec![path, schema_path],
    })
}

fn digests(files: &[PathBuf]) -> Result<Vec<crate::FileDigest>, CliError> {
    files
        .iter()
        .map(|p| digest_file(p, p.display().to_string()))
        .collect::<anyhow::Result<_>>()
        .map_err(CliError::Runtime)
}

/// Creates `dir`, refusing one that already has content.
fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))
            .map_err(CliError::Invalid)?;
        if entries.next().is_some() {
            return Err(CliError::invalid(anyhow::anyhow!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::Runtime)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<String, CliError> {
    let started = timestamp();
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading spec {}", args.spec.display()))
        .map_err(CliError::Invalid)?;
    let mut spec: GeneratorSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing spec {}", args.spec.display()))
        .map_err(CliError::Invalid)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let dataset = generate_synthetic(&spec, args.n_per_class)?;
    let schema = spec.schema();
    fresh_dir(&args.out)?;
    let write = || -> anyhow::Result<()> {
        write_dataset(&args.out.join(DATASET_FILE), &dataset, &schema)?;
        std::fs::write(args.out.join(SCHEMA_FILE), serde_json::to_string_pretty(&schema)? + "\n")?;
        let mut echo = serde_json::to_value(&spec)?;
        echo["n_per_class"] = args.n_per_class.into();
        std::fs::write(args.out.join(SPEC_FILE), serde_json::to_string_pretty(&echo)? + "\n")?;
        Ok(())
    };
    let result = write();
    ManifestDraft {
        command: "generate".into(),
        config: None,
        config_hash: None,
        seed: spec.seed,
        inputs: digests(std::slice::from_ref(&args.spec))?,
        started,
    }
    .finish(&args.out, result.as_ref().err().map(|e| format!("{e:#}")))
    .map_err(CliError::Runtime)?;
    result.map_err(CliError::Runtime)?;
    Ok(format!(
        "wrote {} players ({} per class) to {}\n",
        dataset.len(),
        args.n_per_class,
        args.out.join(DATASET_FILE).display()
    ))
}

fn metrics_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>9} {:>9} {:>8}", "class", "recall%", "prec%", "support");
    for (i, c) in report.classes.iter().enumerate() {
        let flag = if report.precision_undefined[i] { "*" } else { "" };
        let _ = writeln!(
            out,
            "{:<16} {:>9.2} {:>8.2}{:1} {:>8}",
            c, report.recall[i], report.precision[i], flag, report.support[i]
        );
    }
    let _ = writeln!(
        out,
        "{:<16} {:>9.2} {:>9.2}",
        "macro", report.macro_recall, report.macro_precision
    );
    out
}

pub fn cmd_train(args: &TrainArgs) -> Result<String, CliError> {
    let started = timestamp();
    let data = load_data(&args.data)?;
    let config = resolve_config(args.config.as_deref(), &args.overrides)?;
    let mut inputs = data.files.clone();
    inputs.extend(args.config.iter().cloned());
    let inputs = digests(&inputs)?;
    fresh_dir(&args.out)?;
    let result = run_pipeline(&data.dataset, &data.schema, &config, Some(&args.out), args.ablation);
    let command = if args.ablation { "train --ablation" } else { "train" };
    ManifestDraft {
        command: command.into(),
        config: Some(config.to_text()),
        config_hash: Some(config.hash()),
        seed: config.seed,
        inputs,
        started,
    }
    .finish(&args.out, result.as_ref().err().map(|e| e.to_string()))
    .map_err(CliError::Runtime)?;
    let result = result?;
    let mut out = format!(
        "{} run ({} variant, seed {}) written to {}\n",
        if args.ablation { "ablation" } else { "collaborative" },
        config.variant.as_str(),
        config.seed,
        args.out.display()
    );
    out += &metrics_table(&result.evaluation.report);
    Ok(out)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    let data = load_data(&args.data)?;
    let config = resolve_config(args.config.as_deref(), &args.overrides)?;
    let grid_text = std::fs::read_to_string(&args.grid)
        .with_context(|| format!("reading grid {}", args.grid.display()))
        .map_err(CliError::Invalid)?;
    let grid = SweepGrid::parse(&grid_text)?;
    for cell in grid.cells() {
        let mut c = config.clone();
        for (k, v) in &cell {
            c.set(k, v)?;
        }
        c.validate()?;
    }
    let mut input_files = data.files.clone();
    input_files.push(args.grid.clone());
    input_files.extend(args.config.iter().cloned());
    let inputs = digests(&input_files)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(CliError::Runtime)?;
    let hook = |dir: &Path, cfg: &TrainingConfig, start: std::time::SystemTime| -> Result<(), String> {
        ManifestDraft {
            command: "sweep".into(),
            config: Some(cfg.to_text()),
            config_hash: Some(cfg.hash()),
            seed: cfg.seed,
            inputs: inputs.clone(),
            started: chrono::DateTime::<chrono::Utc>::from(start)
                .to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
        .finish(dir, None)
        .map(|_| ())
        .map_err(|e| format!("{e:#}"))
    };
    let options = SweepOptions {
        jobs: args.jobs,
        after_run: Some(&hook),
    };
    let summary: SweepSummary = sweep(&data.dataset, &data.schema, &config, &grid, &args.out, options)?;
    let mut out = summary.to_csv();
    if !summary.errors.is_empty() {
        let _ = writeln!(
            out,
            "{} runs failed; see {}",
            summary.errors.len(),
            args.out.join("errors.csv").display()
        );
    }
    Ok(out)
}

fn open_run(run: &Path, data: &DataArgs) -> Result<(LoadedData, seqforge_core::training::LoadedRun), CliError> {
    let loaded = load_data(data)?;
    let final_dir = run.join(seqforge_core::training::FINAL_DIR);
    if !final_dir.join(seqforge_core::training::RUN_RECORD).is_file() {
        return Err(CliError::invalid(anyhow::anyhow!(
            "{} has no final checkpoint",
            run.display()
        )));
    }
    let model = load_run(run, &loaded.dataset).map_err(|e| CliError::invalid(anyhow::anyhow!(e)))?;
    Ok((loaded, model))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String, CliError> {
    let (_, model) = open_run(&args.run, &args.data)?;
    let eval = model.evaluate()?;
    let report = &eval.report;
    let mut out = metrics_table(report);
    let stored = std::fs::read_to_string(args.run.join("metrics.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<MetricsReport>(&t).ok());
    match stored {
        Some(s) if &s == report => out += "matches the metrics stored with the run\n",
        Some(_) => out += "DIFFERS from the metrics stored with the run\n",
        None => out += "no stored metrics to compare against\n",
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .and_then(|_| report.write(dir))
            .with_context(|| format!("writing metrics to {}", dir.display()))
            .map_err(CliError::Runtime)?;
    }
    Ok(out)
}

fn mean_transitions(
    ids: &[Vec<Option<usize>>],
    labels: &[usize],
    classes: usize,
    k: usize,
) -> Result<(Vec<Matrix>, Vec<f64>), CliError> {
    let mut sums = vec![Matrix::zeros(k, k); classes];
    let mut entropy = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (player, &y) in ids.iter().zip(labels) {
        let tm = build_adjacency(player, k).map_err(CliError::runtime)?;
        entropy[y] += adjacency_entropy(&tm);
        counts[y] += 1;
        for (d, &v) in sums[y].as_mut_slice().iter_mut().zip(tm.normalized.as_slice()) {
            *d += v;
        }
    }
    for c in 0..classes {
        if counts[c] > 0 {
            sums[c].as_mut_slice().iter_mut().for_each(|v| *v /= counts[c] as f64);
            entropy[c] /= counts[c] as f64;
        }
    }
    Ok((sums, entropy))
}

fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::from("from");
    for j in 0..m.cols() {
        let _ = write!(out, ",to_{j}");
    }
    out.push('\n');
    for i in 0..m.rows() {
        let _ = write!(out, "{i}");
        for v in m.row(i) {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn profiles_text(profiles: &[ClusterProfile]) -> String {
    let mut out = String::new();
    for p in profiles {
        match (&p.features, p.mean_length) {
            (Some(fs), Some(len)) => {
                let _ = writeln!(out, "cluster {}: {} sequences, mean length {len:.2}", p.cluster, p.count);
                for s in fs {
                    let _ = writeln!(
                        out,
                        "    {:<20} mean {:>10.4}  median {:>10.4}  IQR [{:.4}, {:.4}]",
                        s.name, s.mean, s.median, s.q1, s.q3
                    );
                }
            }
            _ => {
                let _ = writeln!(out, "cluster {}: {} sequences", p.cluster, p.count);
            }
        }
    }
    out
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String, CliError> {
    let (data, model) = open_run(&args.run, &args.data)?;
    let k = model.record.config.k;
    let clustered = model.clustered(false)?;
    let prepared = &model.prepared;
    let mut assignments: Vec<SequenceAssignment> = Vec::new();
    for (p, ids) in clustered.ids.iter().enumerate() {
        for (s, id) in ids.iter().enumerate() {
            if let Some(c) = id {
                assignments.push((prepared.train_players[p], s, *c));
            }
        }
    }
    let profiles = cluster_profiles(&data.dataset, &assignments, k, &prepared.feature_names)
        .map_err(CliError::runtime)?;
    let labels: Vec<usize> = prepared.train.samples.iter().map(|p| p.label).collect();
    let classes = &prepared.labels;
    let (transitions, entropy) = mean_transitions(&clustered.ids, &labels, classes.len(), k)?;

    let out_dir = args.out.clone().unwrap_or_else(|| args.run.join("inspect"));
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(&out_dir)?;
        std::fs::write(out_dir.join("profiles.csv"), profiles_csv(&profiles))?;
        for (c, m) in classes.iter().zip(&transitions) {
            std::fs::write(out_dir.join(format!("transitions_{}.csv", file_stem(c))), matrix_csv(m))?;
        }
        let mut ent = String::from("class,mean_entropy_bits\n");
        for (c, e) in classes.iter().zip(&entropy) {
            ent += &format!("{c},{e:.12}\n");
        }
        std::fs::write(out_dir.join("class_entropy.csv"), ent)
    };
    write()
        .with_context(|| format!("writing {}", out_dir.display()))
        .map_err(CliError::Runtime)?;

    let mut out = format!(
        "{} training players, K = {k}; clusters by population:\n",
        prepared.train.samples.len()
    );
    out += &profiles_text(&profiles);
    for ((c, m), e) in classes.iter().zip(&transitions).zip(&entropy) {
        let _ = writeln!(out, "\nmean transition matrix, class {c} (mean entropy {e:.4} bits):");
        for i in 0..k {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(out, "    {}", row.join(" "));
        }
    }
    Ok(out)
}

pub fn cmd_export_embeddings(args: &ExportArgs) -> Result<String, CliError> {
    let (_, model) = open_run(&args.run, &args.data)?;
    let rows = model.embeddings(args.test)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(CliError::Runtime)?;
    }
    export_embeddings(&rows, &args.out).map_err(CliError::runtime)?;
    Ok(format!("wrote {} rows to {}\n", rows.len(), args.out.display()))
}
