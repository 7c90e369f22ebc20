use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::SystemTime;

use crate::data::{Dataset, FeatureSchema};
use crate::evaluation::MetricsReport;

use super::{run_pipeline, TrainError, TrainingConfig};

/// Seeded runs averaged per grid cell.
pub const SWEEP_RUNS_PER_CELL: usize = 5;

/// Ordered `(key, values)` axes; cells are their cartesian product with
/// the first axis varying slowest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepGrid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepGrid {
    /// Parses `key = v1, v2, ...` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("grid line {}: expected 'key = v1, v2'", i + 1)))?;
            let key = TrainingConfig::canonical_key(k.trim()).to_string();
            if !TrainingConfig::KEYS.contains(&key.as_str()) {
                return Err(TrainError::Config(format!("grid line {}: unknown key '{}'", i + 1, k.trim())));
            }
            if axes.iter().any(|(a, _)| *a == key) {
                return Err(TrainError::Config(format!("grid line {}: duplicate key '{key}'", i + 1)));
            }
            let values: Vec<String> = v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
            if values.is_empty() {
                return Err(TrainError::Config(format!("grid line {}: no values for '{key}'", i + 1)));
            }
            axes.push((key, values));
        }
        Ok(Self { axes })
    }

    /// Cells as `(key, value)` assignments; one empty cell for an empty grid.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut cells = vec![Vec::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

/// Aggregated results of one grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    /// `value` for a one-axis grid, `key=value;...` otherwise, `default`
    /// for the empty grid.
    pub label: String,
    pub assignment: Vec<(String, String)>,
    /// Per-class means over the successful runs, in percent.
    pub recall_mean: Vec<f64>,
    pub precision_mean: Vec<f64>,
    pub successful_runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub classes: Vec<String>,
    pub cells: Vec<SweepCell>,
    /// `(cell label, seed, message)` for every failed run.
    pub errors: Vec<(String, u64, String)>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SweepSummary {
    /// `Parameter Value,{class} R mean%,{class} P mean%,...`; cells with no
    /// successful run have empty value fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Parameter Value");
        for c in &self.classes {
            out += &format!(",{} R mean%,{} P mean%", csv_field(c), csv_field(c));
        }
        out.push('\n');
        for cell in &self.cells {
            out += &csv_field(&cell.label);
            for i in 0..self.classes.len() {
                if cell.successful_runs == 0 {
                    out += ",,";
                } else {
                    out += &format!(",{:.2},{:.2}", cell.recall_mean[i], cell.precision_mean[i]);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn errors_csv(&self) -> String {
        let mut out = String::from("cell,seed,error\n");
        for (cell, seed, msg) in &self.errors {
            out += &format!("{},{seed},{}\n", csv_field(cell), csv_field(msg));
        }
        out
    }
}

fn cell_label(assignment: &[(String, String)]) -> String {
    match assignment {
        [] => "default".to_string(),
        [(_, v)] => v.clone(),
        many => many.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
    }
}

fn dir_name(index: usize, assignment: &[(String, String)]) -> String {
    let mut name = format!("cell_{index:03}");
    for (k, v) in assignment {
        let safe: String = v.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
        name += &format!("_{k}-{safe}");
    }
    name
}

struct Job {
    cell: usize,
    seed: u64,
    config: TrainingConfig,
    dir: PathBuf,
}

fn read_report(dir: &Path) -> Option<MetricsReport> {
    let text = std::fs::read_to_string(dir.join("metrics.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// Called after each freshly trained sweep run with its directory, config
/// and start time. An error marks the run as failed.
pub type RunHook<'a> = &'a (dyn Fn(&Path, &TrainingConfig, SystemTime) -> Result<(), String> + Sync);

#[derive(Clone, Copy)]
pub struct SweepOptions<'a> {
    /// Worker threads; at least one is used.
    pub jobs: usize,
    pub after_run: Option<RunHook<'a>>,
}

impl Default for SweepOptions<'_> {
    fn default() -> Self {
        Self { jobs: 1, after_run: None }
    }
}

/// Runs every grid cell for seeds `base.seed .. base.seed + 5`, each in
/// `out_dir/cell_*/seed_*`, on at most `options.jobs` worker threads. Runs
/// whose directory already holds `metrics.json` are reused, not retrained.
/// Per-run failures are collected in the summary. Writes `summary.csv`
/// and `errors.csv` into `out_dir`.
pub fn sweep(
    dataset: &Dataset,
    schema: &FeatureSchema,
    base: &TrainingConfig,
    grid: &SweepGrid,
    out_dir: &Path,
    options: SweepOptions,
) -> Result<SweepSummary, TrainError> {
    let jobs = options.jobs;
    let labels = &schema.labels;
    let cells = grid.cells();
    let mut configs = Vec::with_capacity(cells.len());
    for assignment in &cells {
        let mut c = base.clone();
        for (k, v) in assignment {
            c.set(k, v)?;
        }
        c.validate()?;
        configs.push(c);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut queue = Vec::new();
    for (i, (assignment, config)) in cells.iter().zip(&configs).enumerate() {
        for r in 0..SWEEP_RUNS_PER_CELL as u64 {
            let seed = base.seed.wrapping_add(r);
            let mut config = config.clone();
            config.seed = seed;
            queue.push(Job {
                cell: i,
                seed,
                config,
                dir: out_dir.join(dir_name(i, assignment)).join(format!("seed_{seed}")),
            });
        }
    }
    let total = queue.len();
    let queue = Mutex::new(queue.into_iter().enumerate());
    let results: Mutex<Vec<Option<Result<MetricsReport, String>>>> = Mutex::new(vec![None; total]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, total.max(1)) {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((idx, job)) = next else { break };
                let outcome = match read_report(&job.dir) {
                    Some(report) => Ok(report),
                    None => {
                        log::info!("sweep run {} of {total}: {}", idx + 1, job.dir.display());
                        let start = SystemTime::now();
                        std::fs::create_dir_all(&job.dir)
                            .map_err(TrainError::from)
                            .and_then(|_| run_pipeline(dataset, schema, &job.config, Some(&job.dir), false))
                            .map(|r| r.evaluation.report)
                            .map_err(|e| e.to_string())
                            .and_then(|report| match options.after_run {
                                Some(hook) => hook(&job.dir, &job.config, start).map(|_| report),
                                None => Ok(report),
                            })
                    }
                };
                if let Err(e) = &outcome {
                    log::warn!("sweep cell {} seed {} failed: {e}", job.cell, job.seed);
                }
                results.lock().expect("results lock")[idx] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().expect("results lock");
    let classes = labels.to_vec();
    let c = classes.len();
    let mut summary = SweepSummary {
        classes,
        cells: Vec::new(),
        errors: Vec::new(),
    };
    for (i, assignment) in cells.iter().enumerate() {
        let label = cell_label(assignment);
        let mut recall = vec![0.0; c];
        let mut precision = vec![0.0; c];
        let mut ok = 0;
        for r in 0..SWEEP_RUNS_PER_CELL {
            let seed = base.seed.wrapping_add(r as u64);
            match results[i * SWEEP_RUNS_PER_CELL + r].as_ref().expect("every job ran") {
                Ok(report) => {
                    for j in 0..c {
                        recall[j] += report.recall[j];
                        precision[j] += report.precision[j];
                    }
                    ok += 1;
                }
                Err(msg) => summary.errors.push((label.clone(), seed, msg.clone())),
            }
        }
        if ok > 0 {
            recall.iter_mut().chain(precision.iter_mut()).for_each(|v| *v /= ok as f64);
        }
        summary.cells.push(SweepCell {
            label,
            assignment: assignment.clone(),
            recall_mean: recall,
            precision_mean: precision,
            successful_runs: ok,
        });
    }
    std::fs::write(out_dir.join("summary.csv"), summary.to_csv())?;
    std::fs::write(out_dir.join("errors.csv"), summary.errors_csv())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cells_are_cartesian() {
        let g = SweepGrid::parse("K = 4,5\n# note\nbeta = 0.2, 0.3, 0.4\n").unwrap();
        let cells = g.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], vec![("k".into(), "4".into()), ("beta".into(), "0.2".into())]);
        assert_eq!(cell_label(&cells[5]), "k=5;beta=0.4");
        assert_eq!(SweepGrid::parse("").unwrap().cells(), vec![Vec::new()]);
        assert_eq!(cell_label(&[]), "default");
        assert!(SweepGrid::parse("K = 4\nk = 5").is_err());
        assert!(SweepGrid::parse("bogus = 1").is_err());
    }

    #[test]
    fn summary_header_puts_recall_first() {
        let s = SweepSummary {
            classes: vec!["a".into(), "b".into()],
            cells: vec![SweepCell {
                label: "4".into(),
                assignment: vec![("k".into(), "4".into())],
                recall_mean: vec![50.0, 25.0],
                precision_mean: vec![10.0, 20.0],
                successful_runs: 5,
            }],
            errors: Vec::new(),
        };
        assert_eq!(
            s.to_csv(),
            "Parameter Value,a R mean%,a P mean%,b R mean%,b P mean%\n4,50.00,10.00,25.00,20.00\n"
        );
    }
}
