//! The four verbs. Each writes its artifacts to disk and its human-readable
//! summary to `out`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ricasso_core::data::load_unlabelled_images;
use ricasso_core::eval::{read_score_file, roc_curve, write_score_file, Detector, OODReport, ScoreKind, ScoreSet};
use ricasso_core::train::{
    create_run_dir, evaluate, prepare_data, run_ablation_grid, train, AblationResult, Checkpoint,
    EpochRecord, Evaluation, OodSource, PreparedData, Progress, RunConfig, CONFIG_FILE,
};

use crate::args::{AblateArgs, EvalArgs, ReportArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::figures::{self, BarValue, Figure, RocPoint, HIST_BINS};
use crate::tables::{self, AblationRow, ReportRow};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TXT: &str = "ablation.txt";
pub const ABLATION_JSON: &str = "ablation.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const FIGURES_DIR: &str = "figures";
pub const SCORES_DIR: &str = "scores";

/// Version string recorded with every bundle.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// What `eval`, `ablate` and `report` produce.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    /// Per-source rows followed by the mean row.
    pub reports: Vec<OODReport>,
    pub ablation: Vec<AblationRow>,
    /// Table files written (CSV and text).
    pub tables: Vec<PathBuf>,
    pub figures: Vec<Figure>,
    pub provenance: Provenance,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::output(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

fn say(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::new(crate::error::EXIT_FAILURE, format!("cannot write output: {e}")))
}

fn load_config(path: &Path, seed: Option<u64>, out_dir: Option<&PathBuf>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out_dir {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// One summary line per finished epoch.
pub fn epoch_line(e: &EpochRecord, epochs: usize) -> String {
    format!(
        "epoch {:>3}/{epochs}  lr {:.5}  loss {:.4}  nod {:.4}  cbcl {}  rcl {}  val_acc {}  val_auroc {}\n",
        e.epoch + 1,
        e.lr,
        e.total,
        e.nod,
        opt(e.cbcl),
        opt(e.rcl),
        opt(e.val_acc),
        opt(e.val_auroc)
    )
}

/// Trains and returns the run directory.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<PathBuf> {
    let cfg = load_config(&args.config, args.seed, args.out.as_ref())?;
    let epochs = cfg.optim.epochs;
    let mut echo = |p: Progress<'_>| {
        if let Progress::Epoch(e) = p {
            out.write_all(epoch_line(e, epochs).as_bytes())
                .map_err(|err| ricasso_core::Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: err,
                })?;
        }
        Ok(())
    };
    let record = train(&cfg, &mut echo)?;
    let dir = record.run_dir.expect("train sets the run directory");
    say(out, &format!("run directory: {}\n", dir.display()))?;
    Ok(dir)
}

/// Makes names unique by appending `#2`, `#3`, ... to repeats.
fn unique_names(sources: &mut [OodSource]) {
    let mut seen = HashSet::new();
    for s in sources.iter_mut() {
        let base = s.name().to_string();
        let mut name = base.clone();
        let mut n = 1;
        while !seen.insert(name.clone()) {
            n += 1;
            name = format!("{base}#{n}");
        }
        match s {
            OodSource::Inputs(o) => o.name = name,
            OodSource::Scores { name: slot, .. } => *slot = name,
        }
    }
}

fn resolve_ood(spec: &str, data: &PreparedData) -> CliResult<OodSource> {
    let path = Path::new(spec);
    if path.is_file() {
        let name = path
            .file_stem()
            .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        let scores = read_score_file(path)?;
        return Ok(OodSource::Scores { name, scores });
    }
    if path.is_dir() {
        let name = path
            .file_name()
            .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        let inputs = load_unlabelled_images(path, data.test.shape)?;
        return Ok(OodSource::Inputs(ricasso_core::train::OodInputs { name, inputs }));
    }
    if let Some(o) = data.ood.iter().find(|o| o.name == spec) {
        return Ok(OodSource::Inputs(o.clone()));
    }
    let known: Vec<&str> = data.ood.iter().map(|o| o.name.as_str()).collect();
    Err(CliError::usage(format!(
        "--ood {spec:?}: not a score file, an image directory or a configured OOD set ({})",
        known.join(", ")
    )))
}

fn eval_figures(dir: &Path, eval: &Evaluation, class_names: &[String]) -> CliResult<Vec<Figure>> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    let mut figs = Vec::new();
    for (name, scores) in &eval.ood_scores {
        let set = ScoreSet::new(eval.id_scores.clone(), scores.clone(), eval.mean.score_kind)?;
        let roc: Vec<RocPoint> = roc_curve(&set)?
            .into_iter()
            .map(|(fpr, tpr)| RocPoint { fpr, tpr })
            .collect();
        figs.push(figures::write_roc(dir, name, &roc)?);
        let bins = figures::histogram(&eval.id_scores, scores, HIST_BINS);
        figs.push(figures::write_histogram(dir, name, &bins)?);
    }
    let bars: Vec<BarValue> = eval
        .per_class_acc
        .iter()
        .enumerate()
        .map(|(c, v)| BarValue {
            label: class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}")),
            value: *v,
        })
        .collect();
    figs.push(figures::write_bars(dir, "per-class accuracy", &bars)?);
    Ok(figs)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<ReportBundle> {
    let ck = Checkpoint::load(&args.checkpoint).map_err(|e| CliError::checkpoint(&args.checkpoint, e))?;
    let cfg = &ck.config;
    let data = prepare_data(cfg)?;
    let kind: ScoreKind = args.detector.map_or(cfg.eval.detector, Into::into);
    let detector = Detector {
        kind,
        tau: cfg.eval.tau,
        odin: cfg.eval.odin,
    };
    let mut sources: Vec<OodSource> = if args.ood.is_empty() {
        data.ood.iter().cloned().map(OodSource::Inputs).collect()
    } else {
        args.ood.iter().map(|s| resolve_ood(s, &data)).collect::<CliResult<_>>()?
    };
    if sources.is_empty() {
        return Err(CliError::usage("no OOD sources: pass --ood or configure OOD sets"));
    }
    unique_names(&mut sources);
    let eval = evaluate(&ck, &data.test, &sources, &detector)?;

    let dir = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval-{kind}"))
    });
    fs::create_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
    let mut reports = eval.rows.clone();
    reports.push(eval.mean.clone());
    let flat: Vec<ReportRow> = reports.iter().map(ReportRow::from).collect();
    let csv_path = dir.join(REPORT_CSV);
    tables::write_csv(&csv_path, &flat)?;
    let text = tables::format_reports(&reports);
    let txt_path = dir.join(REPORT_TXT);
    write_text(&txt_path, &text)?;

    let scores = dir.join(SCORES_DIR);
    fs::create_dir_all(&scores).map_err(|e| CliError::output(&scores, e))?;
    write_score_file(&scores.join("id.txt"), &eval.id_scores)?;
    for (name, s) in &eval.ood_scores {
        write_score_file(&scores.join(format!("ood-{}.txt", figures::slug(name))), s)?;
    }
    let figs = if args.no_figures {
        vec![]
    } else {
        eval_figures(&dir.join(FIGURES_DIR), &eval, &ck.class_names)?
    };
    let provenance = Provenance {
        command: "eval".into(),
        config_hash: ck.config_hash.clone(),
        seed: cfg.seed,
        version: VERSION.into(),
    };
    write_json(&dir.join(PROVENANCE_FILE), &provenance)?;
    say(out, &text)?;
    say(out, &format!("report bundle: {}\n", dir.display()))?;
    Ok(ReportBundle {
        dir,
        reports,
        ablation: vec![],
        tables: vec![csv_path, txt_path],
        figures: figs,
        provenance,
    })
}

/// Runs the grid; returns the bundle and the full per-row results.
pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> CliResult<(ReportBundle, Vec<AblationResult>)> {
    let cfg = load_config(&args.config, args.seed, args.out.as_ref())?;
    let grid = cfg.ablation_grid();
    let epochs = cfg.optim.epochs;
    let mut echo = |t: &ricasso_core::train::AblationToggles, p: Progress<'_>| {
        if let Progress::Epoch(e) = p {
            let line = format!("[{}] {}", t.code(), epoch_line(e, epochs));
            out.write_all(line.as_bytes()).map_err(|err| ricasso_core::Error::Io {
                path: PathBuf::from("<stdout>"),
                source: err,
            })?;
        }
        Ok(())
    };
    let results = run_ablation_grid(&cfg, &grid, &mut echo)?;

    let hash = cfg.hash();
    let dir = create_run_dir(&cfg.out_dir.join("ablation"), &hash)?;
    let snapshot = dir.join(CONFIG_FILE);
    write_text(&snapshot, &cfg.to_toml_string()?)?;
    let rows: Vec<AblationRow> = results.iter().map(AblationRow::from).collect();
    let csv_path = dir.join(ABLATION_CSV);
    tables::write_csv(&csv_path, &rows)?;
    let text = tables::format_ablation(&rows);
    let txt_path = dir.join(ABLATION_TXT);
    write_text(&txt_path, &text)?;
    write_json(&dir.join(ABLATION_JSON), &results)?;
    let figs = if args.no_figures {
        vec![]
    } else {
        let fig_dir = dir.join(FIGURES_DIR);
        fs::create_dir_all(&fig_dir).map_err(|e| CliError::output(&fig_dir, e))?;
        let auroc: Vec<BarValue> = results
            .iter()
            .map(|r| BarValue {
                label: r.toggles.code(),
                value: Some(r.auroc),
            })
            .collect();
        vec![figures::write_bars(&fig_dir, "ablation AUROC", &auroc)?]
    };
    let provenance = Provenance {
        command: "ablate".into(),
        config_hash: hash,
        seed: cfg.seed,
        version: VERSION.into(),
    };
    write_json(&dir.join(PROVENANCE_FILE), &provenance)?;
    say(out, &text)?;
    say(out, &format!("report bundle: {}\n", dir.display()))?;
    let bundle = ReportBundle {
        dir,
        reports: vec![],
        ablation: rows,
        tables: vec![csv_path, txt_path],
        figures: figs,
        provenance,
    };
    Ok((bundle, results))
}

/// Rebuilds the text tables and every figure of a bundle from its CSV files.
pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> CliResult<ReportBundle> {
    let dir = &args.out;
    let prov_path = dir.join(PROVENANCE_FILE);
    let prov_text = fs::read_to_string(&prov_path).map_err(|e| CliError::input(&prov_path, e))?;
    let provenance: Provenance = serde_json::from_str(&prov_text).map_err(|e| CliError::input(&prov_path, e))?;
    let mut tables_written = Vec::new();
    let mut reports = Vec::new();
    let mut ablation = Vec::new();
    let report_csv = dir.join(REPORT_CSV);
    if report_csv.is_file() {
        reports = tables::read_reports(&report_csv)?;
        let text = tables::format_reports(&reports);
        write_text(&dir.join(REPORT_TXT), &text)?;
        say(out, &text)?;
        tables_written.extend([report_csv, dir.join(REPORT_TXT)]);
    }
    let ablation_csv = dir.join(ABLATION_CSV);
    if ablation_csv.is_file() {
        ablation = tables::read_csv::<AblationRow>(&ablation_csv)?;
        let text = tables::format_ablation(&ablation);
        write_text(&dir.join(ABLATION_TXT), &text)?;
        say(out, &text)?;
        tables_written.extend([ablation_csv, dir.join(ABLATION_TXT)]);
    }
    let fig_dir = dir.join(FIGURES_DIR);
    let figs = if fig_dir.is_dir() {
        figures::render_dir(&fig_dir)?
    } else {
        vec![]
    };
    say(out, &format!("regenerated {} figure(s) in {}\n", figs.len(), dir.display()))?;
    Ok(ReportBundle {
        dir: dir.clone(),
        reports,
        ablation,
        tables: tables_written,
        figures: figs,
        provenance,
    })
}
