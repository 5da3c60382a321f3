use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phasefeat::classify::{compute_metrics, ConfusionMatrix};
use phasefeat::config::PipelineConfig;
use phasefeat::error::Error;
use phasefeat::features::{write_coherency_csv, FeatureSetId};
use phasefeat::ingest::{load_manifest, ClassLabel};
use phasefeat::pipeline::{
    extract_cohort_features, read_feature_table, run_pipeline, write_feature_table,
    write_run_artifacts,
};
use phasefeat::selection::{assemble_set_matrix, significance_filter, sfffs_select_sets};
use phasefeat::synth::generate_cohort;

/// Instantaneous phase/envelope features and three-class KNN evaluation for
/// ROI time series.
#[derive(Parser)]
#[command(name = "phasefeat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled cohort (manifest + ROI CSVs).
    Synth {
        /// Output directory for manifest.csv and subjects/.
        #[arg(long)]
        out: PathBuf,
        /// Config file (flat `key = value` lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset name, overriding the config's synth.preset.
        #[arg(long)]
        preset: Option<String>,
        /// Master seed overriding every stage seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract per-subject feature vectors into a feature table.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for features.csv and its index-map sidecar.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write each subject's full PLV/MSC matrices as N x N CSVs
        /// under <out>/matrices/.
        #[arg(long)]
        matrices: bool,
    },
    /// Run set selection and significance filtering on a feature table.
    Select {
        /// features.csv produced by the `features` subcommand.
        #[arg(long)]
        features: PathBuf,
        /// Output directory for selection.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full pipeline: split, extract, select, classify, report.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for report.json and CSV side files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Pass all six feature sets and every feature through unselected.
        #[arg(long)]
        skip_selection: bool,
    },
    /// Print the performance indicators of a 3x3 confusion-matrix CSV.
    Metrics {
        /// CSV with 3 rows x 3 integer columns, predicted-by-true.
        confusion_csv: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<PipelineConfig, Error> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.apply_master_seed(s);
    }
    Ok(cfg)
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "  undef".into(), |x| format!("{:6.1}%", x * 100.0))
}

fn print_metrics(report: &phasefeat::classify::MetricsReport) {
    println!("class    accuracy precision specificity sensitivity");
    for class in ClassLabel::ALL {
        let m = &report.per_class[class.index()];
        println!(
            "{:<8} {} {} {}  {}",
            class.name(),
            fmt_pct(m.accuracy),
            fmt_pct(m.precision),
            fmt_pct(m.specificity),
            fmt_pct(m.sensitivity)
        );
    }
    let m = &report.macro_avg;
    println!(
        "{:<8} {} {} {}  {}",
        "macro",
        fmt_pct(m.accuracy),
        fmt_pct(m.precision),
        fmt_pct(m.specificity),
        fmt_pct(m.sensitivity)
    );
    println!("raw accuracy {:.1}%", report.raw_accuracy * 100.0);
}

fn parse_confusion_csv(path: &Path) -> Result<ConfusionMatrix, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "confusion csv must have 3 rows, got {}",
            rows.len()
        )));
    }
    let mut counts = [[0u64; 3]; 3];
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "confusion csv row {} must have 3 columns, got {}",
                i + 1,
                cells.len()
            )));
        }
        for (j, cell) in cells.iter().enumerate() {
            counts[i][j] = cell.parse::<u64>().map_err(|_| {
                Error::InvalidInput(format!(
                    "confusion csv row {}, column {}: `{cell}` is not a nonnegative integer",
                    i + 1,
                    j + 1
                ))
            })?;
        }
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { out, config, preset, seed } => {
            let mut cfg = load_config(config.as_ref(), seed)?;
            if let Some(name) = preset {
                cfg.synth.preset = name;
            }
            let synth_cfg = cfg.synth_config()?;
            let cohort = generate_cohort(&synth_cfg, &out)?;
            println!(
                "wrote {} subjects ({} per class, {} regions x {} timepoints) under {}",
                cohort.records.len(),
                synth_cfg.subjects_per_class,
                synth_cfg.regions,
                synth_cfg.timepoints,
                out.display()
            );
        }
        Command::Features { manifest, out, config, seed, matrices } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let mut cohort = load_manifest(&manifest)?;
            if let Some(first) = cohort.records.first() {
                let ts = phasefeat::ingest::load_roi_csv(&first.path, cfg.sampling.dt)?;
                cohort.region_count = Some(ts.n_regions());
            }
            let labels = cohort.labels();
            let features = extract_cohort_features(&cohort, &cfg)?;
            let (table, sidecar) = write_feature_table(&features, &labels, &out)?;
            if matrices {
                let dir = out.join("matrices");
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for f in &features {
                    for (set, suffix) in
                        [(FeatureSetId::Plv, "plv"), (FeatureSetId::Msc, "msc")]
                    {
                        let matrix = f
                            .coherency_matrix(set)
                            .expect("PLV/MSC sets always have a matrix form");
                        let path = dir.join(format!("{}.{suffix}.csv", f.subject_id));
                        write_coherency_csv(&matrix, &path)?;
                    }
                }
            }
            println!(
                "wrote {} x {} feature table to {} (index map {})",
                features.len(),
                features.first().map_or(0, |f| f.vector.len()),
                table.display(),
                sidecar.display()
            );
        }
        Command::Select { features, out, config, seed } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let (all_features, labels) = read_feature_table(&features)?;
            let (train_idx, _) = phasefeat::classify::stratified_split(
                &labels,
                cfg.split.per_class_test,
                cfg.split.seed,
            )?;
            let train: Vec<_> = train_idx.iter().map(|&i| all_features[i].clone()).collect();
            let train_labels: Vec<_> = train_idx.iter().map(|&i| labels[i]).collect();
            let outcome = sfffs_select_sets(&train, &train_labels, &cfg.sfffs_config())?;
            let matrix = assemble_set_matrix(&train, &outcome.selected_sets);
            let filtered = significance_filter(
                matrix.view(),
                &train_labels,
                cfg.selection.alpha,
                cfg.selection.rule,
            )?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let path = out.join("selection.json");
            let body = serde_json::json!({
                "selected_sets": outcome.selected_sets,
                "criterion": outcome.criterion,
                "trace": outcome.trace,
                "pairwise_significant_counts": filtered.pairwise_counts,
                "degenerate_features": filtered.degenerate_features,
                "mask_length": filtered.mask.len(),
                "feature_mask_indices": filtered.kept_indices(),
            });
            fs::write(&path, serde_json::to_string_pretty(&body).expect("serializable"))
                .map_err(|e| Error::io(&path, e))?;
            println!(
                "selected {:?} (criterion {:.3}); kept {}/{} features; wrote {}",
                outcome.selected_sets.iter().map(|s| s.name()).collect::<Vec<_>>(),
                outcome.criterion,
                filtered.kept_indices().len(),
                filtered.mask.len(),
                path.display()
            );
        }
        Command::Run { manifest, out, config, seed, skip_selection } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let artifacts = run_pipeline(&cfg, &manifest, skip_selection)?;
            let paths = write_run_artifacts(&artifacts, &out)?;
            let report = &artifacts.report;
            println!(
                "selected sets: {:?}{}",
                report.selection.selected_sets.iter().map(|s| s.name()).collect::<Vec<_>>(),
                if report.selection.skipped { " (selection skipped)" } else { "" }
            );
            print_metrics(&report.metrics);
            println!("report: {}", paths.report_json.display());
        }
        Command::Metrics { confusion_csv } => {
            let cm = parse_confusion_csv(&confusion_csv)?;
            let report = compute_metrics(&cm)?;
            print_metrics(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with status 0
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
