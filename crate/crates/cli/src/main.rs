use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;

use trackdiff::classifier::{cross_validate, save_model, train, Dataset, TrainParams};
use trackdiff::diff::{DiffContext, DEFAULT_K};
use trackdiff::entropy::{scan_fields, Thresholds};
use trackdiff::features::RegistryKind;
use trackdiff::fixtures;
use trackdiff::pipeline::{self, *};
use trackdiff::trace::{load_trace, TargetKind};

/// Differential tracker detection over recorded page traces.
#[derive(Parser)]
#[command(name = "trackdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Clone)]
struct DetectArgs {
    /// Job directory with `vanilla/`, `blocked/` and `targets.json`.
    job: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    tracker_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    breakage_threshold: f64,
    /// Directory holding tracking.json, breakage.json and optionally mixed.json.
    #[arg(long, default_value = "models")]
    models: PathBuf,
    /// Write emitted rules here, one per line.
    #[arg(long)]
    emit_rules: Option<PathBuf>,
    /// Write the verdict TSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decide with the tracking detector alone.
    #[arg(long)]
    no_breakage_detector: bool,
    /// Anchor generated rules on the full host instead of the registrable domain.
    #[arg(long)]
    host_scope: bool,
    /// Command run once per missing blocked run. Placeholders: {url} {id}
    /// {target} {pattern} {field} {dir} {run}.
    #[arg(long)]
    capture_cmd: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Breakage,
    Tracking,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Request,
    Field,
}

#[derive(Subcommand)]
enum Cmd {
    /// Request-level verdicts for every request target of a job.
    Detect(DetectArgs),
    /// Field-level verdicts; enumerates field targets when the job has none.
    DetectMixed {
        #[command(flatten)]
        args: DetectArgs,
        #[arg(long, value_parser = parse_big)]
        per_field_threshold: Option<BigUint>,
        #[arg(long, value_parser = parse_big)]
        per_server_threshold: Option<BigUint>,
    },
    /// Flip exception rules into breakage samples.
    Reconstruct {
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        lists: Vec<PathBuf>,
        #[arg(long)]
        jobs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Per-rule outcome table; printed to stderr when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build breakage, tracking and mixed datasets from jobs and lists.
    Datasets {
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        lists: Vec<PathBuf>,
        #[arg(long)]
        jobs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 5_000)]
        popularity_cutoff: u64,
    },
    /// Train one detector from a dataset CSV.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        trees: usize,
        #[arg(long, default_value_t = 6)]
        depth: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        subsample: f64,
        /// Also report stratified k-fold F1.
        #[arg(long)]
        cv: Option<usize>,
    },
    /// Score verdicts against labels.
    Eval {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Also sweep both thresholds over 0.05..0.95.
        #[arg(long)]
        sweep: bool,
    },
    /// Entropy of every query parameter and cookie in a trace.
    EntropyScan {
        trace: PathBuf,
        #[arg(long, value_parser = parse_big)]
        per_field_threshold: Option<BigUint>,
        #[arg(long, value_parser = parse_big)]
        per_server_threshold: Option<BigUint>,
    },
    /// Enumerate candidate targets from a job's vanilla runs.
    Candidates {
        job: PathBuf,
        #[arg(long, value_enum, default_value = "request")]
        mode: Mode,
        /// Merge into the job's targets.json instead of printing.
        #[arg(long)]
        write: bool,
        #[arg(long, value_parser = parse_big)]
        per_field_threshold: Option<BigUint>,
        #[arg(long, value_parser = parse_big)]
        per_server_threshold: Option<BigUint>,
    },
    /// Synthetic jobs for training and checking.
    #[command(subcommand)]
    Fixtures(FixturesCmd),
}

#[derive(Subcommand)]
enum FixturesCmd {
    /// Write the canonical suite and its manifest.
    Suite {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a randomized training corpus and its filter list.
    Corpus {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Detect over a written suite and compare with its manifest.
    Check {
        dir: PathBuf,
        #[arg(long, default_value = "models")]
        models: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
}

fn data<E: Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn parse_big(s: &str) -> Result<BigUint, String> {
    s.parse::<BigUint>().map_err(|e| format!("`{s}`: {e}"))
}

fn thresholds(per_field: Option<BigUint>, per_server: Option<BigUint>) -> Thresholds {
    let mut t = Thresholds::default();
    if let Some(v) = per_field {
        t.per_field = v;
    }
    if let Some(v) = per_server {
        t.per_server = v;
    }
    t
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<(), Failure> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--{name} must be in [0, 1], got {p}")))
    }
}

fn detector(args: &DetectArgs) -> Result<Detector, Failure> {
    check_probability("tracker-threshold", args.tracker_threshold)?;
    check_probability("breakage-threshold", args.breakage_threshold)?;
    if args.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let models = Models::load(&args.models).map_err(data)?;
    Ok(Detector::new(
        models,
        DetectConfig {
            k: args.k,
            tracker_threshold: args.tracker_threshold,
            breakage_threshold: args.breakage_threshold,
            use_breakage_detector: !args.no_breakage_detector,
            rule_scope: if args.host_scope {
                trackdiff::rules::RuleScope::Host
            } else {
                trackdiff::rules::RuleScope::RegistrableDomain
            },
        },
    ))
}

fn capture_missing(job: &Job, kind: TargetKind, k: usize, template: &str) -> Result<(), Failure> {
    let words = shell_words::split(template).map_err(|e| Failure::Usage(format!("--capture-cmd: {e}")))?;
    if words.is_empty() {
        return Err(Failure::Usage("--capture-cmd is empty".into()));
    }
    let vanilla = job.vanilla_runs().map_err(data)?;
    let Some(first) = vanilla.first() else {
        return Err(data(format!("{}: no vanilla runs to take the page URL from", job.dir.display())));
    };
    for entry in job.targets.targets.iter().filter(|e| e.target.kind == kind) {
        let have = job.blocked_runs(&entry.id).map_err(data)?.len();
        for run in have..k {
            let dir = job.blocked_dir(&entry.id).join(format!("run_{run}"));
            fs::create_dir_all(&dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
            let fill = |w: &str| {
                w.replace("{url}", &first.meta.page_url)
                    .replace("{id}", &entry.id)
                    .replace("{target}", &entry.target.to_string())
                    .replace("{pattern}", &entry.target.url_pattern)
                    .replace("{field}", entry.target.field.as_ref().map_or("", |f| f.name.as_str()))
                    .replace("{dir}", &dir.to_string_lossy())
                    .replace("{run}", &run.to_string())
            };
            let args: Vec<String> = words.iter().map(|w| fill(w)).collect();
            let status = Command::new(&args[0])
                .args(&args[1..])
                .status()
                .map_err(|e| data(format!("capture command `{}`: {e}", args[0])))?;
            if !status.success() {
                return Err(data(format!("capture of {} run {run} failed: {status}", entry.id)));
            }
        }
    }
    Ok(())
}

fn report_verdicts(args: &DetectArgs, verdicts: &[Verdict]) -> Result<(), Failure> {
    for v in verdicts.iter().filter(|v| v.low_confidence) {
        eprintln!("warning: {}: low confidence, most differences voted out", v.target_id);
    }
    write_out(args.out.as_deref(), &verdicts_tsv(verdicts))?;
    if let Some(path) = &args.emit_rules {
        let mut text = emitted_rules(verdicts).join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn next_free_ids(existing: &TargetsFile, mut fresh: TargetsFile) -> TargetsFile {
    let mut n = 0;
    for entry in &mut fresh.targets {
        loop {
            let id = format!("field-{n:03}");
            n += 1;
            if !existing.targets.iter().any(|e| e.id == id) {
                entry.id = id;
                break;
            }
        }
    }
    fresh
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Cmd::Detect(args) => {
            let det = detector(&args)?;
            let job = Job::open(&args.job).map_err(data)?;
            if let Some(cmd) = &args.capture_cmd {
                capture_missing(&job, TargetKind::Request, args.k, cmd)?;
            }
            let verdicts = det.detect_job(&job, TargetKind::Request).map_err(data)?;
            report_verdicts(&args, &verdicts)
        }
        Cmd::DetectMixed {
            args,
            per_field_threshold,
            per_server_threshold,
        } => {
            let det = detector(&args)?;
            let mut job = Job::open(&args.job).map_err(data)?;
            if !job.targets.targets.iter().any(|e| e.target.kind == TargetKind::Field) {
                let vanilla = job.vanilla_runs().map_err(data)?;
                let has_requests = job
                    .targets
                    .targets
                    .iter()
                    .any(|e| e.target.kind == TargetKind::Request && e.source_rule.is_none());
                let restrict: Option<Vec<_>> = if has_requests {
                    if let Some(cmd) = &args.capture_cmd {
                        capture_missing(&job, TargetKind::Request, args.k, cmd)?;
                    }
                    let verdicts = det.detect_job(&job, TargetKind::Request).map_err(data)?;
                    Some(
                        verdicts
                            .into_iter()
                            .filter(|v| v.decision == VerdictDecision::MixedCandidate)
                            .map(|v| v.target)
                            .collect(),
                    )
                } else {
                    None
                };
                let t = thresholds(per_field_threshold, per_server_threshold);
                let fresh = enumerate_candidates(&vanilla, CandidateMode::Field, &t, restrict.as_deref());
                let added = fresh.targets.len();
                let fresh = next_free_ids(&job.targets, fresh);
                job.targets.merge(fresh);
                job.save_targets().map_err(data)?;
                eprintln!("{}: added {added} field targets", job.name());
            }
            if let Some(cmd) = &args.capture_cmd {
                capture_missing(&job, TargetKind::Field, args.k, cmd)?;
            }
            let verdicts = det.detect_job(&job, TargetKind::Field).map_err(data)?;
            report_verdicts(&args, &verdicts)
        }
        Cmd::Reconstruct {
            lists,
            jobs,
            out,
            k,
            report,
        } => {
            let rules = load_lists(&lists).map_err(data)?;
            let rec = reconstruct_breakage_samples(&rules, &jobs, k, &DiffContext::default()).map_err(data)?;
            rec.dataset().map_err(data)?.save(&out).map_err(data)?;
            match report {
                Some(p) => fs::write(&p, rec.report()).map_err(|e| data(format!("{}: {e}", p.display())))?,
                None => eprint!("{}", rec.report()),
            }
            eprintln!("{} samples, {} discarded", rec.samples.len(), rec.discarded.len());
            Ok(())
        }
        Cmd::Datasets {
            lists,
            jobs,
            out_dir,
            k,
            popularity_cutoff,
        } => {
            let rules = load_lists(&lists).map_err(data)?;
            let cfg = TrainingConfig { k, popularity_cutoff };
            let sets = build_training_sets(&jobs, &rules, &cfg, &DiffContext::default()).map_err(data)?;
            fs::create_dir_all(&out_dir).map_err(|e| data(format!("{}: {e}", out_dir.display())))?;
            for (name, ds) in [("breakage", &sets.breakage), ("tracking", &sets.tracking), ("mixed", &sets.mixed)] {
                ds.save(&out_dir.join(format!("{name}.csv"))).map_err(data)?;
            }
            for w in &sets.warnings {
                eprintln!("warning: {w}");
            }
            for (name, n) in &sets.counts {
                println!("{name}\t{n}");
            }
            Ok(())
        }
        Cmd::Train {
            dataset,
            kind,
            out,
            trees,
            depth,
            lr,
            seed,
            subsample,
            cv,
        } => {
            if trees == 0 || depth == 0 || lr <= 0.0 || !(subsample > 0.0 && subsample <= 1.0) {
                return Err(Failure::Usage(
                    "--trees and --depth must be positive, --lr > 0, --subsample in (0, 1]".into(),
                ));
            }
            let ds = Dataset::load(&dataset).map_err(data)?;
            let want = match kind {
                Kind::Breakage => RegistryKind::Breakage,
                Kind::Tracking | Kind::Mixed => RegistryKind::Tracking,
            };
            if ds.registry_id != want.id() {
                return Err(data(format!(
                    "{}: registry {} does not fit --kind (expected {})",
                    dataset.display(),
                    ds.registry_id,
                    want.id()
                )));
            }
            let params = TrainParams {
                trees,
                depth,
                learning_rate: lr,
                seed,
                subsample,
                ..TrainParams::default()
            };
            if let Some(folds) = cv {
                let r = cross_validate(&ds, folds, &params, seed).map_err(data)?;
                println!("cv_f1\t{:.6}\t{:.6}", r.f1_mean, r.f1_std);
            }
            let model = train(&ds, &params).map_err(data)?;
            save_model(&model, &out).map_err(data)?;
            println!("rows\t{}\tpositives\t{}", ds.len(), ds.positives());
            Ok(())
        }
        Cmd::Eval {
            verdicts,
            labels,
            sweep,
        } => {
            let read = |p: &Path| fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())));
            let v = parse_verdicts(&read(&verdicts)?).map_err(|e| data(format!("{}: {e}", verdicts.display())))?;
            let table = parse_labels(&read(&labels)?).map_err(|e| data(format!("{}: {e}", labels.display())))?;
            let l = join_labels(&v, &table).map_err(data)?;
            let grid = default_sweep_grid();
            let ev = pipeline::evaluate(&v, &l, sweep.then_some(grid.as_slice())).map_err(data)?;
            let m = &ev.metrics;
            println!("accuracy\t{:.6}", m.accuracy);
            println!("precision\t{:.6}", m.precision);
            println!("recall\t{:.6}", m.recall);
            println!("f1\t{:.6}", m.f1);
            if sweep {
                println!("\ntracker_threshold\tbreakage_threshold\taccuracy\tprecision\trecall\tf1");
                for r in &ev.sweep {
                    println!(
                        "{:.2}\t{:.2}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                        r.tracker_threshold,
                        r.breakage_threshold,
                        r.metrics.accuracy,
                        r.metrics.precision,
                        r.metrics.recall,
                        r.metrics.f1
                    );
                }
                if let Some(b) = ev.best {
                    println!("\nbest\t{:.2}\t{:.2}\t{:.6}", b.tracker_threshold, b.breakage_threshold, b.metrics.accuracy);
                }
            }
            Ok(())
        }
        Cmd::EntropyScan {
            trace,
            per_field_threshold,
            per_server_threshold,
        } => {
            let t = load_trace(&trace).map_err(data)?;
            let th = thresholds(per_field_threshold, per_server_threshold);
            let requests: Vec<_> = t.requests.iter().filter(|r| r.is_outgoing()).collect();
            println!("url\tfield_kind\tname\tcombinations\tselected_by");
            for s in scan_fields(&requests, &th) {
                println!(
                    "{}\t{}\t{}\t{}\t{}",
                    s.request.url, s.field.kind, s.field.name, s.field_entropy.combinations, s.selected_by
                );
            }
            Ok(())
        }
        Cmd::Candidates {
            job,
            mode,
            write,
            per_field_threshold,
            per_server_threshold,
        } => {
            let mut job = Job::open(&job).map_err(data)?;
            let vanilla = job.vanilla_runs().map_err(data)?;
            let th = thresholds(per_field_threshold, per_server_threshold);
            let mode = match mode {
                Mode::Request => CandidateMode::Request,
                Mode::Field => CandidateMode::Field,
            };
            let found = enumerate_candidates(&vanilla, mode, &th, None);
            if write {
                let n = found.targets.len();
                let found = match mode {
                    CandidateMode::Field => next_free_ids(&job.targets, found),
                    CandidateMode::Request => found,
                };
                job.targets.merge(found);
                job.save_targets().map_err(data)?;
                eprintln!("{}: {n} candidates, {} targets total", job.name(), job.targets.targets.len());
            } else {
                print!("{}", found.to_json());
            }
            Ok(())
        }
        Cmd::Fixtures(FixturesCmd::Suite { dir, seed }) => {
            let m = fixtures::write_suite(&dir, seed).map_err(data)?;
            println!("{} jobs, {} reconstruction rules", m.jobs.len(), m.reconstruction.len());
            Ok(())
        }
        Cmd::Fixtures(FixturesCmd::Corpus { dir, k, seed }) => {
            if k == 0 {
                return Err(Failure::Usage("--k must be at least 1".into()));
            }
            let cfg = fixtures::CorpusConfig {
                seed,
                ..fixtures::CorpusConfig::default()
            };
            let s = fixtures::write_corpus(&dir, &cfg, k).map_err(data)?;
            println!("{} jobs, lists at {}", s.jobs, s.lists.display());
            Ok(())
        }
        Cmd::Fixtures(FixturesCmd::Check { dir, models }) => {
            let manifest = fixtures::Manifest::load(&dir.join(fixtures::MANIFEST_FILE)).map_err(data)?;
            let models = Models::load(&models).map_err(data)?;
            let det = Detector::new(
                models,
                DetectConfig {
                    k: manifest.k,
                    ..DetectConfig::default()
                },
            );
            let report = fixtures::check_suite(&dir, &manifest, &det).map_err(data)?;
            let (_, rec) = fixtures::check_reconstruction(&dir, &manifest, &det.ctx).map_err(data)?;
            for m in report.mismatches.iter().chain(&rec) {
                println!("MISMATCH\t{m}");
            }
            if report.passed() && rec.is_empty() {
                println!("ok\t{} jobs", manifest.jobs.len());
                Ok(())
            } else {
                Err(Failure::Data(format!("{} mismatches", report.mismatches.len() + rec.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
