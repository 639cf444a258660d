//! End-to-end detection over job directories.
//!
//! A job directory holds the runs for one page:
//!
//! ```text
//! <job>/targets.json
//! <job>/job.json                      (optional: {"rank": 1234})
//! <job>/vanilla/run_<i>/trace.json
//! <job>/blocked/<target id>/run_<i>/trace.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{load_model, predict, ClassifierError, Confusion, Dataset, Model};
use crate::diff::{consensus, diff_grid, ConsensusDiff, DiffContext, DiffError, TargetMatcher};
use crate::entropy::{select_fields, Thresholds};
use crate::features::{breakage_vector, tracking_vector, FeatureError, FeatureVector, RegistryKind};
use crate::lexicon::Lexicons;
use crate::rules::{
    field_outcomes, flip_exception, generate_rule, match_request, parse_rule, Decision, FilterRule, RuleScope,
    RuleSet, RuleSpec,
};
use crate::trace::{
    enumerate_requests, load_trace, CandidateFilter, RequestRecord, TargetKind, TargetRef, Trace, TraceError,
};

pub const TARGETS_FILE: &str = "targets.json";
pub const JOB_FILE: &str = "job.json";
pub const TRACE_FILE: &str = "trace.json";
pub const TARGETS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("{target}: {side} runs: found {found}, need {needed}")]
    MissingRuns {
        target: String,
        side: &'static str,
        found: usize,
        needed: usize,
    },
    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
    #[error("model {0} is required for this operation")]
    MissingModel(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("{0}")]
    LabelMismatch(String),
    #[error("target `{0}` has kind {1:?}, expected the other kind")]
    WrongTargetKind(String, TargetKind),
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub id: String,
    pub target: TargetRef,
    /// Filter rule this target was derived from, for reconstructed breakage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetsFile {
    pub schema_version: u32,
    pub targets: Vec<TargetEntry>,
}

impl Default for TargetsFile {
    fn default() -> Self {
        Self {
            schema_version: TARGETS_SCHEMA_VERSION,
            targets: Vec::new(),
        }
    }
}

impl TargetsFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("targets serialize");
        s.push('\n');
        s
    }

    /// Append targets not already present (by target identity), keeping
    /// existing ids.
    pub fn merge(&mut self, other: TargetsFile) {
        for entry in other.targets {
            let dup = self.targets.iter().any(|e| e.target.same_target(&entry.target) || e.id == entry.id);
            if !dup {
                self.targets.push(entry);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobInfo {
    /// Popularity rank of the page; lower is more popular.
    #[serde(default)]
    pub rank: Option<u64>,
}

/// A job directory with its target list. Runs load on demand.
#[derive(Debug, Clone)]
pub struct Job {
    pub dir: PathBuf,
    pub targets: TargetsFile,
    pub info: JobInfo,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::BadFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn run_index(name: &str) -> Option<u32> {
    name.strip_prefix("run_")?.parse().ok()
}

/// Traces under `dir/run_<i>/trace.json` in run order. A missing directory
/// has no runs.
pub fn load_runs(dir: &Path) -> Result<Vec<Trace>, PipelineError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut runs: Vec<(u32, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            run_index(&name).map(|i| (i, e.path().join(TRACE_FILE)))
        })
        .filter(|(_, p)| p.is_file())
        .collect();
    runs.sort();
    runs.into_iter()
        .map(|(_, p)| load_trace(&p).map_err(PipelineError::from))
        .collect()
}

impl Job {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Job, PipelineError> {
        let dir = dir.into();
        let targets_path = dir.join(TARGETS_FILE);
        let targets = if targets_path.is_file() {
            read_json(&targets_path)?
        } else {
            TargetsFile::default()
        };
        let job_path = dir.join(JOB_FILE);
        let info = if job_path.is_file() {
            read_json(&job_path)?
        } else {
            JobInfo::default()
        };
        Ok(Job { dir, targets, info })
    }

    pub fn vanilla_dir(&self) -> PathBuf {
        self.dir.join("vanilla")
    }

    pub fn blocked_dir(&self, target_id: &str) -> PathBuf {
        self.dir.join("blocked").join(target_id)
    }

    pub fn vanilla_runs(&self) -> Result<Vec<Trace>, PipelineError> {
        load_runs(&self.vanilla_dir())
    }

    pub fn blocked_runs(&self, target_id: &str) -> Result<Vec<Trace>, PipelineError> {
        load_runs(&self.blocked_dir(target_id))
    }

    pub fn save_targets(&self) -> Result<(), PipelineError> {
        let path = self.dir.join(TARGETS_FILE);
        fs::write(&path, self.targets.to_json()).map_err(|e| io_err(&path, e))
    }

    pub fn name(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Job directories directly under `root` (those with a `vanilla/` dir),
/// sorted by name.
pub fn list_jobs(root: &Path) -> Result<Vec<Job>, PipelineError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("vanilla").is_dir())
        .collect();
    dirs.sort();
    dirs.into_iter().map(Job::open).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictDecision {
    NonTracker,
    Tracker,
    MixedCandidate,
    TrackingField,
    UnresolvedMixedField,
}

impl VerdictDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictDecision::NonTracker => "non_tracker",
            VerdictDecision::Tracker => "tracker",
            VerdictDecision::MixedCandidate => "mixed_candidate",
            VerdictDecision::TrackingField => "tracking_field",
            VerdictDecision::UnresolvedMixedField => "unresolved_mixed_field",
        }
    }

    /// Decisions that come with a rule.
    pub fn emits_rule(self) -> bool {
        matches!(self, VerdictDecision::Tracker | VerdictDecision::TrackingField)
    }
}

impl fmt::Display for VerdictDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VerdictDecision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            VerdictDecision::NonTracker,
            VerdictDecision::Tracker,
            VerdictDecision::MixedCandidate,
            VerdictDecision::TrackingField,
            VerdictDecision::UnresolvedMixedField,
        ]
        .into_iter()
        .find(|d| d.as_str() == s)
        .ok_or_else(|| format!("unknown decision `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub target_id: String,
    pub target: TargetRef,
    pub tracker_prob: f64,
    /// Computed even when the decision did not need it.
    pub breakage_prob: f64,
    pub decision: VerdictDecision,
    pub emitted_rule: Option<FilterRule>,
    /// Most differences seen across runs were voted out.
    pub low_confidence: bool,
}

pub const VERDICT_HEADER: &str = "target\ttracker_prob\tbreakage_prob\tdecision\trule";

impl Verdict {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            self.target,
            self.tracker_prob,
            self.breakage_prob,
            self.decision,
            self.emitted_rule.as_ref().map_or_else(|| "-".to_string(), |r| r.to_string())
        )
    }

    pub fn record(&self) -> VerdictRecord {
        VerdictRecord {
            target: self.target.to_string(),
            tracker_prob: self.tracker_prob,
            breakage_prob: self.breakage_prob,
            decision: self.decision,
            rule: self.emitted_rule.as_ref().map(|r| r.to_string()),
        }
    }
}

pub fn verdicts_tsv(verdicts: &[Verdict]) -> String {
    let mut out = String::from(VERDICT_HEADER);
    out.push('\n');
    for v in verdicts {
        out.push_str(&v.tsv_row());
        out.push('\n');
    }
    out
}

/// One parsed row of a verdict TSV.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRecord {
    pub target: String,
    pub tracker_prob: f64,
    pub breakage_prob: f64,
    pub decision: VerdictDecision,
    pub rule: Option<String>,
}

pub fn parse_verdicts(text: &str) -> Result<Vec<VerdictRecord>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("target\t")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(format!("line {}: expected 5 columns, got {}", n + 1, cols.len()));
        }
        let prob = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: bad probability `{s}`", n + 1));
        out.push(VerdictRecord {
            target: cols[0].to_string(),
            tracker_prob: prob(cols[1])?,
            breakage_prob: prob(cols[2])?,
            decision: cols[3].parse().map_err(|e| format!("line {}: {e}", n + 1))?,
            rule: (cols[4] != "-").then(|| cols[4].to_string()),
        });
    }
    Ok(out)
}

/// `target<TAB>label` rows; a header line starting with `target` is skipped.
pub fn parse_labels(text: &str) -> Result<BTreeMap<String, bool>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("target\t")) {
            continue;
        }
        let (t, l) = line
            .rsplit_once('\t')
            .ok_or_else(|| format!("line {}: expected target<TAB>label", n + 1))?;
        let label = match l.trim() {
            "1" | "true" | "tracker" => true,
            "0" | "false" | "non_tracker" => false,
            other => return Err(format!("line {}: bad label `{other}`", n + 1)),
        };
        out.insert(t.to_string(), label);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Models {
    pub tracking: Model,
    pub breakage: Model,
    /// Tracking detector for fields; needed only by field detection.
    pub mixed: Option<Model>,
}

pub const TRACKING_MODEL_FILE: &str = "tracking.json";
pub const BREAKAGE_MODEL_FILE: &str = "breakage.json";
pub const MIXED_MODEL_FILE: &str = "mixed.json";

impl Models {
    /// `tracking.json` and `breakage.json` are required; `mixed.json` is optional.
    pub fn load(dir: &Path) -> Result<Models, PipelineError> {
        let required = |name: &str| {
            let p = dir.join(name);
            if !p.is_file() {
                return Err(PipelineError::MissingModel(p.display().to_string()));
            }
            Ok(load_model(&p)?)
        };
        let mixed_path = dir.join(MIXED_MODEL_FILE);
        Ok(Models {
            tracking: required(TRACKING_MODEL_FILE)?,
            breakage: required(BREAKAGE_MODEL_FILE)?,
            mixed: if mixed_path.is_file() {
                Some(load_model(&mixed_path)?)
            } else {
                None
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub k: usize,
    pub tracker_threshold: f64,
    pub breakage_threshold: f64,
    /// Off for the ablation where the tracking detector alone decides.
    pub use_breakage_detector: bool,
    pub rule_scope: RuleScope,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            k: crate::diff::DEFAULT_K,
            tracker_threshold: 0.5,
            breakage_threshold: 0.5,
            use_breakage_detector: true,
            rule_scope: RuleScope::RegistrableDomain,
        }
    }
}

/// Vanilla and blocked runs for one target, diffed and voted.
pub fn target_consensus(
    job: &Job,
    vanilla: &[Trace],
    entry: &TargetEntry,
    k: usize,
    ctx: &DiffContext,
) -> Result<ConsensusDiff, PipelineError> {
    if vanilla.len() < k {
        return Err(PipelineError::MissingRuns {
            target: entry.id.clone(),
            side: "vanilla",
            found: vanilla.len(),
            needed: k,
        });
    }
    let blocked = job.blocked_runs(&entry.id)?;
    if blocked.len() < k {
        return Err(PipelineError::MissingRuns {
            target: entry.id.clone(),
            side: "blocked",
            found: blocked.len(),
            needed: k,
        });
    }
    let diffs = diff_grid(&vanilla[..k], &blocked[..k], ctx)?;
    Ok(consensus(&diffs, k)?)
}

/// First vanilla request the target names.
pub fn representative_request<'t>(vanilla: &'t Trace, target: &TargetRef) -> Result<Option<&'t RequestRecord>, DiffError> {
    let m = TargetMatcher::new(target)?;
    Ok(vanilla.requests.iter().find(|r| m.matches(r)))
}

pub struct Detector {
    pub models: Models,
    pub config: DetectConfig,
    pub ctx: DiffContext,
}

impl Detector {
    pub fn new(models: Models, config: DetectConfig) -> Self {
        Self {
            models,
            config,
            ctx: DiffContext::default(),
        }
    }

    fn probabilities(
        &self,
        tracking_model: &Model,
        diff: &ConsensusDiff,
        target: &TargetRef,
    ) -> Result<(f64, f64), PipelineError> {
        let tv = tracking_vector(diff, target)?;
        let bv = breakage_vector(diff)?;
        Ok((predict(tracking_model, &tv)?, predict(&self.models.breakage, &bv)?))
    }

    /// Request-level verdict.
    pub fn detect_request(&self, job: &Job, vanilla: &[Trace], entry: &TargetEntry) -> Result<Verdict, PipelineError> {
        if entry.target.kind != TargetKind::Request {
            return Err(PipelineError::WrongTargetKind(entry.id.clone(), entry.target.kind));
        }
        let diff = target_consensus(job, vanilla, entry, self.config.k, &self.ctx)?;
        let (tracker_prob, breakage_prob) = self.probabilities(&self.models.tracking, &diff, &entry.target)?;
        let c = &self.config;
        let decision = if tracker_prob <= c.tracker_threshold {
            VerdictDecision::NonTracker
        } else if c.use_breakage_detector && breakage_prob > c.breakage_threshold {
            VerdictDecision::MixedCandidate
        } else {
            VerdictDecision::Tracker
        };
        let emitted_rule = if decision == VerdictDecision::Tracker {
            let req = representative_request(&vanilla[0], &entry.target)?
                .ok_or_else(|| FeatureError::UnknownTarget(entry.target.to_string()))?;
            let mut spec = RuleSpec::block(req);
            spec.scope = c.rule_scope;
            generate_rule(&spec).ok()
        } else {
            None
        };
        Ok(Verdict {
            target_id: entry.id.clone(),
            target: entry.target.clone(),
            tracker_prob,
            breakage_prob,
            decision: if decision == VerdictDecision::Tracker && emitted_rule.is_none() {
                VerdictDecision::NonTracker
            } else {
                decision
            },
            emitted_rule,
            low_confidence: diff.low_confidence(),
        })
    }

    /// Field-level verdict; uses the mixed model as tracking detector.
    pub fn detect_field(&self, job: &Job, vanilla: &[Trace], entry: &TargetEntry) -> Result<Verdict, PipelineError> {
        let Some(field) = entry.target.field.as_ref().filter(|_| entry.target.kind == TargetKind::Field) else {
            return Err(PipelineError::WrongTargetKind(entry.id.clone(), entry.target.kind));
        };
        let mixed = self
            .models
            .mixed
            .as_ref()
            .ok_or_else(|| PipelineError::MissingModel(MIXED_MODEL_FILE.to_string()))?;
        let diff = target_consensus(job, vanilla, entry, self.config.k, &self.ctx)?;
        let (tracker_prob, breakage_prob) = self.probabilities(mixed, &diff, &entry.target)?;
        let c = &self.config;
        let tracking = tracker_prob > c.tracker_threshold;
        let breaks = c.use_breakage_detector && breakage_prob > c.breakage_threshold;
        let mut decision = match (tracking, breaks) {
            (true, false) => VerdictDecision::TrackingField,
            (true, true) => VerdictDecision::UnresolvedMixedField,
            (false, _) => VerdictDecision::NonTracker,
        };
        let mut emitted_rule = None;
        if decision == VerdictDecision::TrackingField {
            let req = representative_request(&vanilla[0], &entry.target)?
                .ok_or_else(|| FeatureError::UnknownTarget(entry.target.to_string()))?;
            let live = req
                .fields()
                .into_iter()
                .find(|f| f.kind == field.kind && f.name == field.name)
                .unwrap_or_else(|| field.clone());
            let mut spec = RuleSpec::for_field(req, &live);
            spec.scope = c.rule_scope;
            emitted_rule = generate_rule(&spec).ok();
            if emitted_rule.is_none() {
                decision = VerdictDecision::NonTracker;
            }
        }
        Ok(Verdict {
            target_id: entry.id.clone(),
            target: entry.target.clone(),
            tracker_prob,
            breakage_prob,
            decision,
            emitted_rule,
            low_confidence: diff.low_confidence(),
        })
    }

    /// Verdicts for every target of `kind` in the job, in target-file order.
    /// Entries derived from filter rules are skipped.
    pub fn detect_job(&self, job: &Job, kind: TargetKind) -> Result<Vec<Verdict>, PipelineError> {
        let vanilla = job.vanilla_runs()?;
        job.targets
            .targets
            .iter()
            .filter(|e| e.target.kind == kind && e.source_rule.is_none())
            .map(|e| match kind {
                TargetKind::Request => self.detect_request(job, &vanilla, e),
                TargetKind::Field => self.detect_field(job, &vanilla, e),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    Request,
    Field,
}

/// `|scheme://host/path` with filter metacharacters wildcarded.
pub fn request_pattern(r: &RequestRecord) -> String {
    let key: String = r
        .url_key()
        .chars()
        .map(|c| if matches!(c, '*' | '^' | '|' | '$') { '*' } else { c })
        .collect();
    format!("|{key}")
}

fn present_in(run: &Trace, target: &TargetRef) -> bool {
    TargetMatcher::new(target)
        .map(|m| run.requests.iter().any(|r| m.matches(r)))
        .unwrap_or(false)
}

/// Targets worth blocking on this page.
///
/// Request mode lists script and parameterized requests; field mode expands
/// them into identifier-like fields. `restrict` limits field expansion to
/// requests named by those targets. Targets absent from at least half of the
/// vanilla runs are dropped as run-dependent.
pub fn enumerate_candidates(
    vanilla: &[Trace],
    mode: CandidateMode,
    thresholds: &Thresholds,
    restrict: Option<&[TargetRef]>,
) -> TargetsFile {
    let Some(first) = vanilla.first() else {
        return TargetsFile::default();
    };
    let mut requests = enumerate_requests(first, &CandidateFilter::default());
    if let Some(only) = restrict {
        let matchers: Vec<TargetMatcher<'_>> = only.iter().filter_map(|t| TargetMatcher::new(t).ok()).collect();
        requests.retain(|r| matchers.iter().any(|m| m.matches_url(&r.url)));
    }
    let mut targets: Vec<TargetRef> = Vec::new();
    match mode {
        CandidateMode::Request => {
            for r in &requests {
                let t = TargetRef::request(request_pattern(r));
                if !targets.iter().any(|x| x.same_target(&t)) {
                    targets.push(t);
                }
            }
        }
        CandidateMode::Field => {
            for (r, field) in select_fields(&requests, thresholds) {
                let t = TargetRef::field(request_pattern(r), field);
                if !targets.iter().any(|x| x.same_target(&t)) {
                    targets.push(t);
                }
            }
        }
    }
    targets.retain(|t| {
        let absent = vanilla.iter().filter(|run| !present_in(run, t)).count();
        absent * 2 < vanilla.len()
    });
    let prefix = match mode {
        CandidateMode::Request => "req",
        CandidateMode::Field => "field",
    };
    TargetsFile {
        schema_version: TARGETS_SCHEMA_VERSION,
        targets: targets
            .into_iter()
            .enumerate()
            .map(|(i, target)| TargetEntry {
                id: format!("{prefix}-{i:03}"),
                target,
                source_rule: None,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiscardReason {
    /// No `domain=` include to navigate to.
    AmbiguousTarget,
    MissingJob(String),
    BlocksNothing,
    NoBlockedRuns,
    Failed(String),
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscardReason::AmbiguousTarget => f.write_str("ambiguous target"),
            DiscardReason::MissingJob(d) => write!(f, "no job for domain {d}"),
            DiscardReason::BlocksNothing => f.write_str("blocks no resources"),
            DiscardReason::NoBlockedRuns => f.write_str("no blocked runs captured"),
            DiscardReason::Failed(e) => write!(f, "failed: {e}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BreakageSample {
    pub exception: FilterRule,
    pub flipped: FilterRule,
    pub job: PathBuf,
    pub blocked_count: usize,
    pub diff: ConsensusDiff,
    pub features: FeatureVector,
}

#[derive(Debug, Clone)]
pub struct Discarded {
    pub exception: FilterRule,
    pub reason: DiscardReason,
}

#[derive(Debug, Clone, Default)]
pub struct Reconstruction {
    pub samples: Vec<BreakageSample>,
    pub discarded: Vec<Discarded>,
}

impl Reconstruction {
    pub fn dataset(&self) -> Result<Dataset, ClassifierError> {
        let mut ds = Dataset::for_registry(RegistryKind::Breakage);
        for s in &self.samples {
            ds.push(&s.features, true)?;
        }
        Ok(ds)
    }

    /// `rule<TAB>outcome<TAB>detail` for every input exception rule.
    pub fn report(&self) -> String {
        let mut out = String::from("rule\toutcome\tdetail\n");
        for s in &self.samples {
            out.push_str(&format!("{}\temitted\tblocked {}\n", s.exception, s.blocked_count));
        }
        for d in &self.discarded {
            out.push_str(&format!("{}\tdiscarded\t{}\n", d.exception, d.reason));
        }
        out
    }
}

/// Requests the rule would block or strip on the page.
pub fn rule_hits(rule: &FilterRule, trace: &Trace) -> usize {
    let host = trace.page_host();
    trace
        .requests
        .iter()
        .filter(|r| r.is_outgoing() && rule.applies(&r.url, &host))
        .filter(|r| {
            if rule.is_field_rule() {
                r.fields().iter().any(|f| rule.strips(f))
            } else {
                rule.is_network_rule()
            }
        })
        .count()
}

struct JobCache {
    jobs: Vec<Job>,
    vanilla: BTreeMap<usize, Vec<Trace>>,
}

impl JobCache {
    fn new(root: &Path) -> Result<Self, PipelineError> {
        Ok(Self {
            jobs: list_jobs(root)?,
            vanilla: BTreeMap::new(),
        })
    }

    fn vanilla(&mut self, i: usize) -> Result<&[Trace], PipelineError> {
        if !self.vanilla.contains_key(&i) {
            let runs = self.jobs[i].vanilla_runs()?;
            self.vanilla.insert(i, runs);
        }
        Ok(&self.vanilla[&i])
    }

    fn find_by_domain(&mut self, domain: &str) -> Result<Option<usize>, PipelineError> {
        for i in 0..self.jobs.len() {
            let runs = self.vanilla(i)?;
            if let Some(first) = runs.first() {
                if crate::psl::host_within(&first.page_host(), domain) {
                    return Ok(Some(i));
                }
            }
        }
        Ok(None)
    }
}

fn reconstruct_one(
    cache: &mut JobCache,
    exception: &FilterRule,
    k: usize,
    ctx: &DiffContext,
) -> Result<BreakageSample, DiscardReason> {
    let flipped = flip_exception(exception).map_err(|e| DiscardReason::Failed(e.to_string()))?;
    let domains = exception.options.included_domains();
    if domains.is_empty() {
        return Err(DiscardReason::AmbiguousTarget);
    }
    let mut found = None;
    for d in &domains {
        if let Some(i) = cache.find_by_domain(d).map_err(|e| DiscardReason::Failed(e.to_string()))? {
            found = Some(i);
            break;
        }
    }
    let i = found.ok_or_else(|| DiscardReason::MissingJob(domains.join("|")))?;
    let vanilla = cache.vanilla(i).map_err(|e| DiscardReason::Failed(e.to_string()))?.to_vec();
    let blocked_count = rule_hits(&flipped, &vanilla[0]);
    if blocked_count == 0 {
        return Err(DiscardReason::BlocksNothing);
    }
    let job = &cache.jobs[i];
    let entry = job
        .targets
        .targets
        .iter()
        .find(|e| {
            e.source_rule
                .as_deref()
                .and_then(|s| parse_rule(s).ok())
                .is_some_and(|r| r == flipped || r == *exception)
        })
        .ok_or(DiscardReason::NoBlockedRuns)?;
    let diff = target_consensus(job, &vanilla, entry, k, ctx).map_err(|e| match e {
        PipelineError::MissingRuns { .. } => DiscardReason::NoBlockedRuns,
        other => DiscardReason::Failed(other.to_string()),
    })?;
    let features = breakage_vector(&diff).map_err(|e| DiscardReason::Failed(e.to_string()))?;
    Ok(BreakageSample {
        exception: exception.clone(),
        flipped,
        job: job.dir.clone(),
        blocked_count,
        diff,
        features,
    })
}

/// Flip every exception rule and pair it with the job captured on its
/// domain. Each rule ends up either as a sample or as a discard with a reason.
pub fn reconstruct_breakage_samples(
    lists: &RuleSet,
    jobs_root: &Path,
    k: usize,
    ctx: &DiffContext,
) -> Result<Reconstruction, PipelineError> {
    let mut cache = JobCache::new(jobs_root)?;
    let mut out = Reconstruction::default();
    for exception in lists.exceptions() {
        match reconstruct_one(&mut cache, exception, k, ctx) {
            Ok(s) => out.samples.push(s),
            Err(reason) => out.discarded.push(Discarded {
                exception: exception.clone(),
                reason,
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainingSets {
    pub breakage: Dataset,
    pub tracking: Dataset,
    pub mixed: Dataset,
    pub reconstruction: Reconstruction,
    /// Rows per source, e.g. `breakage_positive`.
    pub counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingConfig {
    pub k: usize,
    /// Jobs ranked above this (less popular) contribute no breakage negatives.
    pub popularity_cutoff: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            k: crate::diff::DEFAULT_K,
            popularity_cutoff: 5_000,
        }
    }
}

/// Label a field target from the supplied lists: stripped by a field rule
/// and not a known functional cookie.
pub fn field_label(lists: &RuleSet, lex: &Lexicons, request: &RequestRecord, page_url: &str, target: &TargetRef) -> bool {
    let Some(field) = &target.field else {
        return false;
    };
    if field.kind == crate::trace::FieldKind::Cookie && lex.is_functional_cookie(&field.name) {
        return false;
    }
    field_outcomes(lists, request, page_url).iter().any(|o| {
        o.decision == Decision::StripField
            && o.field.as_ref().is_some_and(|f| f.kind == field.kind && f.name == field.name)
    })
}

/// Breakage, tracking and mixed-field datasets from captured jobs and
/// filter lists.
pub fn build_training_sets(
    jobs_root: &Path,
    lists: &RuleSet,
    cfg: &TrainingConfig,
    ctx: &DiffContext,
) -> Result<TrainingSets, PipelineError> {
    let reconstruction = reconstruct_breakage_samples(lists, jobs_root, cfg.k, ctx)?;
    let mut breakage = reconstruction.dataset()?;
    let mut tracking = Dataset::for_registry(RegistryKind::Tracking);
    let mut mixed = Dataset::for_registry(RegistryKind::Tracking);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut warnings = Vec::new();
    counts.insert("breakage_positive".into(), breakage.len());
    counts.insert("reconstruction_discarded".into(), reconstruction.discarded.len());
    if lists.exceptions().next().is_none() {
        warnings.push("no exception rules supplied; breakage positives are empty".to_string());
    }

    for job in list_jobs(jobs_root)? {
        let vanilla = job.vanilla_runs()?;
        let Some(first) = vanilla.first() else {
            warnings.push(format!("{}: no vanilla runs", job.name()));
            continue;
        };
        let page_url = first.meta.page_url.clone();
        let popular = job.info.rank.unwrap_or(0) <= cfg.popularity_cutoff;
        for entry in job.targets.targets.iter().filter(|e| e.source_rule.is_none()) {
            let Some(req) = representative_request(first, &entry.target)? else {
                warnings.push(format!("{}/{}: target not in vanilla run", job.name(), entry.id));
                continue;
            };
            let diff = match target_consensus(&job, &vanilla, entry, cfg.k, ctx) {
                Ok(d) => d,
                Err(PipelineError::MissingRuns { .. }) => {
                    warnings.push(format!("{}/{}: missing runs", job.name(), entry.id));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let tv = tracking_vector(&diff, &entry.target)?;
            match entry.target.kind {
                TargetKind::Request => {
                    let is_tracker = match_request(lists, req, &page_url).decision == Decision::Block;
                    tracking.push(&tv, is_tracker)?;
                    *counts
                        .entry(if is_tracker { "tracking_positive" } else { "tracking_negative" }.into())
                        .or_insert(0) += 1;
                    if is_tracker && popular {
                        breakage.push(&breakage_vector(&diff)?, false)?;
                        *counts.entry("breakage_negative".into()).or_insert(0) += 1;
                    }
                }
                TargetKind::Field => {
                    let label = field_label(lists, &ctx.lexicons, req, &page_url, &entry.target);
                    mixed.push(&tv, label)?;
                    *counts
                        .entry(if label { "mixed_positive" } else { "mixed_negative" }.into())
                        .or_insert(0) += 1;
                }
            }
        }
    }
    Ok(TrainingSets {
        breakage,
        tracking,
        mixed,
        reconstruction,
        counts,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

impl Metrics {
    fn from_confusion(c: Confusion) -> Self {
        Self {
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            confusion: c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tracker_threshold: f64,
    pub breakage_threshold: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Metrics for the decisions as recorded.
    pub metrics: Metrics,
    pub sweep: Vec<SweepRow>,
    /// Highest-accuracy threshold pair; first in grid order on ties.
    pub best: Option<SweepRow>,
}

/// Confusion-matrix metrics for verdicts against binary labels (1 = the
/// target should be blocked or stripped).
pub fn evaluate(verdicts: &[VerdictRecord], labels: &[bool], sweep: Option<&[f64]>) -> Result<Evaluation, PipelineError> {
    if verdicts.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    if verdicts.len() != labels.len() {
        return Err(PipelineError::LabelMismatch(format!(
            "{} verdicts but {} labels",
            verdicts.len(),
            labels.len()
        )));
    }
    let mut c = Confusion::default();
    for (v, &l) in verdicts.iter().zip(labels) {
        c.add(v.decision.emits_rule(), l);
    }
    let mut rows = Vec::new();
    if let Some(grid) = sweep {
        for &tt in grid {
            for &bt in grid {
                let mut c = Confusion::default();
                for (v, &l) in verdicts.iter().zip(labels) {
                    c.add(v.tracker_prob > tt && v.breakage_prob <= bt, l);
                }
                rows.push(SweepRow {
                    tracker_threshold: tt,
                    breakage_threshold: bt,
                    metrics: Metrics::from_confusion(c),
                });
            }
        }
    }
    let best = rows
        .iter()
        .fold(None::<SweepRow>, |best, r| match best {
            Some(b) if b.metrics.accuracy >= r.metrics.accuracy => Some(b),
            _ => Some(*r),
        });
    Ok(Evaluation {
        metrics: Metrics::from_confusion(c),
        sweep: rows,
        best,
    })
}

/// Join verdict rows with a label table by target; every verdict needs a label.
pub fn join_labels(verdicts: &[VerdictRecord], labels: &BTreeMap<String, bool>) -> Result<Vec<bool>, PipelineError> {
    verdicts
        .iter()
        .map(|v| {
            labels
                .get(&v.target)
                .copied()
                .ok_or_else(|| PipelineError::LabelMismatch(format!("no label for {}", v.target)))
        })
        .collect()
}

/// Default sweep grid: 0.05 to 0.95 in steps of 0.05.
pub fn default_sweep_grid() -> Vec<f64> {
    (1..20).map(|i| i as f64 / 20.0).collect()
}

/// Rule lines from several list files, in order.
pub fn load_lists(paths: &[PathBuf]) -> Result<RuleSet, PipelineError> {
    let mut set = RuleSet::default();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        set.extend(RuleSet::parse(&text));
    }
    Ok(set)
}

/// Distinct emitted rules, for writing a filter list.
pub fn emitted_rules(verdicts: &[Verdict]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    verdicts
        .iter()
        .filter_map(|v| v.emitted_rule.as_ref().map(|r| r.to_string()))
        .filter(|r| seen.insert(r.clone()))
        .collect()
}


/// Train the three detectors from built training sets. The mixed model is
/// trained only when the mixed dataset has both classes.
pub fn train_models(sets: &TrainingSets, params: &crate::classifier::TrainParams) -> Result<Models, PipelineError> {
    let mixed = if sets.mixed.positives() > 0 && sets.mixed.positives() < sets.mixed.len() {
        Some(crate::classifier::train(&sets.mixed, params)?)
    } else {
        None
    };
    Ok(Models {
        tracking: crate::classifier::train(&sets.tracking, params)?,
        breakage: crate::classifier::train(&sets.breakage, params)?,
        mixed,
    })
}

impl Models {
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        crate::classifier::save_model(&self.tracking, &dir.join(TRACKING_MODEL_FILE))?;
        crate::classifier::save_model(&self.breakage, &dir.join(BREAKAGE_MODEL_FILE))?;
        if let Some(m) = &self.mixed {
            crate::classifier::save_model(m, &dir.join(MIXED_MODEL_FILE))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_arithmetic() {
        let rec = |d: VerdictDecision| VerdictRecord {
            target: String::new(),
            tracker_prob: 0.0,
            breakage_prob: 0.0,
            decision: d,
            rule: None,
        };
        let mut v = Vec::new();
        let mut l = Vec::new();
        for _ in 0..3 {
            v.push(rec(VerdictDecision::Tracker));
            l.push(true);
        }
        v.push(rec(VerdictDecision::Tracker));
        l.push(false);
        v.push(rec(VerdictDecision::NonTracker));
        l.push(true);
        for _ in 0..5 {
            v.push(rec(VerdictDecision::NonTracker));
            l.push(false);
        }
        let e = evaluate(&v, &l, None).unwrap();
        assert_eq!(e.metrics.precision, 0.75);
        assert_eq!(e.metrics.recall, 0.75);
        assert_eq!(e.metrics.accuracy, 0.8);
        assert!(matches!(evaluate(&[], &[], None), Err(PipelineError::EmptyEvaluation)));
    }

    #[test]
    fn verdict_tsv_round_trip() {
        let v = Verdict {
            target_id: "req-000".into(),
            target: TargetRef::request("|https://t.example/a.js"),
            tracker_prob: 0.9,
            breakage_prob: 0.1,
            decision: VerdictDecision::Tracker,
            emitted_rule: Some(parse_rule("||t.example/a.js").unwrap()),
            low_confidence: false,
        };
        let parsed = parse_verdicts(&verdicts_tsv(&[v.clone()])).unwrap();
        assert_eq!(parsed, vec![v.record()]);
    }

    #[test]
    fn sweep_picks_best() {
        let v = vec![
            VerdictRecord {
                target: "a".into(),
                tracker_prob: 0.7,
                breakage_prob: 0.2,
                decision: VerdictDecision::Tracker,
                rule: None,
            },
            VerdictRecord {
                target: "b".into(),
                tracker_prob: 0.3,
                breakage_prob: 0.2,
                decision: VerdictDecision::Tracker,
                rule: None,
            },
        ];
        let e = evaluate(&v, &[true, false], Some(&default_sweep_grid())).unwrap();
        assert_eq!(e.metrics.accuracy, 0.5);
        let best = e.best.unwrap();
        assert_eq!(best.metrics.accuracy, 1.0);
        assert_eq!(best.tracker_threshold, 0.3);
    }

    #[test]
    fn labels_parse() {
        let l = parse_labels("target\tlabel\nrequest:|a\t1\nrequest:|b\t0\n").unwrap();
        assert_eq!(l.get("request:|a"), Some(&true));
        assert!(parse_labels("x\tmaybe\n").is_err());
    }
}
