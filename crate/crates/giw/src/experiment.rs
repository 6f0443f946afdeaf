//! Experiment harness: plain-text configs, seeded runs over the synthetic
//! scenarios, and the artifact files (metrics, decision boundaries, score
//! histograms, consistency reports).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::GammaSpec;
use crate::net::Mlp;
use crate::oracle::consistency_report;
use crate::osvm::SplitResult;
use crate::synth::{apply_class_prior_shift, apply_label_noise, CaseId, GridVariant, Side, SupportSpec};
use crate::train::{
    metrics_to_csv, train_method, Method, SplitRule, TrainConfig, WeightRepr,
};

/// Data-generation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    GridAligned,
    GridCheckerboard,
    Case(CaseId),
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Scenario> {
        match s {
            "grid-aligned" => Some(Scenario::GridAligned),
            "grid-checkerboard" => Some(Scenario::GridCheckerboard),
            "case-i" => Some(Scenario::Case(CaseId::I)),
            "case-ii" => Some(Scenario::Case(CaseId::II)),
            "case-iii" => Some(Scenario::Case(CaseId::III)),
            "case-iv" => Some(Scenario::Case(CaseId::IV)),
            _ => None,
        }
    }

    pub fn spec(&self) -> SupportSpec {
        match self {
            Scenario::GridAligned => SupportSpec::grid_example(GridVariant::Aligned),
            Scenario::GridCheckerboard => SupportSpec::grid_example(GridVariant::Checkerboard),
            Scenario::Case(c) => SupportSpec::case_spec(*c),
        }
    }

    /// Validation data convention: the 4-point construction for the grid
    /// toys, two points per test box for the canonical cases.
    pub fn validation(&self, spec: &SupportSpec, seed: u64) -> Result<Dataset> {
        match self {
            Scenario::GridAligned | Scenario::GridCheckerboard => spec.toy_validation(seed),
            Scenario::Case(_) => spec.boxed_validation(2, seed),
        }
    }
}

/// Training-data corruption applied on top of the support shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    None,
    LabelNoise(f64),
    ClassPriorShift(f64),
}

/// Verification settings for the consistency checks.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub cases: Vec<CaseId>,
    pub classifiers: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            cases: CaseId::all().to_vec(),
            classifiers: 10,
            samples: 100_000,
            seed: 0,
        }
    }
}

/// Parsed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub corruption: Corruption,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub n_train: usize,
    pub n_eval: usize,
    pub boundary_resolution: usize,
    pub train: TrainConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::GridAligned,
            corruption: Corruption::None,
            methods: vec![Method::Giw],
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            n_train: 200,
            n_eval: 10_000,
            boundary_resolution: 100,
            train: TrainConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| config_err(line, format!("bad value {v:?} for {key}")))
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format with optional `[train]`,
    /// `[osvm]`, and `[verify]` sections. Errors carry the offending line
    /// number.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut saw_methods = false;
        let mut saw_seeds = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(config_err(lineno, "unterminated section header"));
                }
                section = line[1..line.len() - 1].trim().to_string();
                if !matches!(section.as_str(), "train" | "osvm" | "verify") {
                    return Err(config_err(lineno, format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(lineno, "expected key = value"))?;
            let key = key.trim();
            let value = value.trim();
            match (section.as_str(), key) {
                ("", "scenario") => {
                    cfg.scenario = Scenario::parse(value)
                        .ok_or_else(|| config_err(lineno, format!("unknown scenario {value:?}")))?;
                }
                ("", "corruption") => {
                    cfg.corruption = parse_corruption(lineno, value)?;
                }
                ("", "methods") => {
                    let mut methods = Vec::new();
                    for m in parse_list(value) {
                        methods.push(Method::parse(&m).ok_or_else(|| {
                            config_err(lineno, format!("unknown method {m:?}"))
                        })?);
                    }
                    cfg.methods = methods;
                    saw_methods = true;
                }
                ("", "seeds") => {
                    let mut seeds = Vec::new();
                    for s in parse_list(value) {
                        seeds.push(parse_num::<u64>(lineno, "seeds", &s)?);
                    }
                    cfg.seeds = seeds;
                    saw_seeds = true;
                }
                ("", "out_dir") => cfg.out_dir = PathBuf::from(value),
                ("", "n_train") => cfg.n_train = parse_num(lineno, key, value)?,
                ("", "n_eval") => cfg.n_eval = parse_num(lineno, key, value)?,
                ("", "boundary_resolution") => {
                    cfg.boundary_resolution = parse_num(lineno, key, value)?
                }
                ("train", "epochs") => cfg.train.epochs = parse_num(lineno, key, value)?,
                ("train", "init_scale") => cfg.train.init_scale = parse_num(lineno, key, value)?,
                ("train", "standardize_inputs") => {
                    cfg.train.standardize_inputs = parse_num(lineno, key, value)?
                }
                ("train", "batch_size") => cfg.train.batch_size = parse_num(lineno, key, value)?,
                ("train", "val_batch") => cfg.train.val_batch = parse_num(lineno, key, value)?,
                ("train", "pretrain_epochs") => {
                    cfg.train.pretrain_epochs = parse_num(lineno, key, value)?
                }
                ("train", "learning_rate") => {
                    cfg.train.learning_rate = parse_num(lineno, key, value)?
                }
                ("train", "lr_decay_factor") => {
                    cfg.train.lr_decay_factor = parse_num(lineno, key, value)?
                }
                ("train", "lr_decay_every") => {
                    cfg.train.lr_decay_every = parse_num(lineno, key, value)?
                }
                ("train", "weight_decay") => {
                    cfg.train.weight_decay = parse_num(lineno, key, value)?
                }
                ("train", "weight_bound") => {
                    cfg.train.weight_bound = parse_num(lineno, key, value)?
                }
                ("train", "normalize_weights") => {
                    cfg.train.normalize_weights = parse_num(lineno, key, value)?
                }
                ("train", "oversample") => cfg.train.oversample = parse_num(lineno, key, value)?,
                ("train", "rulsif_eta") => cfg.train.rulsif_eta = parse_num(lineno, key, value)?,
                ("train", "hidden") => {
                    let mut dims = Vec::new();
                    for d in parse_list(value) {
                        dims.push(parse_num::<usize>(lineno, "hidden", &d)?);
                    }
                    if dims.is_empty() {
                        return Err(config_err(lineno, "hidden needs at least one layer"));
                    }
                    cfg.train.hidden = dims;
                }
                ("train", "representation") => {
                    cfg.train.weight_repr = match value {
                        "loss" => WeightRepr::LossValue,
                        "feature" => WeightRepr::HiddenFeature,
                        other => {
                            return Err(config_err(
                                lineno,
                                format!("representation must be loss|feature, got {other:?}"),
                            ))
                        }
                    };
                }
                ("osvm", "nu") => cfg.train.osvm.nu = parse_num(lineno, key, value)?,
                ("osvm", "gamma") => {
                    cfg.train.osvm.gamma = if value == "median" {
                        GammaSpec::MedianSquared
                    } else {
                        GammaSpec::Fixed(parse_num(lineno, key, value)?)
                    };
                }
                ("osvm", "threshold") => {
                    cfg.train.osvm.rule = if value == "auto" {
                        SplitRule::Auto
                    } else {
                        SplitRule::Fixed(parse_num(lineno, key, value)?)
                    };
                }
                ("verify", "cases") => {
                    let mut cases = Vec::new();
                    for c in parse_list(value) {
                        cases.push(match c.as_str() {
                            "i" => CaseId::I,
                            "ii" => CaseId::II,
                            "iii" => CaseId::III,
                            "iv" => CaseId::IV,
                            other => {
                                return Err(config_err(
                                    lineno,
                                    format!("unknown case {other:?}"),
                                ))
                            }
                        });
                    }
                    cfg.verify.cases = cases;
                }
                ("verify", "classifiers") => {
                    cfg.verify.classifiers = parse_num(lineno, key, value)?
                }
                ("verify", "samples") => cfg.verify.samples = parse_num(lineno, key, value)?,
                ("verify", "seed") => cfg.verify.seed = parse_num(lineno, key, value)?,
                _ => {
                    return Err(config_err(
                        lineno,
                        format!("unknown key {key:?} in section {section:?}"),
                    ))
                }
            }
        }
        if saw_methods && cfg.methods.is_empty() {
            return Err(config_err(0, "methods list is empty"));
        }
        if saw_seeds && cfg.seeds.is_empty() {
            return Err(config_err(0, "seeds list is empty"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::domain("need at least one method and one seed".to_string()));
        }
        match self.corruption {
            Corruption::LabelNoise(r) if !(0.0..1.0).contains(&r) => {
                return Err(Error::domain(format!("label-noise rate {r} outside [0, 1)")));
            }
            Corruption::ClassPriorShift(rho) if rho < 1.0 => {
                return Err(Error::domain(format!("class-prior-shift rho {rho} must be >= 1")));
            }
            _ => {}
        }
        if self.boundary_resolution < 16 {
            return Err(Error::domain("boundary resolution must be >= 16".to_string()));
        }
        self.train.validate()
    }
}

fn parse_corruption(lineno: usize, value: &str) -> Result<Corruption> {
    if value == "none" {
        return Ok(Corruption::None);
    }
    let mut parts = value.split_whitespace();
    let kind = parts.next().unwrap_or("");
    let num = parts.next();
    match (kind, num) {
        ("label-noise", Some(r)) => Ok(Corruption::LabelNoise(parse_num(lineno, "label-noise", r)?)),
        ("class-prior-shift", Some(rho)) => Ok(Corruption::ClassPriorShift(parse_num(
            lineno,
            "class-prior-shift",
            rho,
        )?)),
        _ => Err(config_err(
            lineno,
            format!("corruption must be none | label-noise <rate> | class-prior-shift <rho>, got {value:?}"),
        )),
    }
}

const SEED_TRAIN_DATA: u64 = 0x44415452;
const SEED_VAL_DATA: u64 = 0x4441564c;
const SEED_EVAL_DATA: u64 = 0xe7a1;
const SEED_CORRUPT: u64 = 0x434f5252;

/// Writes `content` to `path` only when it differs from what is already
/// there, so completed runs leave no trace of being re-run.
fn write_if_changed(path: &Path, content: &str) -> Result<bool> {
    if let Ok(existing) = std::fs::read_to_string(path) {
        if existing == content {
            return Ok(false);
        }
    }
    std::fs::write(path, content)?;
    Ok(true)
}

/// Prediction grid over the test bounding box with 5% padding:
/// `resolution^2` rows of `x1,x2,predicted_class`.
pub fn boundary_grid(model: &Mlp, spec: &SupportSpec, resolution: usize) -> Result<String> {
    if resolution < 16 {
        return Err(Error::domain(format!(
            "boundary resolution must be >= 16, got {resolution}"
        )));
    }
    let (lo, hi) = spec.test_bounds();
    let pad = [(hi[0] - lo[0]) * 0.05, (hi[1] - lo[1]) * 0.05];
    let start = [lo[0] - pad[0], lo[1] - pad[1]];
    let stop = [hi[0] + pad[0], hi[1] + pad[1]];
    let step = [
        (stop[0] - start[0]) / (resolution - 1) as f64,
        (stop[1] - start[1]) / (resolution - 1) as f64,
    ];
    let mut points = ndarray::Array2::<f64>::zeros((resolution * resolution, 2));
    let mut r = 0;
    for i in 0..resolution {
        for j in 0..resolution {
            points[[r, 0]] = start[0] + i as f64 * step[0];
            points[[r, 1]] = start[1] + j as f64 * step[1];
            r += 1;
        }
    }
    let pred = model.predict(points.view())?;
    let mut out = String::from("x1,x2,predicted_class\n");
    for r in 0..resolution * resolution {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{}",
            points[[r, 0]],
            points[[r, 1]],
            pred[r]
        );
    }
    Ok(out)
}

/// Histogram of the rescaled validation scores (20 bins over [0, 1]) in
/// `bin_lo,bin_hi,count` rows.
pub fn score_histogram_csv(split: &SplitResult) -> String {
    const BINS: usize = 20;
    let mut counts = [0usize; BINS];
    for &s in &split.rescaled_scores {
        let b = ((s * BINS as f64) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (b, &c) in counts.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:.2},{:.2},{}",
            b as f64 / BINS as f64,
            (b + 1) as f64 / BINS as f64,
            c
        );
    }
    out
}

/// Per-run artifact paths.
fn artifact_paths(out_dir: &Path, method: Method, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    (
        out_dir.join(format!("metrics_{}_{}.csv", method.tag(), seed)),
        out_dir.join(format!("boundary_{}_{}.csv", method.tag(), seed)),
        out_dir.join(format!("scores_{}_{}.csv", method.tag(), seed)),
    )
}

fn read_metrics_accs(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut accs = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::domain(format!(
                "unexpected metrics row in {}: {line:?}",
                path.display()
            )));
        }
        accs.push(
            fields[3]
                .parse::<f64>()
                .map_err(|e| Error::domain(format!("bad accuracy in metrics: {e}")))?,
        );
    }
    Ok(accs)
}

fn mean_of_last(accs: &[f64], k: usize) -> f64 {
    let tail = &accs[accs.len().saturating_sub(k)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Outcome of one full `run` invocation.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Per method: mean and standard deviation over seeds of the
    /// last-10-epoch mean test accuracy.
    pub rows: Vec<(Method, f64, f64)>,
    pub files_written: usize,
}

/// Runs every configured (method, seed) pair, writing metrics, boundary
/// grids, score histograms (for the split-based method), and a summary.
/// Completed pairs are detected by their artifact files and skipped.
pub fn run(cfg: &ExperimentConfig, out_override: Option<&Path>, seed_offset: u64) -> Result<RunSummary> {
    cfg.validate()?;
    let out_dir = out_override.unwrap_or(&cfg.out_dir).to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    let spec = cfg.scenario.spec();
    let eval = spec.sample(Side::Test, cfg.n_eval, SEED_EVAL_DATA)?;
    let mut rows = Vec::new();
    let mut files_written = 0usize;

    for &method in &cfg.methods {
        let mut per_seed_acc = Vec::new();
        for &seed0 in &cfg.seeds {
            let seed = seed0 + seed_offset;
            let (metrics_path, boundary_path, scores_path) =
                artifact_paths(&out_dir, method, seed);
            let needs_scores = method == Method::Giw
                && !matches!(cfg.corruption, Corruption::ClassPriorShift(_));
            let complete = metrics_path.exists()
                && boundary_path.exists()
                && (!needs_scores || scores_path.exists());
            if complete {
                let accs = read_metrics_accs(&metrics_path)?;
                per_seed_acc.push(mean_of_last(&accs, 10));
                continue;
            }

            let dtr_raw = spec.sample(Side::Train, cfg.n_train, seed ^ SEED_TRAIN_DATA)?;
            let dtr = match cfg.corruption {
                Corruption::None => dtr_raw,
                Corruption::LabelNoise(rate) => apply_label_noise(
                    &dtr_raw,
                    rate,
                    spec.n_classes(),
                    seed ^ SEED_CORRUPT,
                )?,
                Corruption::ClassPriorShift(rho) => {
                    // half of the classes become minorities: the odd labels
                    let minority: Vec<usize> =
                        (0..spec.n_classes()).filter(|c| c % 2 == 1).collect();
                    apply_class_prior_shift(&dtr_raw, rho, &minority, seed ^ SEED_CORRUPT)?
                }
            };
            let dv = cfg.scenario.validation(&spec, seed ^ SEED_VAL_DATA)?;
            let train_cfg = match cfg.corruption {
                Corruption::ClassPriorShift(_) => cfg.train.class_prior_shift_mode(),
                _ => cfg.train.clone(),
            };
            let outcome = train_method(method, &dtr, &dv, &train_cfg, &eval, seed)?;

            if write_if_changed(&metrics_path, &metrics_to_csv(method, seed, &outcome.metrics))? {
                files_written += 1;
            }
            if write_if_changed(
                &boundary_path,
                &boundary_grid(&outcome.model, &spec, cfg.boundary_resolution)?,
            )? {
                files_written += 1;
            }
            if let Some(split) = &outcome.split {
                if write_if_changed(&scores_path, &score_histogram_csv(split))? {
                    files_written += 1;
                }
            }
            let accs: Vec<f64> = outcome.metrics.iter().map(|m| m.test_acc).collect();
            per_seed_acc.push(mean_of_last(&accs, 10));
        }
        let n = per_seed_acc.len() as f64;
        let mean = per_seed_acc.iter().sum::<f64>() / n;
        let var = per_seed_acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        rows.push((method, mean, var.sqrt()));
    }

    let mut summary = String::from("method,mean_last10_acc,std_last10_acc\n");
    for (method, mean, std) in &rows {
        let _ = writeln!(summary, "{},{:.6},{:.6}", method.tag(), mean, std);
    }
    if write_if_changed(&out_dir.join("summary.csv"), &summary)? {
        files_written += 1;
    }
    Ok(RunSummary {
        rows,
        files_written,
    })
}

/// Per-case verification outcome.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub case: CaseId,
    pub all_pass: bool,
    /// One line per classifier, already serialized.
    pub report_lines: Vec<String>,
}

/// Runs the consistency checks for each configured case over freshly drawn
/// random classifiers, writes one report file per case, and returns the
/// outcomes. A case passes only if every classifier satisfies its relations.
pub fn verify(
    cfg: &ExperimentConfig,
    out_override: Option<&Path>,
    seed_offset: u64,
) -> Result<Vec<VerifyOutcome>> {
    cfg.validate()?;
    let out_dir = out_override.unwrap_or(&cfg.out_dir).to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    let mut outcomes = Vec::new();
    for &case in &cfg.verify.cases {
        let spec = SupportSpec::case_spec(case);
        let mut lines = Vec::new();
        let mut all_pass = true;
        for k in 0..cfg.verify.classifiers {
            let net_seed = cfg.verify.seed + seed_offset + 1000 * k as u64;
            let f = Mlp::new_he(&[2, 32, 32, 2], net_seed)?;
            let report = consistency_report(&f, &spec, cfg.verify.samples, net_seed ^ 0x5245504f)?;
            all_pass &= report.pass();
            lines.push(report.to_json());
        }
        let path = out_dir.join(format!("report_case_{}.jsonl", case.tag()));
        write_if_changed(&path, &(lines.join("\n") + "\n"))?;
        outcomes.push(VerifyOutcome {
            case,
            all_pass,
            report_lines: lines,
        });
    }
    Ok(outcomes)
}

/// Human-readable verdict line for one verified case.
pub fn verify_line(outcome: &VerifyOutcome) -> String {
    let spec = SupportSpec::case_spec(outcome.case);
    let relation = match spec.support_case() {
        crate::synth::SupportCase::Equal | crate::synth::SupportCase::TrainWider => "J=R",
        _ => "J<R",
    };
    format!(
        "case ({}): {}: {}, J_G=R: {}",
        outcome.case.tag(),
        relation,
        if outcome.all_pass { "pass" } else { "FAIL" },
        if outcome.all_pass { "pass" } else { "FAIL" },
    )
}
