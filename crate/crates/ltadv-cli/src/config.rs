//! Experiment configuration: a flat INI-like grammar.
//!
//! The format is line-oriented: `[section]` headers, `key = value` pairs,
//! `#` or `;` comments, blank lines ignored. Lists are comma-separated.
//! Unknown keys are rejected with the offending key and section named, and
//! every constraint violation quotes the invariant it breaks. The fully
//! resolved configuration (defaults filled in) can be re-rendered with
//! [`ExperimentConfig::render_resolved`] and is written into each run
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use ltadv_core::attacks::{AttackConfig, AttackLoss};
use ltadv_core::losses::LossConfig;
use ltadv_core::models::{Architecture, ModelSpec};
use ltadv_core::theory::{LogisticSettings, TheoryParams};
use ltadv_core::trainer::{LrSchedule, PhaseConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Theory,
    Logistic,
    TrainTeacher,
    TrainStudent,
    Compare,
    Eval,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Theory => "theory",
            Mode::Logistic => "logistic",
            Mode::TrainTeacher => "train-teacher",
            Mode::TrainStudent => "train-student",
            Mode::Compare => "compare",
            Mode::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Ok(match s {
            "theory" => Mode::Theory,
            "logistic" => Mode::Logistic,
            "train-teacher" => Mode::TrainTeacher,
            "train-student" => Mode::TrainStudent,
            "compare" => Mode::Compare,
            "eval" => Mode::Eval,
            other => bail!("unknown mode '{other}'"),
        })
    }
}

/// Raw parsed INI document.
struct Ini {
    /// section -> key -> value; the unnamed leading section is "".
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    fn parse(text: &str) -> Result<Ini> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        sections.entry(current.clone()).or_default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find(['#', ';']) {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {}: unterminated section header", lineno + 1))?
                    .trim()
                    .to_string();
                current = name;
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value', got '{line}'", lineno + 1))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                bail!("line {}: empty key", lineno + 1);
            }
            let section = sections.entry(current.clone()).or_default();
            if section.insert(key.clone(), value).is_some() {
                bail!("line {}: duplicate key '{key}' in section [{current}]", lineno + 1);
            }
        }
        Ok(Ini { sections })
    }
}

/// Typed view over one section that tracks which keys were consumed so that
/// leftovers can be reported as unknown.
struct Section<'a> {
    name: &'a str,
    entries: Option<&'a BTreeMap<String, String>>,
    consumed: Vec<String>,
}

impl<'a> Section<'a> {
    fn get(&mut self, key: &str) -> Option<&'a str> {
        self.consumed.push(key.to_string());
        self.entries.and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<T>().map_err(|e| {
                anyhow!("[{}] {key} = {v}: {e}", self.name)
            }),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("[{}] {key} = {v}: {e}", self.name)),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse::<T>()
                        .map_err(|e| anyhow!("[{}] {key}: bad element '{p}': {e}", self.name))
                })
                .collect(),
        }
    }

    fn finish(self, reader: &mut IniReader<'_>) {
        reader
            .consumed
            .entry(self.name.to_string())
            .or_default()
            .extend(self.consumed);
    }
}

struct IniReader<'a> {
    ini: &'a Ini,
    consumed: BTreeMap<String, Vec<String>>,
}

impl<'a> IniReader<'a> {
    fn new(ini: &'a Ini) -> Self {
        IniReader {
            ini,
            consumed: BTreeMap::new(),
        }
    }

    fn section(&mut self, name: &'static str) -> Section<'a> {
        Section {
            name,
            entries: self.ini.sections.get(name),
            consumed: Vec::new(),
        }
    }

    /// Every key in every section must have been consumed.
    fn reject_unknown(&self) -> Result<()> {
        for (section, entries) in &self.ini.sections {
            let known = self.consumed.get(section);
            for key in entries.keys() {
                let ok = known.map(|v| v.iter().any(|k| k == key)).unwrap_or(false);
                if !ok {
                    let loc = if section.is_empty() {
                        "top level".to_string()
                    } else {
                        format!("section [{section}]")
                    };
                    bail!("unknown key '{key}' in {loc}");
                }
            }
            if known.is_none() && !entries.is_empty() {
                bail!("unknown section [{section}]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TheoryJob {
    pub grid: Vec<TheoryParams>,
    pub mc_samples: usize,
}

#[derive(Debug, Clone)]
pub struct LogisticJob {
    pub irs: Vec<f64>,
    pub eta: f64,
    pub epsilon: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub settings: LogisticSettings,
}

/// How the labeled data is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    GaussianBinary,
    GaussianMulticlass,
    Cifar10 { train_paths: Vec<PathBuf>, test_path: PathBuf },
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub eta: f64,
    pub n_per_class: usize,
    pub imbalance_ratio: f64,
    pub test_per_class: usize,
}

#[derive(Debug, Clone)]
pub struct TrainJob {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    /// Checkpoint of a pre-trained teacher (train-student mode).
    pub teacher_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CompareJob {
    pub dataset: DatasetConfig,
    /// Base configuration; methods derive from it.
    pub base: TrainConfig,
    pub methods: Vec<String>,
    /// Alphas swept for the distillation method.
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalJob {
    pub dataset: DatasetConfig,
    pub checkpoint: PathBuf,
    pub attack: AttackConfig,
    pub tail_group: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum Job {
    Theory(TheoryJob),
    Logistic(LogisticJob),
    Train(TrainJob),
    Compare(CompareJob),
    Eval(EvalJob),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub out_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub job: Job,
    resolved: String,
}

impl ExperimentConfig {
    /// Parse, validate, and resolve a config document for `mode`.
    pub fn parse(mode: Mode, text: &str) -> Result<ExperimentConfig> {
        let ini = Ini::parse(text)?;
        let mut reader = IniReader::new(&ini);

        // Top level: optional mode echo, output dir, seeds.
        let mut top = reader.section("");
        if let Some(m) = top.get("mode") {
            let declared = Mode::parse(m)?;
            if declared != mode {
                bail!(
                    "config declares mode = {} but the {} subcommand was invoked",
                    declared.as_str(),
                    mode.as_str()
                );
            }
        }
        let out_dir = top.get("out").map(PathBuf::from);
        let seeds: Vec<u64> = top.list("seeds", vec![0])?;
        if seeds.is_empty() {
            bail!("top level: 'seeds' must not be empty");
        }
        top.finish(&mut reader);

        let job = match mode {
            Mode::Theory => Job::Theory(parse_theory(&mut reader)?),
            Mode::Logistic => Job::Logistic(parse_logistic(&mut reader)?),
            Mode::TrainTeacher | Mode::TrainStudent => {
                Job::Train(parse_train(&mut reader, mode, seeds[0])?)
            }
            Mode::Compare => Job::Compare(parse_compare(&mut reader, seeds[0])?),
            Mode::Eval => Job::Eval(parse_eval(&mut reader)?),
        };
        reader.reject_unknown()?;

        let mut cfg = ExperimentConfig {
            mode,
            out_dir,
            seeds,
            job,
            resolved: String::new(),
        };
        cfg.resolved = cfg.render_resolved();
        Ok(cfg)
    }

    /// The resolved configuration with all defaults filled in.
    pub fn render_resolved(&self) -> String {
        if !self.resolved.is_empty() {
            return self.resolved.clone();
        }
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "out = {}", dir.display());
        }
        let _ = writeln!(
            s,
            "seeds = {}",
            self.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        match &self.job {
            Job::Theory(t) => {
                let _ = writeln!(s, "\n[theory]");
                let _ = writeln!(s, "mc_samples = {}", t.mc_samples);
                let _ = writeln!(s, "# one grid point per line: r, n, eta, epsilon");
                for p in &t.grid {
                    let _ = writeln!(s, "# point: {} {} {} {}", p.r, p.n, p.eta, p.epsilon);
                }
            }
            Job::Logistic(l) => {
                let _ = writeln!(s, "\n[logistic]");
                let _ = writeln!(
                    s,
                    "irs = {}",
                    l.irs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
                );
                let _ = writeln!(s, "eta = {}", l.eta);
                let _ = writeln!(s, "epsilon = {}", l.epsilon);
                let _ = writeln!(s, "train_size = {}", l.train_size);
                let _ = writeln!(s, "test_size = {}", l.test_size);
                let _ = writeln!(s, "max_epochs = {}", l.settings.max_epochs);
                let _ = writeln!(s, "lr = {}", l.settings.learning_rate);
                let _ = writeln!(s, "grad_tolerance = {}", l.settings.grad_tolerance);
            }
            Job::Train(t) => {
                render_dataset(&mut s, &t.dataset);
                render_train(&mut s, &t.train, t.dataset.imbalance_ratio);
                if let Some(p) = &t.teacher_checkpoint {
                    let _ = writeln!(s, "\n[student_inputs]");
                    let _ = writeln!(s, "teacher_checkpoint = {}", p.display());
                }
            }
            Job::Compare(c) => {
                render_dataset(&mut s, &c.dataset);
                render_train(&mut s, &c.base, c.dataset.imbalance_ratio);
                let _ = writeln!(s, "\n[compare]");
                let _ = writeln!(s, "methods = {}", c.methods.join(","));
                let _ = writeln!(
                    s,
                    "alphas = {}",
                    c.alphas.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
                );
            }
            Job::Eval(e) => {
                render_dataset(&mut s, &e.dataset);
                let _ = writeln!(s, "\n[eval]");
                let _ = writeln!(s, "checkpoint = {}", e.checkpoint.display());
                render_attack(&mut s, "eval_attack", &e.attack);
                let _ = writeln!(
                    s,
                    "tail_group = {}",
                    e.tail_group.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
                );
            }
        }
        s
    }
}

fn render_dataset(s: &mut String, d: &DatasetConfig) {
    let _ = writeln!(s, "\n[dataset]");
    let kind = match &d.kind {
        DatasetKind::GaussianBinary => "gaussian-binary",
        DatasetKind::GaussianMulticlass => "gaussian-multiclass",
        DatasetKind::Cifar10 { .. } => "cifar10",
    };
    let _ = writeln!(s, "kind = {kind}");
    if let DatasetKind::Cifar10 { train_paths, test_path } = &d.kind {
        let joined = train_paths
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "train_path = {joined}");
        let _ = writeln!(s, "test_path = {}", test_path.display());
    } else {
        let _ = writeln!(s, "classes = {}", d.classes);
        let _ = writeln!(s, "dim = {}", d.dim);
        let _ = writeln!(s, "eta = {}", d.eta);
        let _ = writeln!(s, "n_per_class = {}", d.n_per_class);
        let _ = writeln!(s, "test_per_class = {}", d.test_per_class);
    }
    let _ = writeln!(s, "imbalance_ratio = {}", d.imbalance_ratio);
}

fn render_attack(s: &mut String, name: &str, a: &AttackConfig) {
    let _ = writeln!(s, "\n[{name}]");
    let _ = writeln!(s, "epsilon = {}", a.epsilon);
    let _ = writeln!(s, "step_size = {}", a.step_size);
    let _ = writeln!(s, "steps = {}", a.steps);
    let _ = writeln!(s, "random_start = {}", a.random_start);
    match a.clamp {
        Some((lo, hi)) => {
            let _ = writeln!(s, "clamp = {lo},{hi}");
        }
        None => {
            let _ = writeln!(s, "clamp = none");
        }
    }
    let loss = match &a.loss {
        AttackLoss::CrossEntropy => "ce".to_string(),
        AttackLoss::BalancedSoftmax { tau, .. } => format!("bsl  # tau = {tau}"),
    };
    let _ = writeln!(s, "loss = {loss}");
}

fn render_train(s: &mut String, t: &TrainConfig, ir: f64) {
    let _ = writeln!(s, "\n[model]");
    match &t.model.arch {
        Architecture::Linear => {
            let _ = writeln!(s, "arch = linear");
        }
        Architecture::Mlp { hidden } => {
            let _ = writeln!(s, "arch = mlp");
            let _ = writeln!(
                s,
                "hidden = {}",
                hidden.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            );
        }
        Architecture::TinyConv { channels } => {
            let _ = writeln!(s, "arch = tinyconv");
            let _ = writeln!(s, "channels = {},{}", channels[0], channels[1]);
        }
    }
    render_attack(s, "attack", &t.train_attack);
    render_attack(s, "eval_attack", &t.eval_attack);
    let _ = writeln!(s, "\n[loss]");
    let _ = writeln!(s, "tau = {}", t.loss.tau);
    let _ = writeln!(s, "alpha = {}", t.loss.alpha);
    let _ = writeln!(s, "kd_temperature = {}", t.loss.kd_temperature);
    let _ = writeln!(s, "# kd_direction = forward KL(teacher || student), teacher detached");
    let _ = writeln!(s, "\n[teacher]");
    let _ = writeln!(s, "epochs = {}", t.teacher.epochs);
    let _ = writeln!(s, "batch_size = {}", t.teacher.batch_size);
    let _ = writeln!(s, "lr = {}", t.teacher.learning_rate);
    let _ = writeln!(s, "\n[student]");
    let _ = writeln!(s, "epochs = {}", t.student.epochs);
    let _ = writeln!(s, "batch_size = {}", t.student.batch_size);
    let _ = writeln!(s, "lr = {}", t.student.learning_rate);
    let _ = writeln!(s, "\n[optimizer]");
    let _ = writeln!(s, "momentum = {}", t.momentum);
    let _ = writeln!(s, "weight_decay = {}", t.weight_decay);
    let _ = writeln!(s, "\n[schedule]");
    let _ = writeln!(
        s,
        "milestones = {}",
        t.schedule.milestones.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(s, "factor = {}", t.schedule.factor);
    let _ = writeln!(s, "\n[run]");
    let _ = writeln!(s, "gamma = {}", t.gamma);
    if ir > 0.0 {
        let _ = writeln!(s, "# gamma/IR = {}", t.gamma / ir);
    }
    let _ = writeln!(
        s,
        "tail_group = {}",
        t.tail_group.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    );
}

fn parse_theory(reader: &mut IniReader<'_>) -> Result<TheoryJob> {
    let mut sec = reader.section("theory");
    let rs: Vec<f64> = sec.list("r", vec![1.0, 2.0, 5.0, 10.0, 50.0])?;
    let ns: Vec<usize> = sec.list("n", vec![2, 8])?;
    let etas: Vec<f64> = sec.list("eta", vec![1.0, 2.0])?;
    let eps_list: Option<Vec<f64>> = match sec.get("epsilon") {
        Some(v) => Some(
            v.split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("[theory] epsilon: {e}")))
                .collect::<Result<Vec<f64>>>()?,
        ),
        None => None,
    };
    let eps_fracs: Vec<f64> = sec.list("eps_over_eta", vec![0.0, 0.25, 0.5, 0.75])?;
    let mc_samples: usize = sec.parse("mc_samples", 1_000_000)?;
    sec.finish(reader);

    let mut grid = Vec::new();
    for &r in &rs {
        for &n in &ns {
            for &eta in &etas {
                let eps_values: Vec<f64> = match &eps_list {
                    Some(list) => list.clone(),
                    None => eps_fracs.iter().map(|f| f * eta).collect(),
                };
                for eps in eps_values {
                    let p = TheoryParams::new(r, n, eta, eps).map_err(|e| {
                        anyhow!("[theory] invalid grid point (r={r}, n={n}, eta={eta}, epsilon={eps}): {e}; the invariant is 'r >= 1 and 0 <= epsilon < eta'")
                    })?;
                    grid.push(p);
                }
            }
        }
    }
    if grid.is_empty() {
        bail!("[theory] grid is empty");
    }
    Ok(TheoryJob { grid, mc_samples })
}

fn parse_logistic(reader: &mut IniReader<'_>) -> Result<LogisticJob> {
    let mut sec = reader.section("logistic");
    let irs: Vec<f64> = sec.list("irs", vec![1.0, 2.0, 5.0])?;
    let eta: f64 = sec.parse("eta", 1.0)?;
    let epsilon: f64 = sec.parse("epsilon", 0.5)?;
    let train_size: usize = sec.parse("train_size", 10_000)?;
    let test_size: usize = sec.parse("test_size", 10_000)?;
    let defaults = LogisticSettings::default();
    let settings = LogisticSettings {
        learning_rate: sec.parse("lr", defaults.learning_rate)?,
        max_epochs: sec.parse("max_epochs", defaults.max_epochs)?,
        grad_tolerance: sec.parse("grad_tolerance", defaults.grad_tolerance)?,
        n_dim: sec.parse("dim", defaults.n_dim)?,
    };
    sec.finish(reader);
    if !(epsilon >= 0.0 && epsilon < eta) {
        bail!("[logistic] epsilon = {epsilon} with eta = {eta}: the invariant is 'epsilon < eta'");
    }
    if irs.iter().any(|&r| r < 1.0) {
        bail!("[logistic] irs: the invariant is 'imbalance ratio >= 1'");
    }
    Ok(LogisticJob {
        irs,
        eta,
        epsilon,
        train_size,
        test_size,
        settings,
    })
}

fn parse_dataset(reader: &mut IniReader<'_>) -> Result<DatasetConfig> {
    let mut sec = reader.section("dataset");
    let kind_str = sec.get("kind").unwrap_or("gaussian-multiclass").to_string();
    let classes: usize = sec.parse("classes", 10)?;
    let dim: usize = sec.parse("dim", 16)?;
    let eta: f64 = sec.parse("eta", 1.2)?;
    let n_per_class: usize = sec.parse("n_per_class", 1000)?;
    let imbalance_ratio: f64 = sec.parse("imbalance_ratio", 10.0)?;
    let test_per_class: usize = sec.parse("test_per_class", 200)?;
    let train_path = sec.get("train_path").map(|s| s.to_string());
    let test_path = sec.get("test_path").map(|s| s.to_string());
    sec.finish(reader);

    let kind = match kind_str.as_str() {
        "gaussian-binary" => DatasetKind::GaussianBinary,
        "gaussian-multiclass" => DatasetKind::GaussianMulticlass,
        "cifar10" => {
            let train = train_path
                .ok_or_else(|| anyhow!("[dataset] cifar10 requires 'train_path'"))?;
            let test = test_path.ok_or_else(|| anyhow!("[dataset] cifar10 requires 'test_path'"))?;
            let train_paths: Vec<PathBuf> =
                train.split(',').map(|p| PathBuf::from(p.trim())).collect();
            for p in train_paths.iter().chain(std::iter::once(&PathBuf::from(test.clone()))) {
                if !p.exists() {
                    bail!("[dataset] referenced file does not exist: {}", p.display());
                }
            }
            DatasetKind::Cifar10 {
                train_paths,
                test_path: PathBuf::from(test),
            }
        }
        other => bail!("[dataset] unknown kind '{other}'"),
    };
    if !(imbalance_ratio >= 1.0) {
        bail!("[dataset] imbalance_ratio = {imbalance_ratio}: the invariant is 'r >= 1'");
    }
    if kind == DatasetKind::GaussianBinary && classes != 2 {
        bail!("[dataset] gaussian-binary fixes classes = 2");
    }
    Ok(DatasetConfig {
        kind,
        classes,
        dim,
        eta,
        n_per_class,
        imbalance_ratio,
        test_per_class,
    })
}

fn parse_attack(
    reader: &mut IniReader<'_>,
    section: &'static str,
    defaults: &AttackConfig,
    classes: usize,
) -> Result<AttackConfig> {
    let mut sec = reader.section(section);
    let epsilon: f64 = sec.parse("epsilon", defaults.epsilon)?;
    let steps: usize = sec.parse("steps", defaults.steps)?;
    let step_size: f64 = sec.parse("step_size", AttackConfig::standard_step(epsilon, steps))?;
    let random_start: bool = sec.parse("random_start", defaults.random_start)?;
    let clamp = match sec.get("clamp") {
        None => defaults.clamp,
        Some("none") | Some("") => None,
        Some(v) => {
            let parts: Vec<&str> = v.split(',').map(|p| p.trim()).collect();
            if parts.len() != 2 {
                bail!("[{section}] clamp must be 'lo,hi' or 'none'");
            }
            Some((
                parts[0].parse::<f64>().map_err(|e| anyhow!("[{section}] clamp: {e}"))?,
                parts[1].parse::<f64>().map_err(|e| anyhow!("[{section}] clamp: {e}"))?,
            ))
        }
    };
    let loss = match sec.get("loss") {
        None => defaults.loss.clone(),
        Some("ce") => AttackLoss::CrossEntropy,
        Some("bsl") => AttackLoss::BalancedSoftmax {
            counts: vec![1; classes],
            tau: 1.0,
        },
        Some(other) => bail!("[{section}] unknown loss '{other}' (expected ce or bsl)"),
    };
    sec.finish(reader);
    let cfg = AttackConfig {
        epsilon,
        step_size,
        steps,
        random_start,
        clamp,
        loss,
    };
    cfg.validate()
        .map_err(|e| anyhow!("[{section}] {e}"))?;
    Ok(cfg)
}

fn parse_model(reader: &mut IniReader<'_>, dataset: &DatasetConfig) -> Result<ModelSpec> {
    let mut sec = reader.section("model");
    let arch = sec.get("arch").unwrap_or("mlp").to_string();
    let hidden: Vec<usize> = sec.list("hidden", vec![64, 64])?;
    let channels: Vec<usize> = sec.list("channels", vec![8, 16])?;
    sec.finish(reader);

    let image = matches!(dataset.kind, DatasetKind::Cifar10 { .. });
    let spec = match arch.as_str() {
        "linear" => {
            if image {
                bail!("[model] linear architecture needs dense inputs");
            }
            ModelSpec::linear(dataset.dim, dataset.classes)
        }
        "mlp" => {
            if image {
                bail!("[model] mlp architecture needs dense inputs");
            }
            ModelSpec::mlp(dataset.dim, hidden, dataset.classes)
        }
        "tinyconv" => {
            if !image {
                bail!("[model] tinyconv needs image data (cifar10)");
            }
            if channels.len() != 2 {
                bail!("[model] channels must list exactly 2 values");
            }
            ModelSpec::tiny_conv([3, 32, 32], [channels[0], channels[1]], 10)
        }
        other => bail!("[model] unknown arch '{other}'"),
    };
    spec.validate().map_err(|e| anyhow!("[model] {e}"))?;
    Ok(spec)
}

fn parse_train_common(
    reader: &mut IniReader<'_>,
    dataset: &DatasetConfig,
    seed: u64,
) -> Result<TrainConfig> {
    let model = parse_model(reader, dataset)?;
    let image = matches!(dataset.kind, DatasetKind::Cifar10 { .. });
    let default_eps = if image { 8.0 / 255.0 } else { 0.1 };
    let attack_defaults = AttackConfig {
        epsilon: default_eps,
        step_size: AttackConfig::standard_step(default_eps, 10),
        steps: 10,
        random_start: true,
        clamp: if image { Some((0.0, 1.0)) } else { None },
        loss: AttackLoss::CrossEntropy,
    };
    let train_attack = parse_attack(reader, "attack", &attack_defaults, dataset.classes)?;
    let eval_defaults = AttackConfig {
        steps: 20,
        step_size: AttackConfig::standard_step(train_attack.epsilon, 20),
        ..train_attack.clone()
    };
    let eval_attack = parse_attack(reader, "eval_attack", &eval_defaults, dataset.classes)?;

    let mut sec = reader.section("loss");
    let loss = LossConfig {
        tau: sec.parse("tau", 1.0)?,
        alpha: sec.parse("alpha", 5.0)?,
        kd_temperature: sec.parse("kd_temperature", 1.0)?,
    };
    sec.finish(reader);
    loss.validate().map_err(|e| anyhow!("[loss] {e}"))?;

    let mut sec = reader.section("teacher");
    let teacher = PhaseConfig {
        epochs: sec.parse("epochs", 30)?,
        batch_size: sec.parse("batch_size", 32)?,
        learning_rate: sec.parse("lr", 0.1)?,
    };
    sec.finish(reader);

    let mut sec = reader.section("student");
    let student = PhaseConfig {
        epochs: sec.parse("epochs", 50)?,
        batch_size: sec.parse("batch_size", 128)?,
        learning_rate: sec.parse("lr", 0.1)?,
    };
    sec.finish(reader);

    let mut sec = reader.section("optimizer");
    let momentum: f64 = sec.parse("momentum", 0.9)?;
    let weight_decay: f64 = sec.parse("weight_decay", 5e-4)?;
    sec.finish(reader);

    let mut sec = reader.section("schedule");
    let schedule = LrSchedule {
        milestones: sec.list("milestones", vec![0.5, 0.75])?,
        factor: sec.parse("factor", 0.1)?,
    };
    sec.finish(reader);

    let mut sec = reader.section("run");
    let gamma: f64 = sec.parse("gamma", dataset.imbalance_ratio / 2.0)?;
    let tail_group: Vec<usize> = sec.list(
        "tail_group",
        TrainConfig::default_tail_group(dataset.classes),
    )?;
    sec.finish(reader);

    if !(gamma > 1.0) {
        bail!("[run] gamma = {gamma}: the invariant is 'gamma > 1'");
    }

    let cfg = TrainConfig {
        label: String::from("run"),
        model,
        teacher,
        student,
        momentum,
        weight_decay,
        train_attack,
        eval_attack,
        loss,
        gamma,
        schedule,
        tail_group,
        seed,
    };
    cfg.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(cfg)
}

fn parse_train(reader: &mut IniReader<'_>, mode: Mode, seed: u64) -> Result<TrainJob> {
    let dataset = parse_dataset(reader)?;
    let train = parse_train_common(reader, &dataset, seed)?;
    let mut sec = reader.section("student_inputs");
    let teacher_checkpoint = sec.parse_opt::<String>("teacher_checkpoint")?.map(PathBuf::from);
    sec.finish(reader);
    if let Some(p) = &teacher_checkpoint {
        if !p.exists() {
            bail!("[student_inputs] referenced file does not exist: {}", p.display());
        }
    }
    if mode == Mode::TrainStudent && train.loss.alpha > 0.0 && teacher_checkpoint.is_none() {
        bail!(
            "[student_inputs] train-student with alpha > 0 requires 'teacher_checkpoint' \
             (train one with the train-teacher subcommand, or set alpha = 0)"
        );
    }
    Ok(TrainJob {
        dataset,
        train,
        teacher_checkpoint,
    })
}

fn parse_compare(reader: &mut IniReader<'_>, seed: u64) -> Result<CompareJob> {
    let dataset = parse_dataset(reader)?;
    let base = parse_train_common(reader, &dataset, seed)?;
    let mut sec = reader.section("compare");
    let methods: Vec<String> = sec
        .get("methods")
        .unwrap_or("pgd-at,at-bsl,ours")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let alphas: Vec<f64> = sec.list("alphas", vec![base.loss.alpha])?;
    sec.finish(reader);
    for m in &methods {
        if !matches!(m.as_str(), "pgd-at" | "at-bsl" | "ours") {
            bail!("[compare] unknown method '{m}' (expected pgd-at, at-bsl, ours)");
        }
    }
    if methods.is_empty() {
        bail!("[compare] methods must not be empty");
    }
    if alphas.iter().any(|&a| a <= 0.0) {
        bail!("[compare] alphas: the invariant is 'alpha > 0' (alpha = 0 is the at-bsl method)");
    }
    Ok(CompareJob {
        dataset,
        base,
        methods,
        alphas,
    })
}

fn parse_eval(reader: &mut IniReader<'_>) -> Result<EvalJob> {
    let dataset = parse_dataset(reader)?;
    let mut sec = reader.section("eval");
    let checkpoint = sec
        .get("checkpoint")
        .map(PathBuf::from)
        .ok_or_else(|| anyhow!("[eval] 'checkpoint' is required"))?;
    let tail_group: Vec<usize> = sec.list(
        "tail_group",
        TrainConfig::default_tail_group(dataset.classes),
    )?;
    sec.finish(reader);
    if !checkpoint.exists() {
        bail!("[eval] referenced file does not exist: {}", checkpoint.display());
    }
    let image = matches!(dataset.kind, DatasetKind::Cifar10 { .. });
    let default_eps = if image { 8.0 / 255.0 } else { 0.1 };
    let defaults = AttackConfig {
        epsilon: default_eps,
        step_size: AttackConfig::standard_step(default_eps, 20),
        steps: 20,
        random_start: true,
        clamp: if image { Some((0.0, 1.0)) } else { None },
        loss: AttackLoss::CrossEntropy,
    };
    let attack = parse_attack(reader, "eval_attack", &defaults, dataset.classes)?;
    Ok(EvalJob {
        dataset,
        checkpoint,
        attack,
        tail_group,
    })
}

/// Load a config file, or synthesize an all-defaults document when no path
/// is given.
pub fn load(mode: Mode, path: Option<&Path>) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))?,
        None => String::new(),
    };
    ExperimentConfig::parse(mode, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_theory_config_fills_defaults() {
        let cfg = ExperimentConfig::parse(
            Mode::Theory,
            "[theory]\nr = 2\nn = 2\neta = 1\nepsilon = 0.5\n",
        )
        .unwrap();
        match &cfg.job {
            Job::Theory(t) => {
                assert_eq!(t.grid.len(), 1);
                assert_eq!(t.mc_samples, 1_000_000);
            }
            _ => panic!("wrong job"),
        }
        assert!(cfg.render_resolved().contains("mc_samples = 1000000"));
    }

    #[test]
    fn epsilon_at_least_eta_is_rejected_with_the_invariant_named() {
        let err = ExperimentConfig::parse(
            Mode::Theory,
            "[theory]\nr = 2\nn = 2\neta = 1\nepsilon = 1.5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("epsilon < eta"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name_and_section() {
        let err = ExperimentConfig::parse(
            Mode::Theory,
            "[theory]\nr = 2\nwibble = 3\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("wibble") && msg.contains("theory"), "{msg}");
    }

    #[test]
    fn gamma_at_most_one_is_rejected() {
        let err = ExperimentConfig::parse(
            Mode::TrainTeacher,
            "[run]\ngamma = 0.5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("gamma > 1"), "{err}");
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let err = ExperimentConfig::parse(Mode::Theory, "mode = compare\n").unwrap_err();
        assert!(err.to_string().contains("mode"), "{err}");
    }

    #[test]
    fn train_defaults_resolve_and_echo() {
        let cfg = ExperimentConfig::parse(Mode::TrainTeacher, "").unwrap();
        let echo = cfg.render_resolved();
        assert!(echo.contains("epochs = 30"), "{echo}");
        assert!(echo.contains("gamma = 5"), "{echo}");
        assert!(echo.contains("# gamma/IR = 0.5"), "{echo}");
        match &cfg.job {
            Job::Train(t) => {
                assert_eq!(t.train.teacher.epochs, 30);
                assert_eq!(t.train.student.batch_size, 128);
                assert_eq!(t.train.eval_attack.steps, 20);
            }
            _ => panic!("wrong job"),
        }
    }

    #[test]
    fn student_with_alpha_needs_a_teacher_checkpoint() {
        let err = ExperimentConfig::parse(Mode::TrainStudent, "").unwrap_err();
        assert!(err.to_string().contains("teacher_checkpoint"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = ExperimentConfig::parse(Mode::Theory, "[theory]\nr = 1\nr = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}
