//! Flat `key = value` experiment configs.
//!
//! One assignment per line, `#` starts a comment, lists are comma
//! separated. Unknown keys are errors; known keys that the selected mode
//! does not use are accepted with a warning.

use std::path::PathBuf;
use std::str::FromStr;

use crate::attacks::{AttackConfig, EVAL_RESTARTS, EVAL_STEPS, STEP_FACTOR, TRAIN_STEPS};
use crate::ensemble::validate_simplex;
use crate::models::Architecture;
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Natural,
    Robust,
    Ensemble,
    Composite,
    CompositeEnsemble,
    AlphaSearch,
    Equivalence,
    Curve,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Natural => "natural",
            Mode::Robust => "robust",
            Mode::Ensemble => "ensemble",
            Mode::Composite => "composite",
            Mode::CompositeEnsemble => "composite_ensemble",
            Mode::AlphaSearch => "alpha_search",
            Mode::Equivalence => "equivalence",
            Mode::Curve => "curve",
        }
    }

    /// Keys this mode must be given.
    fn required(self) -> &'static [&'static str] {
        match self {
            Mode::Natural => &[],
            Mode::Robust => &["alpha"],
            Mode::Ensemble => &["K", "alpha"],
            Mode::Composite => &["eps_target", "alpha"],
            Mode::CompositeEnsemble => &["K", "eps_target", "alpha"],
            Mode::AlphaSearch => &["K", "eps_target", "alpha_grid"],
            Mode::Equivalence => &["K", "alpha", "eps_grid"],
            Mode::Curve => &["eps_grid", "checkpoint"],
        }
    }

    /// Mode-specific keys this mode reads when present.
    fn optional(self) -> &'static [&'static str] {
        match self {
            Mode::CompositeEnsemble => &["weights"],
            _ => &[],
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "natural" => Mode::Natural,
            "robust" => Mode::Robust,
            "ensemble" => Mode::Ensemble,
            "composite" => Mode::Composite,
            "composite_ensemble" => Mode::CompositeEnsemble,
            "alpha_search" => Mode::AlphaSearch,
            "equivalence" => Mode::Equivalence,
            "curve" => Mode::Curve,
            other => return Err(format!("unknown mode `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Gaussians {
        n: usize,
        dim: usize,
        margin: f64,
        sigma: f64,
        seed: u64,
    },
    Cifar10 {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DatasetSpec {
    /// Image data is clipped to `[0, 1]` under attack.
    pub fn is_image(&self) -> bool {
        !matches!(self, DatasetSpec::Gaussians { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dataset: DatasetSpec,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub train_steps: usize,
    pub eval_steps: usize,
    pub eval_restarts: usize,
    /// Attack step size is `step_factor * epsilon / steps`.
    pub step_factor: f64,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub eps_target: f64,
    pub eps_grid: Option<Vec<f64>>,
    pub alpha_grid: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    pub base_seed: u64,
    pub run_count: usize,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Minimum validation adversarial accuracy at `eps_target` for a run to
    /// be eligible as best run.
    pub adv_floor: f64,
    pub progress: bool,
}

/// Parsed config plus warnings about ignored keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

const KEYS: &[&str] = &[
    "mode",
    "dataset",
    "n",
    "dim",
    "margin",
    "sigma",
    "data_seed",
    "cifar_path",
    "idx_images",
    "idx_labels",
    "split",
    "hidden",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "train_steps",
    "eval_steps",
    "eval_restarts",
    "step_factor",
    "K",
    "alpha",
    "eps_target",
    "eps_grid",
    "alpha_grid",
    "weights",
    "base_seed",
    "run_count",
    "output_dir",
    "checkpoint",
    "adv_floor",
    "progress",
];

/// Keys whose use depends on the mode.
const MODE_KEYS: &[&str] = &["K", "alpha", "alpha_grid", "weights", "checkpoint"];

pub const DEFAULT_EPS_TARGET: f64 = 0.5;

struct Entry {
    line: usize,
    value: String,
}

struct Entries(Vec<(String, Entry)>);

impl Entries {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, e)| e)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|e| {
                e.value.parse::<T>().map_err(|err| Error::Parse {
                    line: e.line,
                    message: format!("`{key}`: cannot parse `{}`: {err}", e.value),
                })
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(|item| {
                        item.trim().parse::<T>().map_err(|err| Error::Parse {
                            line: e.line,
                            message: format!("`{key}`: cannot parse `{}`: {err}", item.trim()),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn line_of(&self, key: &str) -> usize {
        self.get(key).map_or(0, |e| e.line)
    }
}

fn invalid(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let mut entries = Entries(Vec::new());
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(invalid(line, format!("expected `key = value`, got `{content}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(invalid(line, format!("unknown key `{key}`")));
        }
        if entries.get(key).is_some() {
            return Err(invalid(line, format!("duplicate key `{key}`")));
        }
        if value.is_empty() {
            return Err(invalid(line, format!("`{key}` has no value")));
        }
        entries.0.push((
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        ));
    }

    let mode: Mode = entries
        .parse("mode")?
        .ok_or_else(|| invalid(0, "missing required key `mode`"))?;
    for key in mode.required() {
        if entries.get(key).is_none() {
            return Err(invalid(
                0,
                format!("mode `{}` requires `{key}`", mode.name()),
            ));
        }
    }
    let mut warnings = Vec::new();
    for key in MODE_KEYS {
        if entries.get(key).is_some() && !mode.required().contains(key) && !mode.optional().contains(key) {
            warnings.push(format!(
                "line {}: `{key}` is not used by mode `{}` and is ignored",
                entries.line_of(key),
                mode.name()
            ));
        }
    }

    let kind = entries.or("dataset", "gaussians".to_string())?;
    let dataset = match kind.as_str() {
        "gaussians" => DatasetSpec::Gaussians {
            n: entries.or("n", 2000)?,
            dim: entries.or("dim", 20)?,
            margin: entries.or("margin", 4.0)?,
            sigma: entries.or("sigma", 1.0)?,
            seed: entries.or("data_seed", 0)?,
        },
        "cifar10" => DatasetSpec::Cifar10 {
            path: entries
                .parse("cifar_path")?
                .ok_or_else(|| invalid(entries.line_of("dataset"), "dataset `cifar10` requires `cifar_path`"))?,
        },
        "idx" => DatasetSpec::Idx {
            images: entries
                .parse("idx_images")?
                .ok_or_else(|| invalid(entries.line_of("dataset"), "dataset `idx` requires `idx_images`"))?,
            labels: entries
                .parse("idx_labels")?
                .ok_or_else(|| invalid(entries.line_of("dataset"), "dataset `idx` requires `idx_labels`"))?,
        },
        other => return Err(invalid(entries.line_of("dataset"), format!("unknown dataset `{other}`"))),
    };

    let split = match entries.list::<f64>("split")? {
        None => [0.6, 0.2, 0.2],
        Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
        Some(v) => {
            return Err(invalid(
                entries.line_of("split"),
                format!("`split` needs 3 fractions, got {}", v.len()),
            ))
        }
    };
    if split.iter().any(|f| !(*f >= 0.0)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(entries.line_of("split"), "`split` fractions must be >= 0 and sum to 1"));
    }

    let used = |key: &str| mode.required().contains(&key) || mode.optional().contains(&key);
    let config = ExperimentConfig {
        mode,
        dataset,
        split,
        hidden: entries.list("hidden")?.unwrap_or_else(|| vec![32]),
        epochs: entries.or("epochs", 30)?,
        batch_size: entries.or("batch_size", 64)?,
        lr: entries.or("lr", 0.05)?,
        momentum: entries.or("momentum", 0.9)?,
        train_steps: entries.or("train_steps", TRAIN_STEPS)?,
        eval_steps: entries.or("eval_steps", EVAL_STEPS)?,
        eval_restarts: entries.or("eval_restarts", EVAL_RESTARTS)?,
        step_factor: entries.or("step_factor", STEP_FACTOR)?,
        k: if used("K") { entries.parse("K")? } else { None },
        alpha: if used("alpha") { entries.parse("alpha")? } else { None },
        eps_target: entries.or("eps_target", DEFAULT_EPS_TARGET)?,
        eps_grid: entries.list("eps_grid")?,
        alpha_grid: if used("alpha_grid") { entries.list("alpha_grid")? } else { None },
        weights: if used("weights") { entries.list("weights")? } else { None },
        base_seed: entries.or("base_seed", 0)?,
        run_count: entries.or("run_count", 1)?,
        output_dir: entries.parse("output_dir")?,
        checkpoint: if used("checkpoint") { entries.parse("checkpoint")? } else { None },
        adv_floor: entries.or("adv_floor", 0.0)?,
        progress: entries.or("progress", false)?,
    };
    validate(&config, &entries)?;
    Ok(ParsedConfig { config, warnings })
}

fn validate(c: &ExperimentConfig, e: &Entries) -> Result<()> {
    let positive = |key: &str, v: usize| -> Result<()> {
        if v == 0 {
            return Err(invalid(e.line_of(key), format!("`{key}` must be positive")));
        }
        Ok(())
    };
    positive("batch_size", c.batch_size)?;
    positive("train_steps", c.train_steps)?;
    positive("eval_steps", c.eval_steps)?;
    positive("eval_restarts", c.eval_restarts)?;
    positive("run_count", c.run_count)?;
    if c.hidden.is_empty() || c.hidden.contains(&0) {
        return Err(invalid(e.line_of("hidden"), "`hidden` widths must be positive"));
    }
    if !(c.lr > 0.0) {
        return Err(invalid(e.line_of("lr"), "`lr` must be positive"));
    }
    if !(0.0..1.0).contains(&c.momentum) {
        return Err(invalid(e.line_of("momentum"), "`momentum` must lie in [0, 1)"));
    }
    if !(c.step_factor > 0.0) {
        return Err(invalid(e.line_of("step_factor"), "`step_factor` must be positive"));
    }
    if !(c.eps_target > 0.0) {
        return Err(invalid(e.line_of("eps_target"), "`eps_target` must be positive"));
    }
    if !(0.0..=1.0).contains(&c.adv_floor) {
        return Err(invalid(e.line_of("adv_floor"), "`adv_floor` must lie in [0, 1]"));
    }
    if let Some(k) = c.k {
        positive("K", k)?;
    }
    if let Some(a) = c.alpha {
        let needs_positive = matches!(c.mode, Mode::Robust | Mode::Ensemble | Mode::Equivalence);
        if !(a >= 0.0) || (needs_positive && a == 0.0) {
            return Err(invalid(e.line_of("alpha"), format!("`alpha` = {a} is out of range")));
        }
        if matches!(c.mode, Mode::Composite | Mode::CompositeEnsemble) && !(a < c.eps_target) {
            return Err(invalid(
                e.line_of("alpha"),
                "composite `alpha` (natural backbone) must be below `eps_target`",
            ));
        }
    }
    if let DatasetSpec::Gaussians { n, dim, margin, sigma, .. } = c.dataset {
        if n == 0 || n % 2 != 0 || dim < 2 || !(margin > 0.0) || !(sigma > 0.0) {
            return Err(invalid(e.line_of("n"), "gaussian dataset needs even n, dim >= 2, positive margin and sigma"));
        }
    }
    if let Some(grid) = &c.eps_grid {
        let line = e.line_of("eps_grid");
        if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid(line, "`eps_grid` must be non-negative and strictly increasing"));
        }
        match c.mode {
            Mode::Curve if grid[0] != 0.0 => {
                return Err(invalid(line, "curve `eps_grid` must start at 0"));
            }
            Mode::Equivalence if grid[0] == 0.0 => {
                return Err(invalid(line, "equivalence `eps_grid` lists training radii and must be positive"));
            }
            _ => {}
        }
    }
    if let Some(grid) = &c.alpha_grid {
        if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|&a| !(a > 0.0 && a <= c.eps_target)) {
            return Err(invalid(
                e.line_of("alpha_grid"),
                "`alpha_grid` must be strictly increasing within (0, eps_target]",
            ));
        }
    }
    if let Some(w) = &c.weights {
        let line = e.line_of("weights");
        validate_simplex(w).map_err(|err| invalid(line, err.to_string()))?;
        if Some(w.len()) != c.k {
            return Err(invalid(line, "`weights` must have K entries"));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Result<Architecture> {
        Architecture::new(input_dim, self.hidden.clone(), num_classes)
    }

    /// Training settings at radius `alpha`.
    pub fn train_config(&self, alpha: f64, seed: u64) -> TrainConfig {
        let mut attack = AttackConfig {
            epsilon: alpha,
            steps: self.train_steps,
            step_size: self.step_factor * alpha / self.train_steps as f64,
            random_start: true,
            seed: crate::seed::split(seed, 0xA7),
            restarts: 1,
            input_bounds: None,
        };
        if self.dataset.is_image() {
            attack.input_bounds = Some((0.0, 1.0));
        }
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            train_attack: attack,
            data_seed: crate::seed::split(seed, 0xDA),
            report_progress: self.progress,
        }
    }

    /// Evaluation attack schedule at `eps_target`.
    pub fn eval_attack(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            epsilon: self.eps_target,
            steps: self.eval_steps,
            step_size: self.step_factor * self.eps_target / self.eval_steps as f64,
            random_start: true,
            seed,
            restarts: self.eval_restarts,
            input_bounds: self.dataset.is_image().then_some((0.0, 1.0)),
        }
    }

    /// Radii at which reports are produced.
    pub fn report_grid(&self) -> Vec<f64> {
        match (&self.eps_grid, self.mode) {
            (Some(g), m) if m != Mode::Equivalence && g[0] == 0.0 => g.clone(),
            _ => crate::evaluation::default_grid(self.eps_target, crate::evaluation::DEFAULT_GRID_POINTS),
        }
    }
}
