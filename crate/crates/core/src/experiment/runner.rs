//! Executes a parsed config: trains, evaluates and writes outputs.
//!
//! Output layout under the target directory:
//!
//! ```text
//! summary.json
//! run_<i>/report.csv     model_id,eps,acc,loss,auc_flag
//! run_<i>/run.json       reports, seeds, attack config, checksums
//! run_<i>/<model>.ckpt
//! ```
//!
//! Everything is computed before anything is written, and files go to a
//! staging directory that is renamed into place at the end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::checkpoint::{encode, load_checkpoint, Checkpoint};
use super::config::{DatasetSpec, ExperimentConfig, Mode};
use crate::attacks::AttackConfig;
use crate::data::{gen_two_gaussians, load_cifar10_binary, load_idx, split, Dataset, Splits};
use crate::ensemble::{composite_ensemble, uniform_ensemble, SimplexWeights};
use crate::evaluation::{
    adversarial_accuracy, equivalence_epsilon, evaluate_report, min_alpha_search, natural_accuracy, AlphaSearch,
    AlphaSearchResult, EquivalenceResult, EvalReport,
};
use crate::models::{make_composite, Architecture, CompositeModel, ModelParams};
use crate::predictor::Predictor;
use crate::training::{member_seed, train_at, train_composite_head, train_ensemble_members, train_robust, train_standard};
use crate::{seed, Error, Result};

/// CLI subcommands and the modes each accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Curve,
    AlphaSearch,
    Equivalence,
}

impl Command {
    pub fn accepts(self, mode: Mode) -> bool {
        match self {
            Command::Train => matches!(
                mode,
                Mode::Natural | Mode::Robust | Mode::Ensemble | Mode::Composite | Mode::CompositeEnsemble
            ),
            Command::Eval | Command::Curve => mode == Mode::Curve,
            Command::AlphaSearch => mode == Mode::AlphaSearch,
            Command::Equivalence => mode == Mode::Equivalence,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Curve => "curve",
            Command::AlphaSearch => "alpha-search",
            Command::Equivalence => "equivalence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointRecord {
    pub model_id: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    /// Model the run is judged by.
    pub primary_model: String,
    pub val_natural_acc: f64,
    pub val_adversarial_acc: f64,
    pub eval_attack: String,
    pub reports: Vec<EvalReport>,
    pub checkpoints: Vec<CheckpointRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_search: Option<AlphaSearchResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<String>,
    pub split_sizes: [usize; 3],
    pub base_seed: u64,
    pub eps_target: f64,
    pub eps_grid: Vec<f64>,
    pub adv_floor: f64,
    /// Highest validation natural accuracy among runs whose validation
    /// adversarial accuracy at `eps_target` reaches `adv_floor`.
    pub best_run: usize,
    /// False when no run reached the floor; `best_run` then has the highest
    /// validation adversarial accuracy.
    pub best_run_meets_floor: bool,
    pub runs: Vec<RunRecord>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Gaussians {
            n,
            dim,
            margin,
            sigma,
            seed,
        } => gen_two_gaussians(*n, *dim, *margin, *sigma, *seed),
        DatasetSpec::Cifar10 { path } => load_cifar10_binary(path),
        DatasetSpec::Idx { images, labels } => load_idx(images, labels),
    }
}

/// Identifier carrying the radius and init seed of a trained model.
pub fn model_id(prefix: &str, m: &ModelParams) -> String {
    format!("{prefix}-a{}-w{:016x}", m.train_eps, m.init_seed)
}

fn composite_id(prefix: &str, c: &CompositeModel) -> String {
    format!(
        "{prefix}-e{}-a{}-w{:016x}-{:016x}-h{:016x}",
        c.robust().train_eps,
        c.natural().train_eps,
        c.robust().init_seed,
        c.natural().init_seed,
        c.head_seed
    )
}

/// Runs `config` under `command` and writes outputs to `out`. Returns the
/// summary that was written as `summary.json`.
pub fn run_experiment(config: &ExperimentConfig, command: Command, out: &Path) -> Result<RunSummary> {
    if !command.accepts(config.mode) {
        return Err(Error::Validation(format!(
            "`{}` cannot run a config with mode `{}`",
            command.name(),
            config.mode.name()
        )));
    }
    let (summary, files) = compute(config, command)?;
    write_outputs(out, &files)?;
    Ok(summary)
}

/// Output files as `(relative path, bytes)`.
pub type Files = Vec<(PathBuf, Vec<u8>)>;

/// Everything `run_experiment` would write.
pub fn compute(config: &ExperimentConfig, command: Command) -> Result<(RunSummary, Files)> {
    let data = load_dataset(&config.dataset)?;
    let splits = split(&data, config.split, seed::split(config.base_seed, 0))?;
    let loaded = match &config.checkpoint {
        Some(path) if config.mode == Mode::Curve => Some(load_checkpoint(path)?),
        _ => None,
    };
    let grid = match command {
        Command::Eval => vec![0.0, config.eps_target],
        _ => config.report_grid(),
    };
    let ctx = Context {
        cfg: config,
        splits: &splits,
        grid: &grid,
        loaded: loaded.as_ref(),
    };
    let outputs = (0..config.run_count)
        .into_par_iter()
        .map(|r| ctx.run(r))
        .collect::<Result<Vec<_>>>()?;

    let mut files = Vec::new();
    let mut runs = Vec::with_capacity(outputs.len());
    for out in outputs {
        let dir = PathBuf::from(format!("run_{}", out.record.index));
        files.push((dir.join("report.csv"), out.csv.into_bytes()));
        files.push((dir.join("run.json"), to_json(&out.record)?));
        for (name, bytes) in out.files {
            files.push((dir.join(name), bytes));
        }
        runs.push(out.record);
    }
    let (best_run, best_run_meets_floor) = best_run(&runs, config.adv_floor);
    let summary = RunSummary {
        mode: config.mode.name().to_string(),
        dataset: data.name.clone(),
        dataset_sha256: data.source_checksum.clone(),
        split_sizes: [splits.train.len(), splits.val.len(), splits.test.len()],
        base_seed: config.base_seed,
        eps_target: config.eps_target,
        eps_grid: grid,
        adv_floor: config.adv_floor,
        best_run,
        best_run_meets_floor,
        runs,
    };
    files.push((PathBuf::from("summary.json"), to_json(&summary)?));
    Ok((summary, files))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Index of the best run and whether it meets the floor. Ties go to the
/// lower index.
pub fn best_run(runs: &[RunRecord], adv_floor: f64) -> (usize, bool) {
    let mut best: Option<&RunRecord> = None;
    for r in runs.iter().filter(|r| r.val_adversarial_acc >= adv_floor) {
        if best.is_none_or(|b| r.val_natural_acc > b.val_natural_acc) {
            best = Some(r);
        }
    }
    if let Some(b) = best {
        return (b.index, true);
    }
    let mut fallback = &runs[0];
    for r in runs {
        if r.val_adversarial_acc > fallback.val_adversarial_acc {
            fallback = r;
        }
    }
    (fallback.index, false)
}

fn write_outputs(out: &Path, files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    if out.exists()
        && !out.join("summary.json").is_file() {
            return Err(Error::Validation(format!(
                "{} exists and is not a previous experiment output",
                out.display()
            )));
        }
    let name = out
        .file_name()
        .ok_or_else(|| Error::Validation(format!("bad output path {}", out.display())))?
        .to_string_lossy()
        .into_owned();
    let staging = out.with_file_name(format!(".{name}.staging"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let result = (|| {
        for (rel, bytes) in files {
            let path = staging.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        if out.exists() {
            fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
        }
        fs::rename(&staging, out).map_err(|e| Error::io(out, e))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    splits: &'a Splits,
    grid: &'a [f64],
    loaded: Option<&'a Checkpoint>,
}

struct RunOutput {
    record: RunRecord,
    csv: String,
    files: Vec<(String, Vec<u8>)>,
}

/// Accumulates one run's reports and checkpoints.
struct Run<'a> {
    ctx: &'a Context<'a>,
    attack: AttackConfig,
    record: RunRecord,
    csv: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Run<'_> {
    fn report(&mut self, id: &str, pred: &dyn Predictor, seeds: Vec<u64>) -> Result<()> {
        let cfg = self.ctx.cfg;
        let rep = evaluate_report(id, pred, &self.ctx.splits.test, self.ctx.grid, cfg.eps_target, &self.attack, seeds)?;
        for &(eps, acc, loss) in &rep.adversarial {
            let flag = u8::from(eps <= cfg.eps_target);
            writeln!(self.csv, "{id},{eps:.6},{acc:.6},{loss:.6},{flag}").expect("string write");
        }
        self.record.reports.push(rep);
        Ok(())
    }

    fn checkpoint(&mut self, id: &str, ckpt: Checkpoint) {
        let bytes = encode(&ckpt);
        let file = format!("{id}.ckpt");
        self.record.checkpoints.push(CheckpointRecord {
            model_id: id.to_string(),
            file: file.clone(),
            sha256: hex::encode(&bytes[bytes.len() - 32..]),
        });
        self.files.push((file, bytes));
    }

    /// Scores the run on validation data with `pred`.
    fn primary(&mut self, id: &str, pred: &dyn Predictor) -> Result<()> {
        let val = &self.ctx.splits.val;
        let data = if val.is_empty() { &self.ctx.splits.test } else { val };
        self.record.primary_model = id.to_string();
        self.record.val_natural_acc = natural_accuracy(pred, data)?;
        self.record.val_adversarial_acc = adversarial_accuracy(pred, data, self.ctx.cfg.eps_target, &self.attack)?;
        Ok(())
    }

    fn finish(self) -> RunOutput {
        RunOutput {
            record: self.record,
            csv: self.csv,
            files: self.files,
        }
    }
}

impl Context<'_> {
    fn arch(&self) -> Result<Architecture> {
        let train = &self.splits.train;
        self.cfg.architecture(train.dim(), train.num_classes)
    }

    fn train_composite(&self, arch: &Architecture, s: u64) -> Result<CompositeModel> {
        let cfg = self.cfg;
        let train = &self.splits.train;
        let alpha = cfg.alpha.expect("validated");
        let robust = train_robust(train, arch, &cfg.train_config(cfg.eps_target, seed::split(s, 11)), seed::split(s, 1))?;
        let natural = train_at(train, arch, &cfg.train_config(alpha, seed::split(s, 12)), seed::split(s, 2))?;
        let composite = make_composite(robust, natural, seed::split(s, 3))?;
        train_composite_head(&composite, train, &cfg.train_config(cfg.eps_target, seed::split(s, 13)))
    }

    fn run(&self, index: usize) -> Result<RunOutput> {
        let cfg = self.cfg;
        let run_seed = seed::split(cfg.base_seed, index as u64 + 1);
        let attack = cfg.eval_attack(seed::split(run_seed, 0xE7));
        let mut run = Run {
            ctx: self,
            record: RunRecord {
                index,
                seed: run_seed,
                primary_model: String::new(),
                val_natural_acc: 0.0,
                val_adversarial_acc: 0.0,
                eval_attack: attack.id(),
                reports: Vec::new(),
                checkpoints: Vec::new(),
                alpha_search: None,
                equivalence: None,
            },
            attack,
            csv: String::from("model_id,eps,acc,loss,auc_flag\n"),
            files: Vec::new(),
        };
        let train = &self.splits.train;
        let tcfg = |alpha: f64| cfg.train_config(alpha, run_seed);
        match cfg.mode {
            Mode::Natural => {
                let m = train_standard(train, &self.arch()?, &tcfg(0.0), seed::split(run_seed, 1))?;
                let id = model_id("natural", &m);
                run.report(&id, &m, vec![m.init_seed])?;
                run.primary(&id, &m)?;
                run.checkpoint(&id, m.into());
            }
            Mode::Robust => {
                let alpha = cfg.alpha.expect("validated");
                let m = train_robust(train, &self.arch()?, &tcfg(alpha), seed::split(run_seed, 1))?;
                let id = model_id("robust", &m);
                run.report(&id, &m, vec![m.init_seed])?;
                run.primary(&id, &m)?;
                run.checkpoint(&id, m.into());
            }
            Mode::Ensemble => {
                let (k, alpha) = (cfg.k.expect("validated"), cfg.alpha.expect("validated"));
                let members = train_ensemble_members(train, &self.arch()?, &tcfg(alpha), run_seed, k)?;
                let seeds: Vec<u64> = members.iter().map(|m| m.init_seed).collect();
                let id = format!("ensemble-k{k}-a{alpha}-b{run_seed:016x}");
                let ens = uniform_ensemble(members)?;
                run.report(&id, &ens, seeds)?;
                run.primary(&id, &ens)?;
                for m in ens.members() {
                    run.checkpoint(&model_id("member", m), m.clone().into());
                }
            }
            Mode::Composite => {
                let c = self.train_composite(&self.arch()?, run_seed)?;
                let id = composite_id("composite", &c);
                let seeds = vec![c.robust().init_seed, c.natural().init_seed, c.head_seed];
                run.report(&id, &c, seeds)?;
                run.primary(&id, &c)?;
                run.checkpoint(&id, c.into());
            }
            Mode::CompositeEnsemble => {
                let k = cfg.k.expect("validated");
                let arch = self.arch()?;
                let composites = (1..=k)
                    .into_par_iter()
                    .map(|j| self.train_composite(&arch, member_seed(run_seed, j)))
                    .collect::<Result<Vec<_>>>()?;
                let weights = match &cfg.weights {
                    Some(w) => w.clone(),
                    None => SimplexWeights::uniform(k)?.as_slice().to_vec(),
                };
                let seeds = composites.iter().map(|c| c.head_seed).collect();
                let ids: Vec<String> = composites.iter().map(|c| composite_id("composite", c)).collect();
                let ens = composite_ensemble(composites, &weights)?;
                let id = format!("composite-ensemble-k{k}-b{run_seed:016x}");
                run.report(&id, &ens, seeds)?;
                run.primary(&id, &ens)?;
                for (c, cid) in ens.members().iter().zip(&ids) {
                    run.checkpoint(cid, c.clone().into());
                }
            }
            Mode::AlphaSearch => {
                let arch = self.arch()?;
                let k = cfg.k.expect("validated");
                let reference = train_robust(train, &arch, &tcfg(cfg.eps_target), seed::split(run_seed, 1))?;
                let search = AlphaSearch {
                    train,
                    val: &self.splits.val,
                    arch: &arch,
                    k,
                    eps_target: cfg.eps_target,
                    alpha_grid: cfg.alpha_grid.as_deref().expect("validated"),
                    train_cfg: &tcfg(cfg.eps_target),
                    attack_cfg: &run.attack,
                    base_seed: run_seed,
                };
                self.splits.val.require_nonempty("alpha search validation")?;
                let result = min_alpha_search(&search, &reference)?;
                let ref_id = model_id("reference", &reference);
                run.report(&ref_id, &reference, vec![reference.init_seed])?;
                let members = result.selected_members.clone();
                let seeds = members.iter().map(|m| m.init_seed).collect();
                let id = format!("ensemble-k{k}-a{}-b{run_seed:016x}", result.alpha_star);
                let ens = uniform_ensemble(members)?;
                run.report(&id, &ens, seeds)?;
                run.primary(&id, &ens)?;
                run.checkpoint(&ref_id, reference.into());
                for m in ens.members() {
                    run.checkpoint(&model_id("member", m), m.clone().into());
                }
                run.record.alpha_search = Some(result);
            }
            Mode::Equivalence => {
                let arch = self.arch()?;
                let (k, alpha) = (cfg.k.expect("validated"), cfg.alpha.expect("validated"));
                let members = train_ensemble_members(train, &arch, &tcfg(alpha), run_seed, k)?;
                let family = cfg
                    .eps_grid
                    .as_deref()
                    .expect("validated")
                    .par_iter()
                    .map(|&eps| train_robust(train, &arch, &tcfg(eps), seed::split(run_seed, 1)))
                    .collect::<Result<Vec<_>>>()?;
                let seeds = members.iter().map(|m| m.init_seed).collect();
                let ens = uniform_ensemble(members)?;
                let id = format!("ensemble-k{k}-a{alpha}-b{run_seed:016x}");
                let result = equivalence_epsilon(&ens, &family, &self.splits.test, &run.attack)?;
                run.report(&id, &ens, seeds)?;
                run.primary(&id, &ens)?;
                for m in ens.members() {
                    run.checkpoint(&model_id("member", m), m.clone().into());
                }
                for m in family {
                    run.checkpoint(&model_id("single", &m), m.into());
                }
                run.record.equivalence = Some(result);
            }
            Mode::Curve => match self.loaded.expect("checkpoint loaded") {
                Checkpoint::Model(m) => {
                    let id = model_id(if m.train_eps > 0.0 { "robust" } else { "natural" }, m);
                    run.report(&id, m, vec![m.init_seed])?;
                    run.primary(&id, m)?;
                }
                Checkpoint::Composite(c) => {
                    let id = composite_id("composite", c);
                    let seeds = vec![c.robust().init_seed, c.natural().init_seed, c.head_seed];
                    run.report(&id, c, seeds)?;
                    run.primary(&id, c)?;
                }
            },
        }
        Ok(run.finish())
    }
}
