use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pure_core::data::{
    filter_min_interactions, load_presplit, read_ratings, read_split, split_leave_n_out,
    split_random, write_split, DatasetSplit, Interactions, RngStream, StreamLabel,
};
use pure_core::eval::{evaluate, MetricsReport};
use pure_core::model::{load_checkpoint, save_checkpoint, ModelKind};
use pure_core::objective::{ceil_tolerant, sample_size_ratio, unlabeled_sample_size, HyperParams};
use pure_core::theory::{
    equilibrium_certificate, equilibrium_instance, generator_objective_decomposition,
    objective_value, optimal_discriminator, random_instance, EQUILIBRIUM_TOLERANCE,
};
use pure_core::training::{
    pretrain_handoff, train_gmf_with, train_item_pop, train_pure_with, EpochRecord, EpochView,
    GmfMode, TrainedModel,
};
use rand::Rng;

use crate::config::{RunConfig, SplitSpec};

pub const SPLIT_DIR: &str = "split";
pub const TRAIN_LOG: &str = "train.log";
pub const PRETRAIN_LOG: &str = "pretrain.log";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Dataset statistics printed by `ingest`.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub num_ratings: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub num_positives: usize,
    /// Raw ratings over `M * N`.
    pub rating_density: f64,
    /// Positives over `M * N`.
    pub positive_density: f64,
    pub train_positives: usize,
    pub test_positives: usize,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "ratings          {}", self.num_ratings)?;
        writeln!(f, "users            {}", self.num_users)?;
        writeln!(f, "items            {}", self.num_items)?;
        writeln!(f, "positives        {}", self.num_positives)?;
        writeln!(f, "rating density   {:.2}%", 100.0 * self.rating_density)?;
        writeln!(f, "positive density {:.2}%", 100.0 * self.positive_density)?;
        writeln!(f, "train positives  {}", self.train_positives)?;
        write!(f, "test positives   {}", self.test_positives)
    }
}

/// Loads the dataset named by `cfg` and splits it.
pub fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    if cfg.split == SplitSpec::Presplit {
        let test = cfg
            .test_path
            .as_ref()
            .context("split `presplit` needs `test_path`")?;
        if cfg.min_interactions > 0 {
            log::warn!("min_interactions is ignored for pre-split data");
        }
        return Ok(load_presplit(
            &cfg.data_path,
            test,
            cfg.format,
            cfg.positive_threshold,
        )?);
    }
    let ratings = read_ratings(&cfg.data_path, cfg.format)?;
    let mut data = pure_core::data::binarize(&ratings, cfg.positive_threshold)?;
    if cfg.min_interactions > 0 {
        data = filter_min_interactions(&data, cfg.min_interactions)?;
    }
    split_interactions(&data, cfg)
}

fn split_interactions(data: &Interactions, cfg: &RunConfig) -> Result<DatasetSplit> {
    let mut rng = RngStream::new(cfg.seed, StreamLabel::Split);
    Ok(match cfg.split {
        SplitSpec::Random { train_fraction } => split_random(data, train_fraction, &mut rng)?,
        SplitSpec::LeaveNOut { n } => split_leave_n_out(data, n, &mut rng)?,
        SplitSpec::Presplit => unreachable!("handled by load_split"),
    })
}

/// `ingest`: loads, splits and writes the split plus the resolved config.
pub fn ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let (num_ratings, data_users, data_items) = if cfg.split == SplitSpec::Presplit {
        let train = read_ratings(&cfg.data_path, cfg.format)?;
        let test = read_ratings(cfg.test_path.as_ref().expect("validated"), cfg.format)?;
        let users: std::collections::HashSet<&str> =
            train.iter().chain(&test).map(|r| r.user.as_str()).collect();
        let items: std::collections::HashSet<&str> =
            train.iter().chain(&test).map(|r| r.item.as_str()).collect();
        (train.len() + test.len(), users.len(), items.len())
    } else {
        let ratings = read_ratings(&cfg.data_path, cfg.format)?;
        let users: std::collections::HashSet<&str> =
            ratings.iter().map(|r| r.user.as_str()).collect();
        let items: std::collections::HashSet<&str> =
            ratings.iter().map(|r| r.item.as_str()).collect();
        (ratings.len(), users.len(), items.len())
    };
    let split = load_split(cfg)?;
    cfg.write_resolved(&cfg.output_dir)?;
    write_split(cfg.output_dir.join(SPLIT_DIR), &split)?;
    let cells = (split.train.num_users() * split.train.num_items()) as f64;
    let num_positives = split.train.num_positives() + split.test.num_positives();
    Ok(IngestSummary {
        num_ratings,
        num_users: split.train.num_users(),
        num_items: split.train.num_items(),
        num_positives,
        rating_density: num_ratings as f64 / (data_users * data_items) as f64,
        positive_density: num_positives as f64 / cells,
        train_positives: split.train.num_positives(),
        test_positives: split.test.num_positives(),
    })
}

fn create_log(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", EpochRecord::LOG_HEADER)?;
    Ok(w)
}

/// Trains the configured model on `split.train`. Epoch lines go to `log`,
/// pretraining lines to `pretrain_log`.
pub fn fit(
    cfg: &RunConfig,
    split: &DatasetSplit,
    train_log: Option<&mut dyn Write>,
    pretrain_log: Option<&mut dyn Write>,
) -> Result<TrainedModel> {
    let train = &split.train;
    let hp = &cfg.hyper;
    let every = cfg.validate_every;
    let mut sink = train_log;
    let mut hook = |v: &EpochView<'_>| -> pure_core::Result<()> {
        if let Some(w) = sink.as_mut() {
            writeln!(w, "{}", v.record.log_line())
                .map_err(|e| pure_core::Error::Precondition(format!("writing log: {e}")))?;
        }
        if every > 0 && v.record.epoch.is_multiple_of(every) {
            let r = evaluate(v.discriminator, split, cfg.protocol, cfg.seed)?;
            log::info!(
                "{} epoch {}: P@5 {:.4} NDCG@5 {:.4} MAP {:.4} MRR {:.4}",
                v.kind,
                v.record.epoch,
                r.p(5),
                r.ndcg(5),
                r.map,
                r.mrr
            );
        }
        Ok(())
    };
    let model = match cfg.model {
        ModelKind::ItemPop => train_item_pop(train)?,
        ModelKind::PnGmf => train_gmf_with(train, hp, GmfMode::Pn, cfg.seed, &mut hook)?,
        ModelKind::PuGmf => train_gmf_with(train, hp, GmfMode::Pu, cfg.seed, &mut hook)?,
        ModelKind::Pure => {
            let pretrained = if cfg.pretrain {
                let pre_hp = HyperParams {
                    epochs: cfg.pretrain_epochs,
                    pi_p: cfg.pretrain_pi_p,
                    ..hp.clone()
                };
                let mut pre_sink = pretrain_log;
                let mut pre_hook = |v: &EpochView<'_>| -> pure_core::Result<()> {
                    if let Some(w) = pre_sink.as_mut() {
                        writeln!(w, "{}", v.record.log_line()).map_err(|e| {
                            pure_core::Error::Precondition(format!("writing log: {e}"))
                        })?;
                    }
                    Ok(())
                };
                let pu = train_gmf_with(train, &pre_hp, GmfMode::Pu, cfg.seed, &mut pre_hook)?;
                Some(pretrain_handoff(&pu)?)
            } else {
                None
            };
            train_pure_with(train, hp, pretrained, cfg.seed, &mut hook)?
        }
    };
    Ok(model)
}

/// `train`: writes the resolved config, the split, the logs and the checkpoint.
pub fn train(cfg: &RunConfig) -> Result<TrainedModel> {
    let out = &cfg.output_dir;
    cfg.write_resolved(out)?;
    let split = load_split(cfg)?;
    write_split(out.join(SPLIT_DIR), &split)?;
    let mut log = create_log(&out.join(TRAIN_LOG))?;
    let mut pre_log = if cfg.model == ModelKind::Pure && cfg.pretrain {
        Some(create_log(&out.join(PRETRAIN_LOG))?)
    } else {
        None
    };
    let model = fit(
        cfg,
        &split,
        Some(&mut log),
        pre_log.as_mut().map(|w| w as &mut dyn Write),
    )?;
    log.flush()?;
    if let Some(w) = pre_log.as_mut() {
        w.flush()?;
    }
    let ckpt = model.to_checkpoint(split.train.num_users(), split.train.num_items());
    save_checkpoint(out.join(CHECKPOINT_FILE), &ckpt)?;
    Ok(model)
}

/// `evaluate`: scores a checkpoint on a stored split and writes the metric files.
pub fn evaluate_run(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    split_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let out = &cfg.output_dir;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let split_path = split_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(SPLIT_DIR));
    let ckpt = load_checkpoint(&ckpt_path)?;
    let split = read_split(&split_path)?;
    if ckpt.num_users != split.train.num_users() || ckpt.num_items != split.train.num_items() {
        bail!(
            "checkpoint {} is {}x{} but split {} is {}x{}",
            ckpt_path.display(),
            ckpt.num_users,
            ckpt.num_items,
            split_path.display(),
            split.train.num_users(),
            split.train.num_items()
        );
    }
    let report = evaluate(&ckpt, &split, cfg.protocol, cfg.seed)?;
    write_metrics(out, &report)?;
    Ok(report)
}

pub fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_JSON), format!("{}\n", report.to_json()))?;
    fs::write(
        dir.join(METRICS_CSV),
        format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row()),
    )?;
    Ok(())
}

/// Hyper-parameter varied by `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    PiP,
    Delta,
}

pub const SWEEP_HEADER: &str = "value,p5,ndcg5,map,mrr,error";

/// `sweep`: one train-and-evaluate row per grid value under a fixed seed.
/// A failing row records its error and the sweep continues.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<String>> {
    if values.is_empty() {
        bail!("sweep grid is empty");
    }
    cfg.write_resolved(&cfg.output_dir)?;
    let split = load_split(cfg)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut row_cfg = cfg.clone();
        match param {
            SweepParam::PiP => {
                row_cfg.hyper.pi_p = value;
                row_cfg.pretrain_pi_p = value;
            }
            SweepParam::Delta => row_cfg.hyper.delta = value,
        }
        let outcome = row_cfg
            .validate()
            .and_then(|_| fit(&row_cfg, &split, None, None))
            .and_then(|model| Ok(evaluate(&model, &split, row_cfg.protocol, row_cfg.seed)?));
        let row = match outcome {
            Ok(r) => format!(
                "{value},{:.6},{:.6},{:.6},{:.6},",
                r.p(5),
                r.ndcg(5),
                r.map,
                r.mrr
            ),
            Err(e) => {
                log::warn!("sweep value {value} failed: {e:#}");
                let msg = format!("{e:#}").replace([',', '\n'], ";");
                format!("{value},,,,,{msg}")
            }
        };
        rows.push(row);
    }
    let mut text = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(cfg.output_dir.join(SWEEP_CSV), text)?;
    Ok(rows)
}

/// Priors tabulated by `bound`.
pub const BOUND_PRIORS: [f64; 8] = [0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4];

/// `x` rounded up to two decimals.
fn ceil_2dp(x: f64) -> f64 {
    ceil_tolerant(x * 100.0) / 100.0
}

/// `bound`: the unlabeled sample size for `n_p` positives and the ratio
/// `n_u / n_p` over [`BOUND_PRIORS`]. Ratios are rounded up.
pub fn bound(pi_p: f64, c_ratio: f64, n_p: usize) -> Result<String> {
    if !(c_ratio > 0.0 && c_ratio.is_finite()) {
        bail!("C must be > 0, got {c_ratio}");
    }
    let n_u = unlabeled_sample_size(n_p, pi_p, c_ratio)?;
    let ratio = sample_size_ratio(pi_p, c_ratio)?;
    let mut out = format!(
        "n_u = {n_u} for n_p = {n_p}, pi_p = {pi_p}, C = {c_ratio} (n_u/n_p >= {:.2})\n",
        ceil_2dp(ratio)
    );
    out.push_str("pi_p    n_u/n_p\n");
    for p in BOUND_PRIORS {
        let cell = match sample_size_ratio(p, c_ratio) {
            Ok(r) => format!("{:.2}", ceil_2dp(r)),
            Err(_) => "undefined".to_string(),
        };
        out.push_str(&format!("{p:<7} {cell}\n"));
    }
    Ok(out)
}

/// One row of the `theory-check` table.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub id: usize,
    pub kind: &'static str,
    pub support_size: usize,
    pub pi_p: f64,
    pub is_equilibrium: bool,
    pub max_d_deviation: f64,
    pub v_deviation: f64,
    pub decomposition_gap: f64,
    pub passed: bool,
}

pub const THEORY_HEADER: &str =
    "id    kind          S   pi_p  equilibrium  max|D*-pi/2|  |V+2H(pi/2)|  |direct-decomposed|  status";

impl std::fmt::Display for TheoryRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<5} {:<13} {:<3} {:<5} {:<12} {:<13.3e} {:<13.3e} {:<20.3e} {}",
            self.id,
            self.kind,
            self.support_size,
            self.pi_p,
            self.is_equilibrium,
            self.max_d_deviation,
            self.v_deviation,
            self.decomposition_gap,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

const THEORY_PRIORS: [f64; 3] = [0.01, 0.1, 0.3];
const PROBES: usize = 20;

/// `theory-check`: even ids are randomized instances, odd ids equilibrium
/// instances. With `perturb`, equilibrium instances get one generated mass
/// moved by `1e-3` and pass only if they are reported as off equilibrium.
pub fn theory_check(instances: usize, seed: u64, perturb: bool) -> Result<Vec<TheoryRow>> {
    let root = RngStream::new(seed, StreamLabel::Init);
    let mut rows = Vec::with_capacity(instances);
    for id in 0..instances {
        let mut rng = root.fork(id as u64);
        let s = 3 + id % 8;
        let pi = THEORY_PRIORS[(id / 2) % THEORY_PRIORS.len()];
        let equilibrium = id % 2 == 1;
        let (dists, kind) = if equilibrium {
            let d = equilibrium_instance(s, pi, &mut rng)?;
            if perturb {
                let at = rng.random_range(0..s);
                (d.perturb_generated(at, 1e-3)?, "perturbed")
            } else {
                (d, "equilibrium")
            }
        } else {
            (random_instance(s, pi, &mut rng)?, "random")
        };
        let cert = equilibrium_certificate(&dists)?;
        let dec = generator_objective_decomposition(&dists)?;
        let best = objective_value(&dists, &optimal_discriminator(&dists)?)?;
        let mut maximal = true;
        for _ in 0..PROBES {
            let probe: Vec<f64> = (0..s).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect();
            maximal &= best >= objective_value(&dists, &probe)? - 1e-12;
        }
        let identities = maximal && dec.gap() < EQUILIBRIUM_TOLERANCE;
        let passed = identities
            && match kind {
                "equilibrium" => {
                    cert.is_equilibrium
                        && cert.max_d_deviation < EQUILIBRIUM_TOLERANCE
                        && cert.v_deviation < EQUILIBRIUM_TOLERANCE
                }
                "perturbed" => {
                    !cert.is_equilibrium && best > pure_core::theory::equilibrium_value(pi)
                }
                _ => true,
            };
        rows.push(TheoryRow {
            id,
            kind,
            support_size: s,
            pi_p: pi,
            is_equilibrium: cert.is_equilibrium,
            max_d_deviation: cert.max_d_deviation,
            v_deviation: cert.v_deviation,
            decomposition_gap: dec.gap(),
            passed,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        let text = bound(0.4, 1.0, 1).unwrap();
        assert!(text.starts_with("n_u = 25 "), "{text}");
        assert!(text.contains("(n_u/n_p >= 25.00)"));
        let text = bound(0.1, 1.0, 100).unwrap();
        assert!(text.contains("n_u = 157 "), "{text}");
        assert!(text.contains("(n_u/n_p >= 1.57)"));
        assert!(text.contains("0.4     25.00"));
        assert!(bound(0.1, 0.0, 1).is_err());
        assert!(bound(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn theory_rows_pass_and_perturbation_is_detected() {
        let rows = theory_check(16, 3, false).unwrap();
        assert!(rows.iter().all(|r| r.passed));
        assert!(rows
            .iter()
            .filter(|r| r.kind == "equilibrium")
            .all(|r| r.is_equilibrium));
        let rows = theory_check(16, 3, true).unwrap();
        assert!(rows.iter().all(|r| r.passed));
        assert!(rows
            .iter()
            .filter(|r| r.kind == "perturbed")
            .all(|r| !r.is_equilibrium));
        assert!(theory_check(0, 3, false).unwrap().is_empty());
    }
}
