//! Trainers: item popularity, GMF under a PN or PU objective, and the
//! adversarial PU trainer with its two generators.
//!
//! One epoch consumes the training positives once, in shuffled minibatches of
//! `batch_size`. Unlabeled and generated tuples are drawn per batch in
//! proportion to the batch's share of positives, so an epoch draws exactly
//! `n_u` of each. For the adversarial trainer an epoch is one outer iteration:
//! `d_steps` discriminator passes followed by `g_steps` generator passes.
//!
//! Random streams, all derived from the run seed:
//! `Init` (parameters, generators on forks 1 and 2), `Unlabeled` (batch
//! sampling, shuffling on fork 0) and `Noise` (generator inputs).

use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_unlabeled, Interactions, RngStream, StreamLabel};
use crate::error::{Error, Result};
use crate::model::{
    adam_step, checksum, disc_backward, gen_backward, sample_noise, sigmoid, AdamState, Checkpoint,
    DiscRecord, DiscriminatorParams, GenRecord, GeneratorParams, LogTerm, ModelKind, Side, Slot,
};
use crate::objective::{pu_coefficients, HyperParams, LossReport, RelationMode};

/// Objective used by [`train_gmf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmfMode {
    /// Cross-entropy against `C * n_p` uniformly sampled negatives.
    Pn,
    /// PU objective against `n_u` uniformly sampled unlabeled tuples.
    Pu,
}

/// Per-epoch training summary. Loss components are raw sums over the epoch,
/// averaged over local passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub report: LossReport,
    pub gen_loss: f64,
    pub wall_ms: u64,
}

impl EpochRecord {
    pub const LOG_HEADER: &'static str =
        "epoch,pos_term,neg_corr,unl_term,gen_term,total,gen_loss,wall_ms";

    pub fn log_line(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            r.positive_term,
            r.negative_correction,
            r.unlabeled_term,
            r.generated_term,
            r.total,
            self.gen_loss,
            self.wall_ms
        )
    }
}

/// Read-only view handed to the epoch hook.
pub struct EpochView<'a> {
    pub kind: ModelKind,
    pub record: &'a EpochRecord,
    pub discriminator: &'a DiscriminatorParams,
    pub generators: Option<(&'a GeneratorParams, &'a GeneratorParams)>,
}

/// Called after every epoch; an error aborts training.
pub type EpochHook<'h> = dyn FnMut(&EpochView<'_>) -> Result<()> + 'h;

/// Output of every trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub discriminator: Option<DiscriminatorParams>,
    /// `(user generator, item generator)`
    pub generators: Option<(GeneratorParams, GeneratorParams)>,
    pub popularity: Option<Vec<u64>>,
    /// Absent for item popularity.
    pub hyper: Option<HyperParams>,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn to_checkpoint(&self, num_users: usize, num_items: usize) -> Checkpoint {
        Checkpoint {
            kind: self.kind,
            num_users,
            num_items,
            discriminator: self.discriminator.clone(),
            generators: self.generators.clone(),
            popularity: self.popularity.clone(),
        }
    }

    /// Restores a model from a checkpoint; hyper-parameters and history are not stored.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        TrainedModel {
            kind: ckpt.kind,
            discriminator: ckpt.discriminator,
            generators: ckpt.generators,
            popularity: ckpt.popularity,
            hyper: None,
            history: Vec::new(),
        }
    }
}

/// Ranks items by the number of training users who liked them.
pub fn train_item_pop(train: &Interactions) -> Result<TrainedModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training positives".into()));
    }
    Ok(TrainedModel {
        kind: ModelKind::ItemPop,
        discriminator: None,
        generators: None,
        popularity: Some(train.item_counts()),
        hyper: None,
        history: Vec::new(),
    })
}

/// Copies the discriminator out of a PU-GMF model for use as a warm start.
pub fn pretrain_handoff(pu_gmf: &TrainedModel) -> Result<DiscriminatorParams> {
    if pu_gmf.kind != ModelKind::PuGmf {
        return Err(Error::KindMismatch {
            expected: ModelKind::PuGmf.to_string(),
            actual: pu_gmf.kind.to_string(),
        });
    }
    pu_gmf
        .discriminator
        .clone()
        .ok_or_else(|| Error::Precondition("PU-GMF model has no discriminator".into()))
}

struct Streams {
    init: RngStream,
    shuffle: RngStream,
    sampler: RngStream,
    noise: RngStream,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let sampler = RngStream::new(seed, StreamLabel::Unlabeled);
        Streams {
            init: RngStream::new(seed, StreamLabel::Init),
            shuffle: sampler.fork(0),
            sampler,
            noise: RngStream::new(seed, StreamLabel::Noise),
        }
    }
}

fn init_discriminator(
    train: &Interactions,
    hp: &HyperParams,
    rng: &mut RngStream,
) -> Result<DiscriminatorParams> {
    let (m, n, d) = (train.num_users(), train.num_items(), hp.dim);
    match hp.relation {
        RelationMode::Vector => DiscriminatorParams::init(m, n, d, rng),
        RelationMode::Matrix => DiscriminatorParams::init_bilinear(m, n, d, d, rng),
    }
}

/// `floor(cum * total / n) - floor(prev * total / n)`: the share of `total`
/// assigned to positives `prev..cum` out of `n`.
fn share(total: usize, n: usize, prev: usize, cum: usize) -> usize {
    let at = |c: usize| (c as u128 * total as u128 / n as u128) as usize;
    at(cum) - at(prev)
}

fn check_training_inputs(train: &Interactions, hp: &HyperParams) -> Result<()> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training positives".into()));
    }
    if train.num_unobserved() == 0 {
        return Err(Error::Precondition(
            "training matrix is dense: nothing to sample as unlabeled".into(),
        ));
    }
    Ok(())
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch },
        other => other,
    }
}

fn score(disc: &DiscriminatorParams, user: Slot<'_>, item: Slot<'_>) -> f64 {
    let e_u = match user {
        Slot::Real(u) => disc.user_embeddings.row(u),
        Slot::Fake(v) => v,
    };
    let e_i = match item {
        Slot::Real(i) => disc.item_embeddings.row(i),
        Slot::Fake(v) => v,
    };
    sigmoid(disc.logit_unchecked(e_u, e_i))
}

fn ln_clamped(x: f64) -> f64 {
    x.max(crate::objective::SCORE_FLOOR).ln()
}

/// GMF trained with minibatch Adam under the PN or PU objective.
pub fn train_gmf(
    train: &Interactions,
    hp: &HyperParams,
    mode: GmfMode,
    seed: u64,
) -> Result<TrainedModel> {
    train_gmf_with(train, hp, mode, seed, &mut |_| Ok(()))
}

pub fn train_gmf_with(
    train: &Interactions,
    hp: &HyperParams,
    mode: GmfMode,
    seed: u64,
    hook: &mut EpochHook<'_>,
) -> Result<TrainedModel> {
    check_training_inputs(train, hp)?;
    let mut streams = Streams::new(seed);
    let mut disc = init_discriminator(train, hp, &mut streams.init)?;
    let mut adam = AdamState::new(&disc);
    let n_p = train.num_positives();
    let n_other = match mode {
        GmfMode::Pu => hp.unlabeled_per_epoch(n_p)?,
        GmfMode::Pn => (hp.c_ratio * n_p as f64).ceil() as usize,
    };
    let kind = match mode {
        GmfMode::Pn => ModelKind::PnGmf,
        GmfMode::Pu => ModelKind::PuGmf,
    };
    let coef = pu_coefficients(hp.pi_p);
    let positives: Vec<(usize, usize)> = train.positives().collect();
    let mut order: Vec<usize> = (0..n_p).collect();
    let mut history = Vec::with_capacity(hp.epochs);
    let mut records: Vec<DiscRecord<'_>> = Vec::new();

    for epoch in 1..=hp.epochs {
        let started = Instant::now();
        order.shuffle(&mut streams.shuffle);
        let mut sums = LossReport::default();
        let mut done = 0;
        for batch in order.chunks(hp.batch_size) {
            let others = sample_unlabeled(
                train,
                share(n_other, n_p, done, done + batch.len()),
                &mut streams.sampler,
            )?;
            done += batch.len();
            let f = hp.loss_reduction.factor(batch.len());
            records.clear();
            let (mut pos_ln_d, mut pos_ln_1md, mut other_ln_1md) = (0.0, 0.0, 0.0);
            for &k in batch {
                let (u, i) = positives[k];
                let s = score(&disc, Slot::Real(u), Slot::Real(i));
                pos_ln_d += ln_clamped(s);
                match mode {
                    GmfMode::Pn => records.push(DiscRecord {
                        user: Slot::Real(u),
                        item: Slot::Real(i),
                        coefficient: -f,
                        term: LogTerm::LogD,
                    }),
                    GmfMode::Pu => {
                        pos_ln_1md += ln_clamped(1.0 - s);
                        records.push(DiscRecord {
                            user: Slot::Real(u),
                            item: Slot::Real(i),
                            coefficient: -f * coef.positive,
                            term: LogTerm::LogD,
                        });
                        records.push(DiscRecord {
                            user: Slot::Real(u),
                            item: Slot::Real(i),
                            coefficient: -f * coef.correction,
                            term: LogTerm::LogOneMinusD,
                        });
                    }
                }
            }
            for &(u, i) in &others {
                other_ln_1md += ln_clamped(1.0 - score(&disc, Slot::Real(u), Slot::Real(i)));
                records.push(DiscRecord {
                    user: Slot::Real(u),
                    item: Slot::Real(i),
                    coefficient: -f * coef.unlabeled,
                    term: LogTerm::LogOneMinusD,
                });
            }
            let batch_report = match mode {
                GmfMode::Pn => LossReport::new(pos_ln_d, 0.0, other_ln_1md, 0.0),
                GmfMode::Pu => LossReport::new(
                    coef.positive * pos_ln_d,
                    coef.correction * pos_ln_1md,
                    coef.unlabeled * other_ln_1md,
                    0.0,
                ),
            };
            sums = sums.add(&batch_report);
            let grad = disc_backward(&disc, &records).map_err(diverged(epoch))?;
            adam_step(&mut adam, &mut disc, &grad, hp.lr)?;
        }
        if !disc.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            report: sums,
            gen_loss: 0.0,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        warn_negative_risk(mode == GmfMode::Pu, &record);
        hook(&EpochView {
            kind,
            record: &record,
            discriminator: &disc,
            generators: None,
        })?;
        history.push(record);
    }
    Ok(TrainedModel {
        kind,
        discriminator: Some(disc),
        generators: None,
        popularity: None,
        hyper: Some(hp.clone()),
        history,
    })
}

fn warn_negative_risk(pu: bool, record: &EpochRecord) {
    if pu && record.report.negative_risk_estimate() < 0.0 {
        log::warn!(
            "epoch {}: negative-class risk estimate is negative ({})",
            record.epoch,
            record.report.negative_risk_estimate()
        );
    }
}

/// Adversarial PU training: a GMF discriminator against a user generator and
/// an item generator, optionally warm-started from `pretrained`.
pub fn train_pure(
    train: &Interactions,
    hp: &HyperParams,
    pretrained: Option<DiscriminatorParams>,
    seed: u64,
) -> Result<TrainedModel> {
    train_pure_with(train, hp, pretrained, seed, &mut |_| Ok(()))
}

pub fn train_pure_with(
    train: &Interactions,
    hp: &HyperParams,
    pretrained: Option<DiscriminatorParams>,
    seed: u64,
    hook: &mut EpochHook<'_>,
) -> Result<TrainedModel> {
    check_training_inputs(train, hp)?;
    let mut streams = Streams::new(seed);
    let mut disc = match pretrained {
        Some(p) => {
            let expected = (train.num_users(), train.num_items(), hp.dim, hp.dim);
            let actual = (p.num_users(), p.num_items(), p.user_dim(), p.item_dim());
            if expected != actual {
                return Err(Error::Precondition(format!(
                    "pretrained discriminator has shape (M, N, d_u, d_i) = {actual:?}, expected {expected:?}"
                )));
            }
            p
        }
        None => init_discriminator(train, hp, &mut streams.init)?,
    };
    let mut gen_u = GeneratorParams::init(disc.user_dim(), hp.hidden, &mut streams.init.fork(1))?;
    let mut gen_i = GeneratorParams::init(disc.item_dim(), hp.hidden, &mut streams.init.fork(2))?;
    let mut adam_d = AdamState::new(&disc);
    let mut adam_gu = AdamState::new(&gen_u);
    let mut adam_gi = AdamState::new(&gen_i);

    let n_p = train.num_positives();
    let n_u = hp.unlabeled_per_epoch(n_p)?;
    let n_g = (hp.gen_ratio * n_u as f64).round() as usize;
    let coef = pu_coefficients(hp.pi_p);
    let positives: Vec<(usize, usize)> = train.positives().collect();
    let mut order: Vec<usize> = (0..n_p).collect();
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 1..=hp.epochs {
        let started = Instant::now();

        let gen_sum = (checksum(&gen_u), checksum(&gen_i));
        let mut sums = LossReport::default();
        for _ in 0..hp.d_steps {
            order.shuffle(&mut streams.shuffle);
            let mut done = 0;
            for batch in order.chunks(hp.batch_size) {
                let m = share(n_u, n_p, done, done + batch.len());
                let m_g = share(n_g, n_p, done, done + batch.len());
                done += batch.len();
                let unlabeled = sample_unlabeled(train, m, &mut streams.sampler)?;
                let correction: Vec<(usize, usize)> = (0..batch.len())
                    .map(|_| positives[streams.sampler.random_range(0..n_p)])
                    .collect();
                let partners = if m_g > 0 && unlabeled.is_empty() {
                    sample_unlabeled(train, m_g, &mut streams.sampler)?
                } else {
                    unlabeled.clone()
                };
                let mut fakes: Vec<(Array1<f64>, Array1<f64>)> = Vec::with_capacity(m_g);
                for _ in 0..m_g {
                    let z_i = sample_noise(gen_i.dim(), hp.delta, &mut streams.noise)?;
                    let z_u = sample_noise(gen_u.dim(), hp.delta, &mut streams.noise)?;
                    fakes.push((gen_i.forward(z_i.view())?, gen_u.forward(z_u.view())?));
                }

                let f = hp.loss_reduction.factor(batch.len());
                let mut records: Vec<DiscRecord<'_>> =
                    Vec::with_capacity(2 * batch.len() + m + 2 * m_g);
                let mut terms = [0.0f64; 4];
                for &k in batch {
                    let (u, i) = positives[k];
                    terms[0] += ln_clamped(score(&disc, Slot::Real(u), Slot::Real(i)));
                    records.push(DiscRecord {
                        user: Slot::Real(u),
                        item: Slot::Real(i),
                        coefficient: -f * coef.positive,
                        term: LogTerm::LogD,
                    });
                }
                for &(u, i) in &correction {
                    terms[1] += ln_clamped(1.0 - score(&disc, Slot::Real(u), Slot::Real(i)));
                    records.push(DiscRecord {
                        user: Slot::Real(u),
                        item: Slot::Real(i),
                        coefficient: -f * coef.correction,
                        term: LogTerm::LogOneMinusD,
                    });
                }
                for &(u, i) in &unlabeled {
                    terms[2] += ln_clamped(1.0 - score(&disc, Slot::Real(u), Slot::Real(i)));
                    records.push(DiscRecord {
                        user: Slot::Real(u),
                        item: Slot::Real(i),
                        coefficient: -f * coef.unlabeled,
                        term: LogTerm::LogOneMinusD,
                    });
                }
                for (k, (fake_item, fake_user)) in fakes.iter().enumerate() {
                    let (u, i) = partners[k % partners.len()];
                    let pairs = [
                        (Slot::Real(u), Slot::Fake(fake_item.view())),
                        (Slot::Fake(fake_user.view()), Slot::Real(i)),
                    ];
                    for (user, item) in pairs {
                        terms[3] += ln_clamped(1.0 - score(&disc, user, item));
                        records.push(DiscRecord {
                            user,
                            item,
                            coefficient: -f * coef.generated,
                            term: LogTerm::LogOneMinusD,
                        });
                    }
                }
                sums = sums.add(&LossReport::new(
                    coef.positive * terms[0],
                    coef.correction * terms[1],
                    coef.unlabeled * terms[2],
                    coef.generated * terms[3],
                ));
                let grad = disc_backward(&disc, &records).map_err(diverged(epoch))?;
                adam_step(&mut adam_d, &mut disc, &grad, hp.lr)?;
            }
        }
        debug_assert_eq!(gen_sum, (checksum(&gen_u), checksum(&gen_i)));
        if !disc.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        let disc_sum = checksum(&disc);
        let mut gen_total = 0.0;
        for _ in 0..hp.g_steps {
            let mut left = n_u;
            while left > 0 {
                let size = left.min(hp.batch_size);
                left -= size;
                let tuples = sample_unlabeled(train, size, &mut streams.sampler)?;
                let mut z_items = Vec::with_capacity(size);
                let mut z_users = Vec::with_capacity(size);
                for _ in 0..size {
                    z_items.push(sample_noise(gen_i.dim(), hp.delta, &mut streams.noise)?);
                    z_users.push(sample_noise(gen_u.dim(), hp.delta, &mut streams.noise)?);
                }
                let f = hp.loss_reduction.factor(size);
                let mut item_records = Vec::with_capacity(size);
                let mut user_records = Vec::with_capacity(size);
                for (k, &(u, i)) in tuples.iter().enumerate() {
                    let fake_item = gen_i.forward(z_items[k].view())?;
                    let fake_user = gen_u.forward(z_users[k].view())?;
                    gen_total -=
                        ln_clamped(score(&disc, Slot::Real(u), Slot::Fake(fake_item.view())));
                    gen_total -=
                        ln_clamped(score(&disc, Slot::Fake(fake_user.view()), Slot::Real(i)));
                    item_records.push(GenRecord {
                        noise: z_items[k].view(),
                        partner: u,
                        side: Side::Item,
                        coefficient: -f,
                        term: LogTerm::LogD,
                    });
                    user_records.push(GenRecord {
                        noise: z_users[k].view(),
                        partner: i,
                        side: Side::User,
                        coefficient: -f,
                        term: LogTerm::LogD,
                    });
                }
                let grad_i = gen_backward(&gen_i, &disc, &item_records).map_err(diverged(epoch))?;
                let grad_u = gen_backward(&gen_u, &disc, &user_records).map_err(diverged(epoch))?;
                adam_step(&mut adam_gi, &mut gen_i, &grad_i, hp.lr)?;
                adam_step(&mut adam_gu, &mut gen_u, &grad_u, hp.lr)?;
            }
        }
        debug_assert_eq!(disc_sum, checksum(&disc));
        if !gen_u.is_finite() || !gen_i.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        let record = EpochRecord {
            epoch,
            report: sums.scaled(1.0 / hp.d_steps.max(1) as f64),
            gen_loss: gen_total / hp.g_steps.max(1) as f64,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        warn_negative_risk(true, &record);
        hook(&EpochView {
            kind: ModelKind::Pure,
            record: &record,
            discriminator: &disc,
            generators: Some((&gen_u, &gen_i)),
        })?;
        history.push(record);
    }
    Ok(TrainedModel {
        kind: ModelKind::Pure,
        discriminator: Some(disc),
        generators: Some((gen_u, gen_i)),
        popularity: None,
        hyper: Some(hp.clone()),
        history,
    })
}
