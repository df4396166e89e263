use ndarray::{Array1, ArrayView1, Axis};

use super::{sigmoid, DiscriminatorParams, GeneratorParams, Relation};
use crate::error::{Error, Result};

/// Which log-probability a record contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogTerm {
    /// `log D`
    LogD,
    /// `log (1 - D)`
    LogOneMinusD,
}

impl LogTerm {
    /// Derivative of the term with respect to the logit.
    fn d_logit(self, logit: f64) -> f64 {
        match self {
            LogTerm::LogD => sigmoid(-logit),
            LogTerm::LogOneMinusD => -sigmoid(logit),
        }
    }
}

/// Source of a user or item vector fed to the discriminator.
#[derive(Debug, Clone, Copy)]
pub enum Slot<'a> {
    /// Stored embedding row; receives gradient.
    Real(usize),
    /// Externally supplied vector (a generator output); treated as constant.
    Fake(ArrayView1<'a, f64>),
}

/// One weighted term `coefficient * term(D(user, item))`.
#[derive(Debug, Clone, Copy)]
pub struct DiscRecord<'a> {
    pub user: Slot<'a>,
    pub item: Slot<'a>,
    pub coefficient: f64,
    pub term: LogTerm,
}

fn slot_view<'a, 's: 'a>(
    slot: &Slot<'s>,
    table: &'a ndarray::Array2<f64>,
    record: usize,
) -> Result<ArrayView1<'a, f64>> {
    match *slot {
        Slot::Real(row) => {
            if row >= table.nrows() {
                return Err(Error::Precondition(format!(
                    "record {record}: row {row} out of range ({} rows)",
                    table.nrows()
                )));
            }
            Ok(table.row(row))
        }
        Slot::Fake(v) => {
            if v.len() != table.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: table.ncols(),
                    actual: v.len(),
                });
            }
            Ok(v)
        }
    }
}

/// Gradient of `sum_r coefficient_r * term_r(D(user_r, item_r))` with respect to
/// every discriminator parameter. Rows not referenced by a [`Slot::Real`]
/// receive zero gradient.
pub fn disc_backward(
    params: &DiscriminatorParams,
    records: &[DiscRecord<'_>],
) -> Result<DiscriminatorParams> {
    let mut grad = params.zeros_like();
    for (idx, rec) in records.iter().enumerate() {
        let e_u = slot_view(&rec.user, &params.user_embeddings, idx)?;
        let e_i = slot_view(&rec.item, &params.item_embeddings, idx)?;
        let logit = params.logit_unchecked(e_u, e_i);
        let g = rec.coefficient * rec.term.d_logit(logit);
        if !g.is_finite() || !logit.is_finite() {
            return Err(Error::NonFinite { index: idx });
        }
        if g == 0.0 {
            continue;
        }
        match (&params.relation, &mut grad.relation) {
            (Relation::Vector(r), Relation::Vector(gr)) => {
                if let Slot::Real(u) = rec.user {
                    let mut row = grad.user_embeddings.row_mut(u);
                    for k in 0..r.len() {
                        row[k] += g * r[k] * e_i[k];
                    }
                }
                if let Slot::Real(i) = rec.item {
                    let mut row = grad.item_embeddings.row_mut(i);
                    for k in 0..r.len() {
                        row[k] += g * r[k] * e_u[k];
                    }
                }
                for k in 0..r.len() {
                    gr[k] += g * e_u[k] * e_i[k];
                }
            }
            (Relation::Matrix(m), Relation::Matrix(gm)) => {
                if let Slot::Real(u) = rec.user {
                    grad.user_embeddings.row_mut(u).scaled_add(g, &m.dot(&e_i));
                }
                if let Slot::Real(i) = rec.item {
                    grad.item_embeddings
                        .row_mut(i)
                        .scaled_add(g, &m.t().dot(&e_u));
                }
                let outer = e_u.insert_axis(Axis(1)).dot(&e_i.insert_axis(Axis(0)));
                gm.scaled_add(g, &outer);
            }
            _ => unreachable!("gradient relation mirrors parameter relation"),
        }
    }
    Ok(grad)
}

/// Which slot a generated vector fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Fake user paired with real item `partner`.
    User,
    /// Fake item paired with real user `partner`.
    Item,
}

/// One weighted term on a generated pair; the discriminator is frozen.
#[derive(Debug, Clone, Copy)]
pub struct GenRecord<'a> {
    pub noise: ArrayView1<'a, f64>,
    pub partner: usize,
    pub side: Side,
    pub coefficient: f64,
    pub term: LogTerm,
}

/// Gradient of `sum_r coefficient_r * term_r(D(..))` with respect to the
/// generator weights, where each record's fake vector is `gen(noise_r)`.
/// The rectifier's derivative at exactly zero is taken as zero.
pub fn gen_backward(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    records: &[GenRecord<'_>],
) -> Result<GeneratorParams> {
    let mut grad = gen.zeros_like();
    for (idx, rec) in records.iter().enumerate() {
        if rec.noise.len() != gen.dim() {
            return Err(Error::DimensionMismatch {
                expected: gen.dim(),
                actual: rec.noise.len(),
            });
        }
        let (partner_table, fake_dim) = match rec.side {
            Side::User => (&disc.item_embeddings, disc.user_dim()),
            Side::Item => (&disc.user_embeddings, disc.item_dim()),
        };
        if fake_dim != gen.dim() {
            return Err(Error::DimensionMismatch {
                expected: fake_dim,
                actual: gen.dim(),
            });
        }
        if rec.partner >= partner_table.nrows() {
            return Err(Error::Precondition(format!(
                "record {idx}: partner {} out of range",
                rec.partner
            )));
        }
        let partner = partner_table.row(rec.partner);
        let trace = gen.trace(rec.noise);
        let fake = trace.output.view();

        // d logit / d fake
        let (logit, d_fake): (f64, Array1<f64>) = match (&disc.relation, rec.side) {
            (Relation::Vector(r), _) => (disc.logit_unchecked(fake, partner), &partner * r),
            (Relation::Matrix(m), Side::User) => {
                let m_e = m.dot(&partner);
                (fake.dot(&m_e), m_e)
            }
            (Relation::Matrix(m), Side::Item) => {
                let mt_e = m.t().dot(&partner);
                (fake.dot(&mt_e), mt_e)
            }
        };
        let g = rec.coefficient * rec.term.d_logit(logit);
        if !g.is_finite() || !logit.is_finite() {
            return Err(Error::NonFinite { index: idx });
        }
        if g == 0.0 {
            continue;
        }

        let d_pre_output: Array1<f64> = ndarray::Zip::from(&d_fake)
            .and(&trace.pre_output)
            .map_collect(|&d, &p| if p > 0.0 { g * d } else { 0.0 });
        grad.b2 += &d_pre_output;
        for (mut row, &d) in grad.w2.rows_mut().into_iter().zip(&d_pre_output) {
            row.scaled_add(d, &trace.hidden);
        }
        let d_hidden = gen.w2.t().dot(&d_pre_output);
        let d_pre_hidden: Array1<f64> = ndarray::Zip::from(&d_hidden)
            .and(&trace.pre_hidden)
            .map_collect(|&d, &p| if p > 0.0 { d } else { 0.0 });
        grad.b1 += &d_pre_hidden;
        for (mut row, &d) in grad.w1.rows_mut().into_iter().zip(&d_pre_hidden) {
            row.scaled_add(d, &rec.noise);
        }
    }
    Ok(grad)
}
