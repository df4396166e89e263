//! Binary checkpoint format.
//!
//! All integers and reals are little-endian. Layout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"PURECKPT"
//! 8       4     version (u32) = 1
//! 12      1     model kind: 0 item-pop, 1 pn-gmf, 2 pu-gmf, 3 pure
//! 13      1     relation mode: 0 none, 1 vector, 2 matrix
//! 14      1     flags: bit0 discriminator, bit1 generators, bit2 popularity
//! 15      1     reserved (0)
//! 16      8     num_users M (u64)
//! 24      8     num_items N (u64)
//! 32      8     user embedding dim d_u (u64)
//! 40      8     item embedding dim d_i (u64)
//! 48      8     generator hidden width k (u64)
//! 56      ...   payload
//! ```
//!
//! Payload, in order, each tensor row-major `f64`:
//! discriminator (if flagged): user embeddings `M x d_u`, item embeddings
//! `N x d_i`, relation (`d_u` for vector mode, `d_u x d_i` for matrix mode);
//! generators (if flagged): user generator `w1 (k x d_u)`, `b1 (k)`,
//! `w2 (d_u x k)`, `b2 (d_u)`, then the item generator with `d_i`;
//! popularity (if flagged): `N` counts as `u64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{DiscriminatorParams, GeneratorParams, ModelKind, Relation};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PURECKPT";
const VERSION: u32 = 1;

const FLAG_DISC: u8 = 1;
const FLAG_GEN: u8 = 2;
const FLAG_POP: u8 = 4;

/// Everything needed to score with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub num_users: usize,
    pub num_items: usize,
    pub discriminator: Option<DiscriminatorParams>,
    /// `(user generator, item generator)`
    pub generators: Option<(GeneratorParams, GeneratorParams)>,
    pub popularity: Option<Vec<u64>>,
}

fn kind_code(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::ItemPop => 0,
        ModelKind::PnGmf => 1,
        ModelKind::PuGmf => 2,
        ModelKind::Pure => 3,
    }
}

fn kind_from_code(code: u8) -> Result<ModelKind> {
    Ok(match code {
        0 => ModelKind::ItemPop,
        1 => ModelKind::PnGmf,
        2 => ModelKind::PuGmf,
        3 => ModelKind::Pure,
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown model kind code {other}"
            )))
        }
    })
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_reals(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serialises `ckpt` into `out`.
pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind_code(ckpt.kind));
    let (relation_mode, d_u, d_i) = match &ckpt.discriminator {
        None => (0u8, 0, 0),
        Some(d) => (
            match d.relation {
                Relation::Vector(_) => 1,
                Relation::Matrix(_) => 2,
            },
            d.user_dim(),
            d.item_dim(),
        ),
    };
    buf.push(relation_mode);
    let mut flags = 0u8;
    if ckpt.discriminator.is_some() {
        flags |= FLAG_DISC;
    }
    if ckpt.generators.is_some() {
        flags |= FLAG_GEN;
    }
    if ckpt.popularity.is_some() {
        flags |= FLAG_POP;
    }
    buf.push(flags);
    buf.push(0);
    let hidden = ckpt.generators.as_ref().map_or(0, |(g, _)| g.hidden());
    let (d_u, d_i) = match (&ckpt.discriminator, &ckpt.generators) {
        (None, Some((gu, gi))) => (gu.dim(), gi.dim()),
        _ => (d_u, d_i),
    };
    for x in [ckpt.num_users, ckpt.num_items, d_u, d_i, hidden] {
        put_u64(&mut buf, x as u64);
    }

    if let Some(d) = &ckpt.discriminator {
        if d.num_users() != ckpt.num_users || d.num_items() != ckpt.num_items {
            return Err(Error::Checkpoint(
                "discriminator shape disagrees with header".into(),
            ));
        }
        put_reals(
            &mut buf,
            d.user_embeddings.as_slice().expect("standard layout"),
        );
        put_reals(
            &mut buf,
            d.item_embeddings.as_slice().expect("standard layout"),
        );
        put_reals(&mut buf, d.relation.as_slice());
    }
    if let Some((gu, gi)) = &ckpt.generators {
        if gu.dim() != d_u || gi.dim() != d_i || gi.hidden() != hidden {
            return Err(Error::Checkpoint(
                "generator shapes disagree with header".into(),
            ));
        }
        for g in [gu, gi] {
            for t in [
                &g.w1.as_slice(),
                &g.b1.as_slice(),
                &g.w2.as_slice(),
                &g.b2.as_slice(),
            ] {
                put_reals(&mut buf, t.expect("standard layout"));
            }
        }
    }
    if let Some(pop) = &ckpt.popularity {
        if pop.len() != ckpt.num_items {
            return Err(Error::Checkpoint(
                "popularity length disagrees with header".into(),
            ));
        }
        for &c in pop {
            put_u64(&mut buf, c);
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn size(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflow".into()))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes_len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
        Ok(self
            .take(bytes_len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
        Array2::from_shape_vec((rows, cols), self.reals(n)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn vector(&mut self, n: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.reals(n)?))
    }
}

/// Parses a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = kind_from_code(c.u8()?)?;
    let relation_mode = c.u8()?;
    let flags = c.u8()?;
    let _reserved = c.u8()?;
    let num_users = c.size()?;
    let num_items = c.size()?;
    let d_u = c.size()?;
    let d_i = c.size()?;
    let hidden = c.size()?;

    let discriminator = if flags & FLAG_DISC != 0 {
        let user_embeddings = c.matrix(num_users, d_u)?;
        let item_embeddings = c.matrix(num_items, d_i)?;
        let relation = match relation_mode {
            1 => {
                if d_u != d_i {
                    return Err(Error::Checkpoint("vector relation needs d_u = d_i".into()));
                }
                Relation::Vector(c.vector(d_u)?)
            }
            2 => Relation::Matrix(c.matrix(d_u, d_i)?),
            other => return Err(Error::Checkpoint(format!("bad relation mode {other}"))),
        };
        Some(DiscriminatorParams {
            user_embeddings,
            item_embeddings,
            relation,
        })
    } else {
        None
    };
    let generators = if flags & FLAG_GEN != 0 {
        let mut read_gen = |d: usize| -> Result<GeneratorParams> {
            Ok(GeneratorParams {
                w1: c.matrix(hidden, d)?,
                b1: c.vector(hidden)?,
                w2: c.matrix(d, hidden)?,
                b2: c.vector(d)?,
            })
        };
        let gu = read_gen(d_u)?;
        let gi = read_gen(d_i)?;
        Some((gu, gi))
    } else {
        None
    };
    let popularity = if flags & FLAG_POP != 0 {
        Some(
            (0..num_items)
                .map(|_| c.u64())
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        kind,
        num_users,
        num_items,
        discriminator,
        generators,
        popularity,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(ckpt, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RngStream, StreamLabel};
    use crate::model::{checksum, Parameters};
    use proptest::prelude::*;

    fn sample(seed: u64, kind: ModelKind, bilinear: bool) -> Checkpoint {
        let mut rng = RngStream::new(seed, StreamLabel::Init);
        let disc = if bilinear {
            DiscriminatorParams::init_bilinear(4, 7, 3, 2, &mut rng).unwrap()
        } else {
            DiscriminatorParams::init(4, 7, 3, &mut rng).unwrap()
        };
        let (du, di) = (disc.user_dim(), disc.item_dim());
        Checkpoint {
            kind,
            num_users: 4,
            num_items: 7,
            discriminator: Some(disc),
            generators: Some((
                GeneratorParams::init(du, 5, &mut rng).unwrap(),
                GeneratorParams::init(di, 5, &mut rng).unwrap(),
            )),
            popularity: Some((0..7).map(|i| i * 11).collect()),
        }
    }

    fn round_trip(c: &Checkpoint) -> (Vec<u8>, Checkpoint) {
        let mut bytes = Vec::new();
        write_checkpoint(c, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        (bytes, back)
    }

    #[test]
    fn header_layout() {
        let c = sample(1, ModelKind::Pure, false);
        let (bytes, _) = round_trip(&c);
        assert_eq!(&bytes[..8], b"PURECKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], 3);
        assert_eq!(bytes[13], 1);
        assert_eq!(bytes[14], 7);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(bytes[48..56].try_into().unwrap()), 5);
        let payload = (4 * 3 + 7 * 3 + 3) * 8 + 2 * (5 * 3 + 5 + 3 * 5 + 3) * 8 + 7 * 8;
        assert_eq!(bytes.len(), 56 + payload);
    }

    #[test]
    fn item_pop_only() {
        let c = Checkpoint {
            kind: ModelKind::ItemPop,
            num_users: 2,
            num_items: 3,
            discriminator: None,
            generators: None,
            popularity: Some(vec![5, 3, 3]),
        };
        assert_eq!(round_trip(&c).1, c);
    }

    #[test]
    fn corrupt_input_rejected() {
        let c = sample(2, ModelKind::PuGmf, false);
        let (mut bytes, _) = round_trip(&c);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn bitwise_round_trip(seed in 0u64..500, bilinear in any::<bool>()) {
            let c = sample(seed, ModelKind::Pure, bilinear);
            let (bytes, back) = round_trip(&c);
            let d0 = c.discriminator.as_ref().unwrap();
            let d1 = back.discriminator.as_ref().unwrap();
            prop_assert_eq!(checksum(d0), checksum(d1));
            for (a, b) in d0.tensors().iter().zip(d1.tensors()) {
                prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            prop_assert_eq!(&back, &c);
            let (again, _) = round_trip(&back);
            prop_assert_eq!(again, bytes);
        }
    }
}
