//! Binary model container shared by the CLI.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic    4 bytes  "PCDR"
//! version  u32      1
//! kind     u8       1 autoencoder | 2 deep network | 3 NMF
//! nsizes   u32      then nsizes × u64 layer sizes
//! nmat     u32      then nmat matrices, each: rows u64, cols u64, rows·cols f64 row-major
//! ```
//!
//! Layer sizes and matrix order per kind:
//! - autoencoder: sizes `[n, h]`; W1 (h×n), b1 (1×h), W2 (n×h), b2 (1×n).
//! - deep network: sizes `[n, s1, …, sL, k]`, so the layer count is
//!   `nsizes − 2`; W1, b1, …, WL, bL, then the softmax weights (sL×k).
//! - NMF: sizes `[n, r, m]`; W (n×r), H (r×m).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array1;

use crate::autoencoder::AutoencoderParams;
use crate::coremath::{Matrix, Vector};
use crate::deepnet::{DeepNetwork, EncoderLayer};
use crate::error::{Error, Result};
use crate::nmf::NmfModel;

pub const MAGIC: &[u8; 4] = b"PCDR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Autoencoder(AutoencoderParams),
    Deep(DeepNetwork),
    Nmf(NmfModel),
}

impl Model {
    fn kind_tag(&self) -> u8 {
        match self {
            Model::Autoencoder(_) => 1,
            Model::Deep(_) => 2,
            Model::Nmf(_) => 3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Autoencoder(_) => "autoencoder",
            Model::Deep(_) => "deep",
            Model::Nmf(_) => "nmf",
        }
    }

    /// Matrix whose rows are first-layer receptive fields.
    pub fn first_layer_fields(&self) -> Matrix {
        match self {
            Model::Autoencoder(p) => p.w1.clone(),
            Model::Deep(net) => net.encoders[0].w.clone(),
            Model::Nmf(m) => m.w.t().to_owned(),
        }
    }
}

fn row(v: &Vector) -> Matrix {
    v.clone().insert_axis(ndarray::Axis(0))
}

fn unrow(m: Matrix) -> Vector {
    Array1::from_iter(m)
}

pub fn write_model<W: Write>(mut out: W, model: &Model) -> Result<()> {
    let (sizes, mats): (Vec<usize>, Vec<Matrix>) = match model {
        Model::Autoencoder(p) => (
            vec![p.input_size(), p.hidden_size()],
            vec![p.w1.clone(), row(&p.b1), p.w2.clone(), row(&p.b2)],
        ),
        Model::Deep(net) => {
            let mut sizes = net.sizes();
            sizes.push(net.class_count);
            let mut mats = Vec::new();
            for e in &net.encoders {
                mats.push(e.w.clone());
                mats.push(row(&e.b));
            }
            mats.push(net.softmax_w.clone());
            (sizes, mats)
        }
        Model::Nmf(m) => (vec![m.w.nrows(), m.rank(), m.h.ncols()], vec![m.w.clone(), m.h.clone()]),
    };
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[model.kind_tag()])?;
    out.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for s in sizes {
        out.write_all(&(s as u64).to_le_bytes())?;
    }
    out.write_all(&(mats.len() as u32).to_le_bytes())?;
    for m in &mats {
        out.write_all(&(m.nrows() as u64).to_le_bytes())?;
        out.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for v in m.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated model file while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes(what)?))
            .map_err(|_| Error::Format(format!("{what} does not fit in memory")))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize("matrix rows")?;
        let cols = self.usize("matrix cols")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("matrix {rows}x{cols} overflows")))?;
        let mut raw = Vec::new();
        (&mut self.inner).take(len as u64 * 8).read_to_end(&mut raw)?;
        if raw.len() != len * 8 {
            return Err(Error::Format("truncated model file while reading matrix data".into()));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix::from_shape_vec((rows, cols), data).expect("length checked"))
    }
}

pub fn read_model<R: Read>(input: R) -> Result<Model> {
    let mut cur = Cursor { inner: input };
    if &cur.bytes::<4>("magic")? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model format version {version}")));
    }
    let kind = cur.bytes::<1>("kind")?[0];
    let nsizes = cur.u32("size count")? as usize;
    let sizes = (0..nsizes)
        .map(|_| cur.usize("layer size"))
        .collect::<Result<Vec<_>>>()?;
    let nmat = cur.u32("matrix count")? as usize;
    let mut mats = (0..nmat).map(|_| cur.matrix()).collect::<Result<Vec<_>>>()?.into_iter();
    let mut next = || mats.next().ok_or_else(|| Error::Format("missing matrix".into()));

    let model = match (kind, sizes.as_slice()) {
        (1, &[_, _]) if nmat == 4 => Model::Autoencoder(AutoencoderParams {
            w1: next()?,
            b1: unrow(next()?),
            w2: next()?,
            b2: unrow(next()?),
        }),
        (2, s) if s.len() >= 3 && nmat == 2 * (s.len() - 2) + 1 => {
            let mut encoders = Vec::new();
            for _ in 0..s.len() - 2 {
                encoders.push(EncoderLayer {
                    w: next()?,
                    b: unrow(next()?),
                });
            }
            Model::Deep(DeepNetwork {
                encoders,
                softmax_w: next()?,
                class_count: s[s.len() - 1],
            })
        }
        (3, &[_, _, _]) if nmat == 2 => Model::Nmf(NmfModel { w: next()?, h: next()? }),
        _ => {
            return Err(Error::Format(format!(
                "inconsistent model header: kind {kind}, {nsizes} sizes, {nmat} matrices"
            )))
        }
    };
    check_sizes(&model, &sizes)?;
    Ok(model)
}

fn check_sizes(model: &Model, sizes: &[usize]) -> Result<()> {
    let actual: Vec<usize> = match model {
        Model::Autoencoder(p) => {
            p.validate()?;
            vec![p.input_size(), p.hidden_size()]
        }
        Model::Deep(net) => {
            net.validate()?;
            let mut s = net.sizes();
            s.push(net.class_count);
            s
        }
        Model::Nmf(m) => {
            if m.w.ncols() != m.h.nrows() {
                return Err(Error::shape("NMF rank", m.w.ncols(), m.h.nrows()));
            }
            vec![m.w.nrows(), m.rank(), m.h.ncols()]
        }
    };
    if actual != sizes {
        return Err(Error::Format(format!(
            "header sizes {sizes:?} disagree with matrices {actual:?}"
        )));
    }
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(BufReader::new(File::open(path)?))
}
