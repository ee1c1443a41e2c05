//! Binary serialization of trains and fields.
//!
//! Format: magic "QTT1", element tag (0 real / 1 complex), an optional
//! layout descriptor (d, L, format, space, arity), site count, site dims,
//! bond ranks, then core entries in row-major order as little-endian f64
//! (re/im interleaved for complex). Round-trips are exact.

use crate::layout::{Arity, Field, Format, QttLayout, Space};
use crate::scalar::Scalar;
use crate::tt::{TensorTrain, TtError};
use ndarray::Array3;
use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum IoError {
    #[error("bad magic or truncated file")]
    BadHeader,
    #[error("element type mismatch: file holds {0}")]
    ElementType(&'static str),
    #[error("unknown enum tag {0}")]
    BadTag(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tt(#[from] TtError),
}

const MAGIC: &[u8; 4] = b"QTT1";

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, IoError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| IoError::BadHeader)?;
    Ok(u32::from_le_bytes(b))
}

fn format_tag(f: Format) -> u8 {
    match f {
        Format::X1X2Y1Y2 => 0,
        Format::X1X2Y2Y1 => 1,
        Format::X2X1Y1Y2 => 2,
        Format::X1Y1 => 3,
    }
}

fn format_from(t: u8) -> Result<Format, IoError> {
    Ok(match t {
        0 => Format::X1X2Y1Y2,
        1 => Format::X1X2Y2Y1,
        2 => Format::X2X1Y1Y2,
        3 => Format::X1Y1,
        other => return Err(IoError::BadTag(other)),
    })
}

fn write_layout<W: Write>(w: &mut W, lay: &QttLayout) -> std::io::Result<()> {
    w.write_all(&[
        lay.d as u8,
        (lay.level & 0xff) as u8,
        (lay.level >> 8) as u8,
        format_tag(lay.format),
        match lay.space {
            Space::Physical => 0,
            Space::Fourier => 1,
        },
        match lay.arity {
            Arity::Scalar => 0,
            Arity::Vector => 1,
            Arity::Matrix => 2,
        },
    ])
}

fn read_layout<R: Read>(r: &mut R) -> Result<QttLayout, IoError> {
    let mut b = [0u8; 6];
    r.read_exact(&mut b).map_err(|_| IoError::BadHeader)?;
    let space = match b[4] {
        0 => Space::Physical,
        1 => Space::Fourier,
        other => return Err(IoError::BadTag(other)),
    };
    let arity = match b[5] {
        0 => Arity::Scalar,
        1 => Arity::Vector,
        2 => Arity::Matrix,
        other => return Err(IoError::BadTag(other)),
    };
    Ok(QttLayout::new(
        b[0] as usize,
        b[1] as usize | ((b[2] as usize) << 8),
        format_from(b[3])?,
        space,
        arity,
    ))
}

fn write_train_body<S: Scalar, W: Write>(w: &mut W, tt: &TensorTrain<S>) -> std::io::Result<()> {
    let dims = tt.site_dims();
    let ranks = tt.ranks();
    write_u32(w, dims.len() as u32)?;
    for &d in &dims {
        write_u32(w, d as u32)?;
    }
    for &r in &ranks {
        write_u32(w, r as u32)?;
    }
    for core in tt.cores() {
        for v in core.iter() {
            w.write_all(&v.re().to_le_bytes())?;
            if S::IS_COMPLEX {
                w.write_all(&v.im().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_train_body<S: Scalar, R: Read>(r: &mut R) -> Result<TensorTrain<S>, IoError> {
    let nsites = read_u32(r)? as usize;
    let mut dims = Vec::with_capacity(nsites);
    for _ in 0..nsites {
        dims.push(read_u32(r)? as usize);
    }
    let mut ranks = Vec::with_capacity(nsites + 1);
    for _ in 0..=nsites {
        ranks.push(read_u32(r)? as usize);
    }
    let mut cores = Vec::with_capacity(nsites);
    let mut buf = [0u8; 8];
    for s in 0..nsites {
        let (r0, n, r1) = (ranks[s], dims[s], ranks[s + 1]);
        let mut core = Array3::from_elem((r0, n, r1), S::ZERO);
        for v in core.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| IoError::BadHeader)?;
            let re = f64::from_le_bytes(buf);
            let im = if S::IS_COMPLEX {
                r.read_exact(&mut buf).map_err(|_| IoError::BadHeader)?;
                f64::from_le_bytes(buf)
            } else {
                0.0
            };
            *v = S::from_complex(Complex64::new(re, im));
        }
        cores.push(core);
    }
    Ok(TensorTrain::new(cores)?)
}

pub fn write_field<S: Scalar, W: Write>(w: &mut W, field: &Field<S>) -> Result<(), IoError> {
    w.write_all(MAGIC)?;
    w.write_all(&[u8::from(S::IS_COMPLEX), 1])?;
    write_layout(w, &field.layout)?;
    write_train_body(w, &field.tt)?;
    Ok(())
}

pub fn read_field<S: Scalar, R: Read>(r: &mut R) -> Result<Field<S>, IoError> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(|_| IoError::BadHeader)?;
    if &head[..4] != MAGIC {
        return Err(IoError::BadHeader);
    }
    if head[4] != u8::from(S::IS_COMPLEX) {
        return Err(IoError::ElementType(if head[4] == 1 { "complex" } else { "real" }));
    }
    if head[5] != 1 {
        return Err(IoError::BadTag(head[5]));
    }
    let layout = read_layout(r)?;
    let tt = read_train_body(r)?;
    Field::new(tt, layout).map_err(|_| IoError::BadHeader)
}

pub fn write_train<S: Scalar, W: Write>(w: &mut W, tt: &TensorTrain<S>) -> Result<(), IoError> {
    w.write_all(MAGIC)?;
    w.write_all(&[u8::from(S::IS_COMPLEX), 0])?;
    write_train_body(w, tt)?;
    Ok(())
}

pub fn read_train<S: Scalar, R: Read>(r: &mut R) -> Result<TensorTrain<S>, IoError> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(|_| IoError::BadHeader)?;
    if &head[..4] != MAGIC {
        return Err(IoError::BadHeader);
    }
    if head[4] != u8::from(S::IS_COMPLEX) {
        return Err(IoError::ElementType(if head[4] == 1 { "complex" } else { "real" }));
    }
    if head[5] != 0 {
        return Err(IoError::BadTag(head[5]));
    }
    read_train_body(r)
}

pub fn save_field<S: Scalar>(path: &Path, field: &Field<S>) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field(&mut f, field)
}

pub fn load_field<S: Scalar>(path: &Path) -> Result<Field<S>, IoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_field(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_roundtrip_complex_field() {
        let lay = QttLayout::new(2, 4, Format::X1Y1, Space::Fourier, Arity::Vector);
        let tt = TensorTrain::<Complex64>::random(&lay.site_dims(), &vec![5; lay.num_sites() - 1], 9).unwrap();
        let f = Field::new(tt, lay).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let g: Field<Complex64> = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(g.layout, f.layout);
        for (a, b) in f.tt.cores().iter().zip(g.tt.cores()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn exact_roundtrip_real_train() {
        let tt = TensorTrain::<f64>::random(&[2, 3, 2, 2], &[2, 4, 2], 4).unwrap();
        let mut buf = Vec::new();
        write_train(&mut buf, &tt).unwrap();
        let back: TensorTrain<f64> = read_train(&mut buf.as_slice()).unwrap();
        for (a, b) in tt.cores().iter().zip(back.cores()) {
            assert_eq!(a, b);
        }
        // element type mismatch is rejected
        assert!(matches!(
            read_train::<Complex64, _>(&mut buf.as_slice()),
            Err(IoError::ElementType(_))
        ));
    }
}
