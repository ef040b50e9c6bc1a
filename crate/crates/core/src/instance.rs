//! Synthetic problem instances and their on-disk format.
//!
//! An instance is the triple `(F0, X0, Y)` with `Y = (F0/√N)·X0 + Ξ`, plus
//! the noisy copy `F' = (F0 + √η W)/√(1+η)` when `η` is finite.
//!
//! # File layout (`MFAMP1`)
//!
//! All integers and floats little-endian; matrices row-major `f64`.
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 6 | magic `MFAMP1` (the sixth byte is the format version) |
//! | 6 | 1 | flags: bit 0 = `F'` present, bit 1 = `η` infinite |
//! | 7 | 1 | reserved, zero |
//! | 8 | 24 | `N`, `M`, `P` as `u64` |
//! | 32 | 40 | `alpha`, `pi`, `rho`, `delta`, `eta` as `f64` (`eta = +inf` when infinite) |
//! | 72 | 8 | seed `u64` |
//! | 80 | 32 | byte offsets of `F0`, `X0`, `Y`, `F'` (`0` when absent) |
//! | 112 | … | sections in that order |
//! | end−4 | 4 | CRC-32 (IEEE) of bytes `6 .. end−4` |

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, FileError, Result};
use crate::params::{scaled_size, Eta, ModelParams};
use crate::rng::{standard_normal, substream, Stream};
use rand::Rng;

pub const MAGIC: &[u8; 6] = b"MFAMP1";
const HEADER_LEN: usize = 112;
const FLAG_FPRIME: u8 = 1;
const FLAG_ETA_INF: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// `M × N` dictionary with unit-variance elements (unscaled).
    pub f0: Array2<f64>,
    /// `N × P` spike-slab signals.
    pub x0: Array2<f64>,
    /// `M × P` measurements.
    pub y: Array2<f64>,
    /// `M × N` side information; `None` when `η` is infinite.
    pub fprime: Option<Array2<f64>>,
    pub params: ModelParams,
    pub seed: u64,
}

impl ProblemInstance {
    /// `F0 / √N`, the operator actually applied to the signals.
    pub fn scaled_dictionary(&self) -> Array2<f64> {
        &self.f0 / (self.n as f64).sqrt()
    }

    /// Sample ratios realised by the integer sizes.
    pub fn realized_alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn realized_pi(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    /// `M P > N M + P K` with `K = ρ N`.
    pub fn exceeds_counting_bound(&self) -> bool {
        let (n, m, p) = (self.n as f64, self.m as f64, self.p as f64);
        m * p > n * m + p * self.params.rho * n
    }
}

fn normal_matrix(rows: usize, cols: usize, seed: u64, stream: Stream) -> Array2<f64> {
    let mut rng = substream(seed, stream);
    Array2::from_shape_simple_fn((rows, cols), || standard_normal(&mut rng))
}

pub fn generate_instance(params: ModelParams, n: usize, seed: u64) -> Result<ProblemInstance> {
    params.validate()?;
    if n < 2 {
        return Err(Error::InvalidSize(format!("N must be >= 2, got {n}")));
    }
    let m = scaled_size(params.alpha, n);
    let p = scaled_size(params.pi, n);
    if m == 0 || p == 0 {
        return Err(Error::InvalidSize(format!(
            "alpha*N and pi*N round to M={m}, P={p}; both must be >= 1"
        )));
    }

    let f0 = normal_matrix(m, n, seed, Stream::Dictionary);

    let mut rng = substream(seed, Stream::Signal);
    let rho = params.rho;
    let x0 = Array2::from_shape_simple_fn((n, p), || {
        let on: f64 = rng.random();
        let value = standard_normal(&mut rng);
        if on < rho {
            value
        } else {
            0.0
        }
    });

    let mut y = (&f0 / (n as f64).sqrt()).dot(&x0);
    if params.delta > 0.0 {
        let noise = normal_matrix(m, p, seed, Stream::Noise);
        y.scaled_add(params.delta.sqrt(), &noise);
    }

    let fprime = match params.eta {
        Eta::Infinite => None,
        Eta::Finite(eta) if eta == 0.0 => Some(f0.clone()),
        Eta::Finite(eta) => {
            let w = normal_matrix(m, n, seed, Stream::SideNoise);
            let mut fp = f0.clone();
            fp.scaled_add(eta.sqrt(), &w);
            fp /= (1.0 + eta).sqrt();
            Some(fp)
        }
    };

    Ok(ProblemInstance {
        n,
        m,
        p,
        f0,
        x0,
        y,
        fprime,
        params,
        seed,
    })
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, a: &Array2<f64>) {
    for v in a.iter() {
        put_f64(buf, *v);
    }
}

/// Serialises an instance into the `MFAMP1` layout.
pub fn encode_instance(inst: &ProblemInstance) -> Vec<u8> {
    let (n, m, p) = (inst.n, inst.m, inst.p);
    let sizes = [m * n, n * p, m * p, inst.fprime.as_ref().map_or(0, |_| m * n)];
    let total = HEADER_LEN + 8 * sizes.iter().sum::<usize>() + 4;
    let mut buf = Vec::with_capacity(total);
    buf.extend_from_slice(MAGIC);
    let mut flags = 0u8;
    if inst.fprime.is_some() {
        flags |= FLAG_FPRIME;
    }
    if inst.params.eta.is_infinite() {
        flags |= FLAG_ETA_INF;
    }
    buf.push(flags);
    buf.push(0);
    for v in [n, m, p] {
        put_u64(&mut buf, v as u64);
    }
    let pr = &inst.params;
    for v in [pr.alpha, pr.pi, pr.rho, pr.delta, pr.eta.to_f64()] {
        put_f64(&mut buf, v);
    }
    put_u64(&mut buf, inst.seed);
    let mut offset = HEADER_LEN;
    for (i, &len) in sizes.iter().enumerate() {
        if i == 3 && inst.fprime.is_none() {
            put_u64(&mut buf, 0);
        } else {
            put_u64(&mut buf, offset as u64);
        }
        offset += 8 * len;
    }
    debug_assert_eq!(buf.len(), HEADER_LEN);
    put_matrix(&mut buf, &inst.f0);
    put_matrix(&mut buf, &inst.x0);
    put_matrix(&mut buf, &inst.y);
    if let Some(fp) = &inst.fprime {
        put_matrix(&mut buf, fp);
    }
    let crc = crc32fast::hash(&buf[6..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

struct Header {
    flags: u8,
    n: usize,
    m: usize,
    p: usize,
    values: [f64; 5],
    seed: u64,
    offsets: [u64; 4],
}

impl Header {
    fn parse(bytes: &[u8]) -> Header {
        let dims = [u64_at(bytes, 8), u64_at(bytes, 16), u64_at(bytes, 24)]
            .map(|v| usize::try_from(v).unwrap_or(usize::MAX));
        let mut values = [0.0; 5];
        for (i, v) in values.iter_mut().enumerate() {
            *v = f64_at(bytes, 32 + 8 * i);
        }
        let mut offsets = [0u64; 4];
        for (i, o) in offsets.iter_mut().enumerate() {
            *o = u64_at(bytes, 80 + 8 * i);
        }
        Header {
            flags: bytes[6],
            n: dims[0],
            m: dims[1],
            p: dims[2],
            values,
            seed: u64_at(bytes, 72),
            offsets,
        }
    }

    fn section_lengths(&self) -> Option<[usize; 4]> {
        let mn = self.m.checked_mul(self.n)?;
        let np = self.n.checked_mul(self.p)?;
        let mp = self.m.checked_mul(self.p)?;
        let fp = if self.flags & FLAG_FPRIME != 0 { mn } else { 0 };
        Some([mn, np, mp, fp])
    }

    fn expected_len(&self) -> Option<u64> {
        let lens = self.section_lengths()?;
        let mut total = HEADER_LEN as u64 + 4;
        for l in lens {
            total = total.checked_add((l as u64).checked_mul(8)?)?;
        }
        Some(total)
    }
}

/// Parses the `MFAMP1` layout.
pub fn decode_instance(bytes: &[u8]) -> Result<ProblemInstance, FileError> {
    let actual = bytes.len() as u64;
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Err(FileError::Truncated {
                expected: HEADER_LEN as u64 + 4,
                actual,
            })
        } else {
            Err(FileError::BadMagic)
        };
    }
    if &bytes[..5] != &MAGIC[..5] {
        return Err(FileError::BadMagic);
    }
    if bytes[5] != MAGIC[5] {
        return Err(FileError::UnsupportedVersion(bytes[5] as char));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FileError::Truncated {
            expected: HEADER_LEN as u64 + 4,
            actual,
        });
    }
    let header = Header::parse(bytes);
    let expected = header.expected_len();

    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4-byte slice"));
    let computed = crc32fast::hash(&bytes[6..body_end]);
    if stored != computed {
        if let Some(exp) = expected {
            if actual < exp {
                return Err(FileError::Truncated { expected: exp, actual });
            }
        }
        return Err(FileError::Checksum { stored, computed });
    }

    let expected = expected.ok_or_else(|| FileError::Format("dimensions overflow".into()))?;
    if actual != expected {
        return Err(FileError::Format(format!(
            "length {actual} does not match header ({expected})"
        )));
    }
    if header.flags & !(FLAG_FPRIME | FLAG_ETA_INF) != 0 || bytes[7] != 0 {
        return Err(FileError::Format("unknown flag bits".into()));
    }
    let lens = header.section_lengths().expect("checked above");
    let mut offset = HEADER_LEN as u64;
    for (i, &len) in lens.iter().enumerate() {
        let want = if i == 3 && header.flags & FLAG_FPRIME == 0 { 0 } else { offset };
        if header.offsets[i] != want {
            return Err(FileError::Format(format!("section {i} offset {} != {want}", header.offsets[i])));
        }
        offset += 8 * len as u64;
    }

    let [alpha, pi, rho, delta, eta_raw] = header.values;
    let eta = if header.flags & FLAG_ETA_INF != 0 {
        if eta_raw != f64::INFINITY {
            return Err(FileError::Format("infinite-eta flag with finite eta".into()));
        }
        Eta::Infinite
    } else {
        Eta::Finite(eta_raw)
    };
    let params = ModelParams::new(alpha, pi, rho, delta, eta).map_err(|e| FileError::Format(e.to_string()))?;
    if params.eta.is_infinite() == (header.flags & FLAG_FPRIME != 0) {
        return Err(FileError::Format("side information present iff eta is finite".into()));
    }

    let read = |idx: usize, rows: usize, cols: usize| -> Array2<f64> {
        let start = header.offsets[idx] as usize;
        let data: Vec<f64> = bytes[start..start + 8 * rows * cols]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Array2::from_shape_vec((rows, cols), data).expect("length checked")
    };
    let (n, m, p) = (header.n, header.m, header.p);
    let fprime = (header.flags & FLAG_FPRIME != 0).then(|| read(3, m, n));
    Ok(ProblemInstance {
        n,
        m,
        p,
        f0: read(0, m, n),
        x0: read(1, n, p),
        y: read(2, m, p),
        fprime,
        params,
        seed: header.seed,
    })
}

pub fn save_instance(inst: &ProblemInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_instance(inst)).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(decode_instance(&bytes)?)
}
