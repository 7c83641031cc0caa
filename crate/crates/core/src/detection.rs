//! Wiener increments and the balanced-heterodyne photocurrent record.
//!
//! The noise is counter based: draw `k` of seed `s` is a pure function of
//! `(s, k)`. Each draw consumes 4 words (two `u64`) of a ChaCha8 stream keyed
//! by the seed, at word position `4 k`, and turns them into one standard
//! normal via the cosine branch of Box-Muller.

use std::io::{BufRead, Read, Write};

use num_complex::Complex64 as C64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhysicalParams;
use crate::state::CumulantState;

/// Identifier of the noise algorithm, recorded in every output.
pub const RNG_ALGORITHM: &str = "chacha8-boxmuller-cos/v1";

const WORDS_PER_DRAW: u128 = 4;

/// Reproducible `dW ~ N(0, dt)` indexed by step counter.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    sqrt_dt: f64,
    rng: ChaCha8Rng,
    next: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, dt: f64) -> Self {
        NoiseStream {
            seed,
            sqrt_dt: dt.sqrt(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            next: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Standard normal draw number `counter`.
    pub fn standard_normal(&mut self, counter: u64) -> f64 {
        if counter != self.next {
            self.rng.set_word_pos(WORDS_PER_DRAW * counter as u128);
        }
        self.next = counter + 1;
        let x = self.rng.next_u64();
        let y = self.rng.next_u64();
        let u1 = ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (y >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Wiener increment for step `counter`.
    pub fn increment(&mut self, counter: u64) -> f64 {
        self.sqrt_dt * self.standard_normal(counter)
    }
}

/// Stateless lookup of a single increment.
pub fn wiener_increment(seed: u64, counter: u64, dt: f64) -> f64 {
    NoiseStream::new(seed, dt).increment(counter)
}

/// Per-trajectory seed derived from a master seed (splitmix64 of both).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(master) ^ index)
}

/// `J dt = sqrt(eta kappa2) 2 Re[e^{-i Delta t} <a>] dt + dW`.
pub fn photocurrent_increment(
    state: &CumulantState,
    t: f64,
    dt: f64,
    dw: f64,
    params: &PhysicalParams,
) -> f64 {
    let phase = C64::from_polar(1.0, -params.delta_het * t);
    params.measurement_rate_sqrt() * 2.0 * (phase * state.a()).re * dt + dw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMark {
    pub kind: String,
    pub start_s: f64,
    pub end_s: f64,
    pub detect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
    pub dt_s: f64,
    pub sample_dt_s: f64,
    pub delta_het_hz: f64,
    pub monitored: bool,
    pub ensembles: Vec<String>,
    pub stages: Vec<StageMark>,
    pub initial_n: f64,
    pub initial_z: Vec<f64>,
}

impl RecordMeta {
    /// Time span `[start, end]` covered by detection-active stages, if any.
    pub fn detection_window(&self) -> Option<(f64, f64)> {
        let active: Vec<&StageMark> = self.stages.iter().filter(|s| s.detect).collect();
        Some((active.first()?.start_s, active.last()?.end_s))
    }
}

/// Sampled output of one trajectory. `times[k]` is the end of bin `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub meta: RecordMeta,
    pub times: Vec<f64>,
    /// Binned photocurrent, `sum(J dt) / sample_dt`.
    pub current: Vec<f64>,
    pub channel_names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
}

const BINARY_MAGIC: &[u8; 8] = b"SRTRJ\0\0\x01";

impl TrajectoryRecord {
    pub fn new(meta: RecordMeta, channel_names: Vec<String>) -> Self {
        let channels = vec![Vec::new(); channel_names.len()];
        TrajectoryRecord {
            meta,
            times: Vec::new(),
            current: Vec::new(),
            channel_names,
            channels,
        }
    }

    pub fn push(&mut self, t: f64, current: f64, row: &[f64]) {
        debug_assert_eq!(row.len(), self.channels.len());
        self.times.push(t);
        self.current.push(current);
        for (c, &v) in self.channels.iter_mut().zip(row) {
            c.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        let idx = self.channel_names.iter().position(|n| n == name)?;
        Some(&self.channels[idx])
    }

    /// Index range of samples whose bin end lies in `(t_start, t_end]`.
    pub fn sample_range(&self, t_start: f64, t_end: f64) -> std::ops::Range<usize> {
        let eps = 1e-9 * self.meta.sample_dt_s;
        let lo = self.times.partition_point(|&t| t <= t_start + eps);
        let hi = self.times.partition_point(|&t| t <= t_end + eps);
        lo..hi.max(lo)
    }

    fn header(&self) -> Vec<&str> {
        let mut h = vec!["t", "J"];
        h.extend(self.channel_names.iter().map(String::as_str));
        h
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = serde_json::to_string(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "# {meta}")?;
        writeln!(w, "{}", self.header().join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            push_num(&mut line, self.times[k]);
            line.push(',');
            push_num(&mut line, self.current[k]);
            for c in &self.channels {
                line.push(',');
                push_num(&mut line, c[k]);
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Format("empty file".into()))??;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| Error::Format("missing meta header".into()))?;
        let meta: RecordMeta = serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        let header = lines.next().ok_or_else(|| Error::Format("missing column header".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "t" || cols[1] != "J" {
            return Err(Error::Format("column header must start with t,J".into()));
        }
        let names = cols[2..].iter().map(|s| s.to_string()).collect();
        let mut rec = TrajectoryRecord::new(meta, names);
        let mut row = Vec::with_capacity(cols.len());
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            row.clear();
            for f in line.split(',') {
                row.push(
                    f.parse::<f64>()
                        .map_err(|e| Error::Format(format!("row {}: {e}", ln + 1)))?,
                );
            }
            if row.len() != cols.len() {
                return Err(Error::Format(format!("row {} has {} fields", ln + 1, row.len())));
            }
            rec.push(row[0], row[1], &row[2..]);
        }
        Ok(rec)
    }

    /// Binary container: magic, u32 LE meta length, JSON meta, u32 column
    /// count, column names (u32 length + UTF-8 each), u64 row count, then
    /// column-major f64 LE data starting with `t` and `J`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        let header = self.header();
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        for h in &header {
            w.write_all(&(h.len() as u32).to_le_bytes())?;
            w.write_all(h.as_bytes())?;
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let mut cols: Vec<&[f64]> = vec![&self.times, &self.current];
        cols.extend(self.channels.iter().map(Vec::as_slice));
        for c in cols {
            for v in c {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta: RecordMeta = serde_json::from_slice(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let ncols = read_u32(&mut r)? as usize;
        if ncols < 2 {
            return Err(Error::Format("fewer than two columns".into()));
        }
        let mut names = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            names.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        let mut cols = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let mut c = Vec::with_capacity(rows);
            for _ in 0..rows {
                r.read_exact(&mut b8)?;
                c.push(f64::from_le_bytes(b8));
            }
            cols.push(c);
        }
        let mut it = cols.into_iter();
        Ok(TrajectoryRecord {
            meta,
            times: it.next().unwrap_or_default(),
            current: it.next().unwrap_or_default(),
            channel_names: names.split_off(2),
            channels: it.collect(),
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn push_num(out: &mut String, v: f64) {
    use std::fmt::Write as _;
    // 17 significant digits round-trip every f64.
    let _ = write!(out, "{v:.16e}");
}
