//! Finite-mode Brownian increments with counter-based, order-independent seeding.
//!
//! The draw for step `n` and mode `k` is a pure function of
//! `(seed, stream, level, n, k)`: a ChaCha8 keystream keyed by the seed, on a
//! stream selected by the label and level, read at word `4 (n K + k)`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Parameters of one family of Brownian paths.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub modes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub stream: String,
}

impl NoiseSpec {
    pub fn new(modes: usize, steps: usize, horizon: f64, seed: u64, stream: impl Into<String>) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("noise grid needs at least one step".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("noise horizon must be positive, got {horizon}")));
        }
        Ok(Self { modes, steps, horizon, seed, stream: stream.into() })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_n = n T / N`.
    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.steps as f64
    }
}

/// Increments `dW^k_n`, row-major `[step][mode]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    increments: Vec<f64>,
    steps: usize,
    modes: usize,
    dt: f64,
    pub seed: u64,
    pub stream: String,
    pub level: u32,
}

/// 64-bit FNV-1a, used to turn stream labels into ChaCha stream ids.
pub fn stream_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed normal generator: `normal(counter)` depends only on the key and the counter.
pub struct CounterNormal {
    rng: ChaCha8Rng,
}

impl CounterNormal {
    pub fn new(seed: u64, stream: &str, level: u32) -> Self {
        let mut key = [0u8; 32];
        let mut s = seed;
        for chunk in key.chunks_mut(8) {
            s = splitmix(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_hash(stream) ^ splitmix(level as u64 + 1));
        Self { rng }
    }

    /// Standard normal draw number `counter` (Box-Muller on two 53-bit uniforms).
    pub fn normal(&mut self, counter: u64) -> f64 {
        self.rng.set_word_pos(4 * counter as u128);
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0);
        let u2 = (b >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Generate the path of `spec` at level 0.
pub fn sample_path(spec: &NoiseSpec) -> Result<NoisePath> {
    let total = spec
        .steps
        .checked_mul(spec.modes)
        .filter(|t| (*t as u128) * 4 < (1u128 << 68))
        .ok_or_else(|| Error::Config("steps x modes overflows the counter space".into()))?;
    let dt = spec.dt();
    let sd = dt.sqrt();
    let mut gen = CounterNormal::new(spec.seed, &spec.stream, 0);
    let increments = (0..total as u64).map(|c| sd * gen.normal(c)).collect();
    Ok(NoisePath {
        increments,
        steps: spec.steps,
        modes: spec.modes,
        dt,
        seed: spec.seed,
        stream: spec.stream.clone(),
        level: 0,
    })
}

impl NoisePath {
    /// Deterministic path with all increments zero.
    pub fn zeros(steps: usize, modes: usize, dt: f64) -> Self {
        Self { increments: vec![0.0; steps * modes], steps, modes, dt, seed: 0, stream: "zero".into(), level: 0 }
    }

    pub fn from_increments(increments: Vec<f64>, steps: usize, modes: usize, dt: f64) -> Result<Self> {
        if increments.len() != steps * modes {
            return Err(Error::Config("increment array does not match steps x modes".into()));
        }
        Ok(Self { increments, steps, modes, dt, seed: 0, stream: "explicit".into(), level: 0 })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increments of step `n` over all modes.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.increments[n * self.modes..(n + 1) * self.modes]
    }

    /// Mean of `dW / sqrt(dt)` over all entries (should be within `5/sqrt(N K)` of 0).
    pub fn standardized_mean(&self) -> f64 {
        if self.increments.is_empty() {
            return 0.0;
        }
        let s = self.dt.sqrt();
        self.increments.iter().map(|w| w / s).sum::<f64>() / self.increments.len() as f64
    }

    /// Brownian-bridge subdivision of every interval into `factor` pieces.
    pub fn refine(&self, factor: usize) -> Result<NoisePath> {
        if factor < 2 || !factor.is_power_of_two() {
            return Err(Error::Config(format!("refinement factor must be a power of two >= 2, got {factor}")));
        }
        let mut cur = self.clone();
        let mut f = factor;
        while f > 1 {
            cur = cur.halve();
            f /= 2;
        }
        Ok(cur)
    }

    fn halve(&self) -> NoisePath {
        let level = self.level + 1;
        let mut gen = CounterNormal::new(self.seed, &self.stream, level);
        let half = 0.5 * self.dt;
        let sd = 0.5 * self.dt.sqrt();
        let k = self.modes;
        let mut out = vec![0.0; 2 * self.increments.len()];
        for n in 0..self.steps {
            for m in 0..k {
                let w = self.increments[n * k + m];
                let z = gen.normal((n * k + m) as u64);
                let left = 0.5 * w + sd * z;
                out[(2 * n) * k + m] = left;
                out[(2 * n + 1) * k + m] = w - left;
            }
        }
        NoisePath {
            increments: out,
            steps: 2 * self.steps,
            modes: k,
            dt: half,
            seed: self.seed,
            stream: self.stream.clone(),
            level,
        }
    }

    /// Sum consecutive groups of `factor` increments (inverse of `refine`).
    pub fn aggregate(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::Config(format!("cannot aggregate {} steps by {factor}", self.steps)));
        }
        let k = self.modes;
        let steps = self.steps / factor;
        let mut out = vec![0.0; steps * k];
        for n in 0..steps {
            for j in 0..factor {
                for m in 0..k {
                    out[n * k + m] += self.increments[(n * factor + j) * k + m];
                }
            }
        }
        let drop = factor.trailing_zeros();
        Ok(NoisePath {
            increments: out,
            steps,
            modes: k,
            dt: self.dt * factor as f64,
            seed: self.seed,
            stream: self.stream.clone(),
            level: self.level.saturating_sub(drop),
        })
    }

    /// Raw layout: `u64 N, u64 K, u64 seed, u64 level, f64 dt`, then `N K` f64,
    /// all little-endian, row-major by step.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.steps as u64, self.modes as u64, self.seed, self.level as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.dt.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<NoisePath> {
        let mut b = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let steps = u64::from_le_bytes(next(&mut r)?) as usize;
        let modes = u64::from_le_bytes(next(&mut r)?) as usize;
        let seed = u64::from_le_bytes(next(&mut r)?);
        let level = u64::from_le_bytes(next(&mut r)?) as u32;
        let dt = f64::from_le_bytes(next(&mut r)?);
        let total = steps.checked_mul(modes).ok_or_else(|| Error::Io("corrupt noise header".into()))?;
        let mut increments = Vec::with_capacity(total);
        for _ in 0..total {
            increments.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(NoisePath { increments, steps, modes, dt, seed, stream: "replay".into(), level })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }
}

/// A handle to a path shared by several runs.
#[derive(Debug, Clone)]
pub struct NoiseHandle {
    pub label: String,
    path: Arc<NoisePath>,
}

impl NoiseHandle {
    pub fn path(&self) -> &NoisePath {
        &self.path
    }

    /// True when both handles refer to the same generated path.
    pub fn shares_with(&self, other: &NoiseHandle) -> bool {
        Arc::ptr_eq(&self.path, &other.path)
    }
}

/// One path, many labelled handles.
pub fn couple(spec: &NoiseSpec, run_labels: &[&str]) -> Result<Vec<NoiseHandle>> {
    let path = Arc::new(sample_path(spec)?);
    Ok(run_labels.iter().map(|l| NoiseHandle { label: l.to_string(), path: path.clone() }).collect())
}
