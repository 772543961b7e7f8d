//! Seeded synthetic sequences and observation file formats.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded through
//! `seed_from_u64`. It is fixed for this release; changing it changes every
//! sampled sequence.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{HmmModel, ObservationSequence};

pub type SimRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SplitMix64 mix of `(seed, stream)`; used to derive per-component seeds
/// from the single user-facing seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// Latent states `x_1..x_n`.
    pub states: Vec<usize>,
    pub observations: ObservationSequence,
    pub seed: u64,
}

fn draw_categorical<R: Rng + ?Sized>(rng: &mut R, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum
    last_positive
}

/// Draws `x_0 ~ p_0`, then `x_t ~ M[x_{t-1}, ·]` and
/// `y_t ~ N(μ_{x_t}, σ_{x_t})` for `t = 1..n`.
pub fn sample_sequence(model: &HmmModel, n: usize, seed: u64) -> Result<SampleOutput> {
    if n == 0 {
        return Err(Error::InvalidInput("sequence length must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let m = model.transition();
    let k = model.n_states();
    let mut x = draw_categorical(&mut rng, model.initial().probs().iter().copied());
    let mut states = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        x = draw_categorical(&mut rng, (0..k).map(|j| m[(x, j)]));
        let z: f64 = StandardNormal.sample(&mut rng);
        states.push(x);
        values.push(model.means()[x] + model.stds()[x] * z);
    }
    Ok(SampleOutput {
        states,
        observations: ObservationSequence::new(values)?,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsFormat {
    /// One decimal value per line.
    Text,
    /// Raw little-endian `f64`.
    Binary,
}

pub fn write_observations<W: Write>(w: W, obs: &[f64], format: ObsFormat) -> Result<()> {
    let mut w = BufWriter::new(w);
    match format {
        ObsFormat::Text => {
            for v in obs {
                // `{:?}` prints the shortest round-tripping representation
                writeln!(w, "{v:?}")?;
            }
        }
        ObsFormat::Binary => {
            for v in obs {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations<R: Read>(r: R, format: ObsFormat) -> Result<ObservationSequence> {
    let mut values = Vec::new();
    match format {
        ObsFormat::Text => {
            for (i, line) in BufReader::new(r).lines().enumerate() {
                let line = line?;
                let t = line.trim();
                if t.is_empty() || t.starts_with('#') {
                    continue;
                }
                let v: f64 = t.parse().map_err(|_| {
                    Error::InvalidInput(format!("line {}: cannot parse {t:?} as a number", i + 1))
                })?;
                values.push(v);
            }
        }
        ObsFormat::Binary => {
            let mut bytes = Vec::new();
            BufReader::new(r).read_to_end(&mut bytes)?;
            if bytes.len() % 8 != 0 {
                return Err(Error::InvalidInput(format!(
                    "binary observation file length {} is not a multiple of 8",
                    bytes.len()
                )));
            }
            values.extend(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))),
            );
        }
    }
    ObservationSequence::new(values)
}

pub fn load_observations(path: impl AsRef<Path>, format: ObsFormat) -> Result<ObservationSequence> {
    read_observations(std::fs::File::open(path)?, format)
}

pub fn write_states<W: Write>(w: W, states: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for s in states {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}
