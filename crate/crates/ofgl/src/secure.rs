//! Pairwise-mask secure aggregation of client statistics and pooled
//! recovery of global class-wise moments.
//!
//! Clients flatten their [`ClassStats`](crate::stats::ClassStats) into a
//! fixed layout of per-class blocks — presence indicator, count `N`,
//! `N * mean`, `(N - 1) * variance`, and `N * mean^2` — encode them as
//! fixed-point residues mod `2^62`, and add a personal mask plus pairwise
//! masks with opposite signs at the two endpoints of every client pair.
//! Summing all uploads cancels the pairwise masks exactly (integer
//! arithmetic, no reduction-order sensitivity); subtracting the collected
//! personal masks reveals the sum and nothing else.
//!
//! Key exchange is simulated by a trusted dealer ([`MaskSeedMatrix`]); the
//! mask streams expand the shared seeds with ChaCha20 on both endpoints.
//! As in the underlying protocol sketch, the server collects the personal
//! masks directly from clients, which would let a dishonest server unmask
//! an individual upload; the honest-parties assumption is inherited here.

use crate::error::{Error, Result};
use crate::rng::{derive_seed_indexed, rng_from_seed};
use crate::stats::ClassStats;
use ndarray::Array1;
use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Fixed-point codec over the modular group `[0, 2^modulus_bits)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointCodec {
    /// Scale is `2^scale_bits`.
    pub scale_bits: u32,
    /// Modulus is `2^modulus_bits`; power of two so masks are exactly
    /// uniform under `next_u64() & (modulus - 1)`.
    pub modulus_bits: u32,
    /// Per-entry magnitude bound accepted by the encoder.
    pub value_bound: f64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec {
            scale_bits: 16,
            modulus_bits: 62,
            value_bound: 1e9,
        }
    }
}

impl FixedPointCodec {
    pub fn scale(&self) -> f64 {
        (1u64 << self.scale_bits) as f64
    }

    pub fn modulus(&self) -> u64 {
        1u64 << self.modulus_bits
    }

    fn mask(&self) -> u64 {
        self.modulus() - 1
    }

    /// No true sum of `num_clients` in-range values may wrap the modulus.
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.modulus_bits == 0 || self.modulus_bits > 62 {
            return Err(Error::Config("modulus_bits must be in 1..=62".into()));
        }
        if self.scale_bits >= self.modulus_bits {
            return Err(Error::Config("scale_bits must be below modulus_bits".into()));
        }
        let headroom = self.modulus() as f64 / (2.0 * num_clients as f64);
        if self.value_bound * self.scale() >= headroom {
            return Err(Error::Config(format!(
                "value_bound {} too large: {} clients could overflow the {}-bit modulus",
                self.value_bound, num_clients, self.modulus_bits
            )));
        }
        Ok(())
    }

    /// `round(x * scale) mod modulus`, two's-complement style for negatives.
    pub fn encode_value(&self, x: f64) -> Result<u64> {
        if !x.is_finite() || x.abs() > self.value_bound {
            return Err(Error::Numeric(format!(
                "value {x} exceeds codec bound {}",
                self.value_bound
            )));
        }
        let q = (x * self.scale()).round() as i128;
        Ok(q.rem_euclid(self.modulus() as i128) as u64)
    }

    /// Centered residue divided by the scale.
    pub fn decode_value(&self, r: u64) -> f64 {
        let m = self.modulus();
        let centered = if r >= m / 2 {
            r as i128 - m as i128
        } else {
            r as i128
        };
        centered as f64 / self.scale()
    }

    pub fn encode(&self, xs: &[f64]) -> Result<Vec<u64>> {
        xs.iter().map(|&x| self.encode_value(x)).collect()
    }

    pub fn decode(&self, rs: &[u64]) -> Vec<f64> {
        rs.iter().map(|&r| self.decode_value(r)).collect()
    }

    pub fn add_mod(&self, a: u64, b: u64) -> u64 {
        (a + b) & self.mask()
    }

    pub fn sub_mod(&self, a: u64, b: u64) -> u64 {
        (a + self.modulus() - b) & self.mask()
    }
}

/// Trusted-setup seed table: one shared seed per client pair plus one
/// personal seed per client.
#[derive(Debug, Clone)]
pub struct MaskSeedMatrix {
    num_clients: usize,
    pair_seeds: Vec<u64>,
    personal_seeds: Vec<u64>,
}

impl MaskSeedMatrix {
    /// Simulate the key exchange: a dealer derives all seeds from one root.
    pub fn trusted_setup(root_seed: u64, num_clients: usize) -> Self {
        let mut pair_seeds = Vec::with_capacity(num_clients * num_clients);
        for k in 0..num_clients {
            for j in 0..num_clients {
                let (lo, hi) = (k.min(j), k.max(j));
                pair_seeds.push(derive_seed_indexed(
                    root_seed,
                    "pair",
                    (lo * num_clients + hi) as u64,
                ));
            }
        }
        let personal_seeds = (0..num_clients)
            .map(|k| derive_seed_indexed(root_seed, "personal", k as u64))
            .collect();
        MaskSeedMatrix {
            num_clients,
            pair_seeds,
            personal_seeds,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    /// Shared seed of pair `(k, j)`; symmetric by construction.
    pub fn pair_seed(&self, k: usize, j: usize) -> u64 {
        self.pair_seeds[k * self.num_clients + j]
    }

    pub fn personal_seed(&self, k: usize) -> u64 {
        self.personal_seeds[k]
    }
}

/// Layout of the flattened statistics upload for a fixed `(C, dim)`.
///
/// Per class, in order: presence indicator, count, `N * mean` (dim),
/// `(N - 1) * variance` (dim), `N * mean^2` (dim). Absent classes are
/// all-zero blocks with indicator 0, so every client's vector has the same
/// length and the summed indicator counts the contributors per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsLayout {
    pub num_classes: usize,
    /// Propagated feature dimension `(h + 1) * f`.
    pub dim: usize,
}

impl StatsLayout {
    pub fn class_stride(&self) -> usize {
        2 + 3 * self.dim
    }

    pub fn len(&self) -> usize {
        self.num_classes * self.class_stride()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_base(&self, c: usize) -> usize {
        c * self.class_stride()
    }
}

/// A client's flattened statistics, still in the clear.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsVector {
    pub layout: StatsLayout,
    pub values: Vec<f64>,
}

impl StatsVector {
    pub fn from_class_stats(stats: &ClassStats) -> Self {
        let layout = StatsLayout {
            num_classes: stats.classes.len(),
            dim: stats.dim,
        };
        let mut values = vec![0.0; layout.len()];
        for (c, moments) in stats.classes.iter().enumerate() {
            let Some(m) = moments else { continue };
            let base = layout.class_base(c);
            let n = m.count as f64;
            values[base] = 1.0;
            values[base + 1] = n;
            for i in 0..layout.dim {
                values[base + 2 + i] = n * m.mean[i];
                values[base + 2 + layout.dim + i] = (n - 1.0) * m.variance[i];
                values[base + 2 + 2 * layout.dim + i] = n * m.mean[i] * m.mean[i];
            }
        }
        StatsVector { layout, values }
    }

    /// Entrywise f64 sum; the no-protocol reference path.
    pub fn sum_plaintext(vectors: &[StatsVector]) -> Result<Vec<f64>> {
        let layout = vectors
            .first()
            .ok_or_else(|| Error::Shape("no statistics vectors to sum".into()))?
            .layout;
        let mut out = vec![0.0; layout.len()];
        for v in vectors {
            if v.layout != layout {
                return Err(Error::Shape("statistics layout mismatch".into()));
            }
            for (acc, x) in out.iter_mut().zip(&v.values) {
                *acc += x;
            }
        }
        Ok(out)
    }
}

/// A pairwise- and personally-masked upload; the only client payload the
/// server ever sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpload {
    pub client_id: usize,
    pub values: Vec<u64>,
}

/// The retained personal mask `b_k`, surrendered to the server for
/// unmasking the sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonalMask {
    pub client_id: usize,
    pub values: Vec<u64>,
}

fn mask_stream(seed: u64, len: usize, codec: &FixedPointCodec) -> Vec<u64> {
    let mut rng = rng_from_seed(seed);
    (0..len)
        .map(|_| rng.next_u64() & (codec.modulus() - 1))
        .collect()
}

/// Mask a client's statistics vector.
///
/// `y_k = enc(u) + b_k + sum_{j != k} sign(k, j) * r_{k, j} (mod M)` with
/// sign +1 iff `k < j`; both endpoints of a pair expand the same seed, so
/// the pairwise terms cancel in the sum over all clients.
pub fn build_masked_upload(
    stats: &StatsVector,
    client_id: usize,
    seeds: &MaskSeedMatrix,
    codec: &FixedPointCodec,
) -> Result<(MaskedUpload, PersonalMask)> {
    codec.validate(seeds.num_clients())?;
    let mut values = codec.encode(&stats.values)?;
    let len = values.len();

    let personal = mask_stream(seeds.personal_seed(client_id), len, codec);
    for (v, b) in values.iter_mut().zip(&personal) {
        *v = codec.add_mod(*v, *b);
    }
    for j in 0..seeds.num_clients() {
        if j == client_id {
            continue;
        }
        let pairwise = mask_stream(seeds.pair_seed(client_id, j), len, codec);
        for (v, r) in values.iter_mut().zip(&pairwise) {
            *v = if client_id < j {
                codec.add_mod(*v, *r)
            } else {
                codec.sub_mod(*v, *r)
            };
        }
    }
    Ok((
        MaskedUpload { client_id, values },
        PersonalMask {
            client_id,
            values: personal,
        },
    ))
}

/// Server-side unmasking: `decode(sum_k y_k - sum_k b_k)`.
///
/// Every client's upload and personal mask must be present; the protocol
/// has no dropout recovery.
pub fn aggregate_unmask(
    uploads: &[MaskedUpload],
    personal_masks: &[PersonalMask],
    num_clients: usize,
    codec: &FixedPointCodec,
) -> Result<Vec<f64>> {
    let mut have_upload = vec![false; num_clients];
    let mut have_mask = vec![false; num_clients];
    for u in uploads {
        have_upload[u.client_id] = true;
    }
    for m in personal_masks {
        have_mask[m.client_id] = true;
    }
    if let Some(k) = (0..num_clients).find(|&k| !have_upload[k] || !have_mask[k]) {
        return Err(Error::Shape(format!(
            "client {k} missing from uploads or personal masks"
        )));
    }
    let len = uploads[0].values.len();
    if uploads.iter().any(|u| u.values.len() != len)
        || personal_masks.iter().any(|m| m.values.len() != len)
    {
        return Err(Error::Shape("upload length mismatch".into()));
    }

    let mut acc = vec![0u64; len];
    for u in uploads {
        for (a, v) in acc.iter_mut().zip(&u.values) {
            *a = codec.add_mod(*a, *v);
        }
    }
    for m in personal_masks {
        for (a, b) in acc.iter_mut().zip(&m.values) {
            *a = codec.sub_mod(*a, *b);
        }
    }
    Ok(codec.decode(&acc))
}

/// Pooled-variance denominator convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// `N^c - m_c` with `m_c` the contributing clients of class c.
    Paper,
    /// `N^c - 1`, the centralized unbiased estimator.
    Centralized,
}

/// Pooled global statistics of one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalClassMoments {
    /// Total sample count `N^c` across clients.
    pub count: f64,
    /// Number of clients that reported the class.
    pub contributors: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `lambda_c`: share of class-c samples among all present classes.
    pub proportion: f64,
}

impl GlobalClassMoments {
    pub fn mean_array(&self) -> Array1<f64> {
        Array1::from_vec(self.mean.clone())
    }

    pub fn variance_array(&self) -> Array1<f64> {
        Array1::from_vec(self.variance.clone())
    }
}

/// Pooled global statistics over all classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalStats {
    pub classes: Vec<Option<GlobalClassMoments>>,
    pub dim: usize,
}

impl GlobalStats {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn present_classes(&self) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&c| self.classes[c].is_some())
            .collect()
    }
}

/// Recover per-class pooled mean and variance from a summed vector.
///
/// `N^c = count_sum`, `mean = mean_sum / N^c`, and
/// `variance = (within_sum + sq_sum - mean_sum^2 / N^c) / denominator`,
/// the within/between decomposition of the pooled unbiased estimator.
pub fn pooled_stats(
    summed: &[f64],
    layout: StatsLayout,
    mode: DenominatorMode,
) -> Result<GlobalStats> {
    if summed.len() != layout.len() {
        return Err(Error::Shape(format!(
            "summed vector length {} does not match layout {}",
            summed.len(),
            layout.len()
        )));
    }
    let dim = layout.dim;
    let mut classes: Vec<Option<GlobalClassMoments>> = Vec::with_capacity(layout.num_classes);
    let mut total_count = 0.0;
    for c in 0..layout.num_classes {
        let base = layout.class_base(c);
        let contributors = summed[base].round() as i64;
        let count = summed[base + 1].round();
        if contributors < 1 || count < 1.0 {
            classes.push(None);
            continue;
        }
        let contributors = contributors as usize;
        let mean_sum = &summed[base + 2..base + 2 + dim];
        let within_sum = &summed[base + 2 + dim..base + 2 + 2 * dim];
        let sq_sum = &summed[base + 2 + 2 * dim..base + 2 + 3 * dim];

        let mean: Vec<f64> = mean_sum.iter().map(|&b| b / count).collect();
        let denominator = match mode {
            DenominatorMode::Paper => {
                let d = count - contributors as f64;
                if d > 0.0 {
                    d
                } else {
                    count - 1.0
                }
            }
            DenominatorMode::Centralized => count - 1.0,
        };
        let variance: Vec<f64> = (0..dim)
            .map(|i| {
                if denominator <= 0.0 {
                    return 0.0;
                }
                let between = sq_sum[i] - mean_sum[i] * mean_sum[i] / count;
                ((within_sum[i] + between) / denominator).max(0.0)
            })
            .collect();
        total_count += count;
        classes.push(Some(GlobalClassMoments {
            count,
            contributors,
            mean,
            variance,
            proportion: 0.0,
        }));
    }
    if total_count <= 0.0 {
        return Err(Error::Numeric("no class present in any upload".into()));
    }
    for m in classes.iter_mut().flatten() {
        m.proportion = m.count / total_count;
    }
    Ok(GlobalStats { classes, dim })
}

const WIRE_MAGIC: &[u8; 8] = b"OFGL-SA1";

/// Write an upload (or personal mask) in the binary wire format:
/// 16-byte header (magic `OFGL-SA1`, client id u32, length u32) followed
/// by the vector as little-endian u64.
pub fn write_upload(w: &mut impl Write, client_id: usize, values: &[u64]) -> std::io::Result<()> {
    w.write_all(WIRE_MAGIC)?;
    w.write_all(&(client_id as u32).to_le_bytes())?;
    w.write_all(&(values.len() as u32).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one wire-format upload.
pub fn read_upload(r: &mut impl Read, path: &str) -> Result<(usize, Vec<u64>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    if &header[0..8] != WIRE_MAGIC {
        return Err(Error::format(path, "bad magic, expected OFGL-SA1"));
    }
    let client_id = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let values = buf
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((client_id, values))
}
