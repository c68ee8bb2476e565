//! Global setup: the `m` public index subsets.
//!
//! Subsets are drawn by sequential weighted sampling without replacement:
//! each draw picks an index with probability proportional to its weight among
//! the indices not yet chosen for that subset. Weights are either uniform or
//! derived from per-bit mutual information with the identity, raised to a
//! power `zeta` and normalized.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::crypto::HashMode;
use crate::error::{Error, Result};
use crate::population::{IdentityId, LabeledSample};
use crate::rng;

pub const PLAN_MAGIC: &[u8; 8] = b"SBAPLAN1";

/// Largest `n` representable by the plan file's u16 indices.
pub const MAX_PLAN_N: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub tau: usize,
    pub zeta: f64,
    pub hash_mode: HashMode,
    /// Prefix each preimage with its subset index.
    pub domain_separation: bool,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n: 4096,
            k: 64,
            m: 1000,
            tau: 1,
            zeta: 1.0,
            hash_mode: HashMode::Plain,
            domain_separation: true,
        }
    }
}

impl SystemParams {
    pub fn new(n: usize, k: usize, m: usize) -> Self {
        Self {
            n,
            k,
            m,
            ..Self::default()
        }
    }

    /// Number of excluded positions per subset.
    pub fn t(&self) -> usize {
        self.n - self.k
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.k && self.k < self.n) {
            return Err(Error::Params(format!(
                "need 0 < k < n, got k={}, n={}",
                self.k, self.n
            )));
        }
        if self.n > MAX_PLAN_N {
            return Err(Error::Params(format!("n={} exceeds {MAX_PLAN_N}", self.n)));
        }
        if self.m == 0 {
            return Err(Error::Params("m must be at least 1".into()));
        }
        if !(1..=self.m).contains(&self.tau) {
            return Err(Error::Params(format!(
                "need 1 <= tau <= m, got tau={}, m={}",
                self.tau, self.m
            )));
        }
        if self.zeta.is_nan() || self.zeta < 0.0 {
            return Err(Error::Params(format!(
                "zeta must be >= 0, got {}",
                self.zeta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BitWeights {
    pub weights: Vec<f64>,
    pub mi: Vec<f64>,
}

impl BitWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
            mi: vec![0.0; n],
        }
    }

    pub fn from_mi(mi: Vec<f64>, zeta: f64) -> Self {
        Self {
            weights: zeta_weights(&mi, zeta),
            mi,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn entropy2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }
}

/// Plug-in estimate of `I(bit_i; ID)` in bits for every position, computed
/// as `H(bit_i) - sum_id p(id) H(bit_i | id)` and clamped at zero.
pub fn estimate_mutual_information(samples: &[LabeledSample]) -> Result<Vec<f64>> {
    let n = match samples.first().and_then(|s| s.bits()) {
        Some(b) => b.len(),
        None => {
            return Err(Error::Estimation(
                "mutual information needs bit-string samples".into(),
            ))
        }
    };
    let mut per_id: HashMap<IdentityId, (usize, Vec<u32>)> = HashMap::new();
    let mut total_ones = vec![0u64; n];
    for s in samples {
        let bits = s
            .bits()
            .ok_or_else(|| Error::Estimation("mixed payloads in MI input".into()))?;
        if bits.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: bits.len(),
            });
        }
        let (count, ones) = per_id.entry(s.id).or_insert_with(|| (0, vec![0; n]));
        *count += 1;
        for (w, &word) in bits.words().iter().enumerate() {
            let mut rest = word;
            while rest != 0 {
                let i = w * 64 + rest.leading_zeros() as usize;
                ones[i] += 1;
                total_ones[i] += 1;
                rest &= !(1u64 << (63 - (i % 64)));
            }
        }
    }
    if per_id.len() < 2 {
        return Err(Error::Estimation(format!(
            "mutual information needs at least 2 identities, got {}",
            per_id.len()
        )));
    }
    let total = samples.len() as f64;
    let mut conditional = vec![0.0; n];
    for (count, ones) in per_id.values() {
        let weight = *count as f64 / total;
        for (c, &o) in conditional.iter_mut().zip(ones) {
            *c += weight * entropy2(f64::from(o) / *count as f64);
        }
    }
    Ok(total_ones
        .iter()
        .zip(&conditional)
        .map(|(&ones, &h_cond)| (entropy2(ones as f64 / total) - h_cond).max(0.0))
        .collect())
}

/// `wt_i = mi_i^zeta / sum_j mi_j^zeta`, evaluated relative to the maximum so
/// large `zeta` does not overflow. `0^0` is taken as 1; an all-zero `mi`
/// yields uniform weights.
pub fn zeta_weights(mi: &[f64], zeta: f64) -> Vec<f64> {
    let n = mi.len();
    let max = mi.iter().copied().fold(0.0f64, f64::max);
    if n == 0 {
        return Vec::new();
    }
    if max <= 0.0 || zeta == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let raw: Vec<f64> = mi
        .iter()
        .map(|&x| {
            if x <= 0.0 {
                0.0
            } else if x == max {
                1.0
            } else {
                (zeta * (x / max).ln()).exp()
            }
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// The public parameters: `m` sorted subsets of `[0, n)`, each of size `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetPlan {
    n: usize,
    k: usize,
    seed: u64,
    indices: Vec<u16>,
}

impl SubsetPlan {
    /// Builds a plan from explicit subsets. Each is sorted; duplicates within
    /// a subset or out-of-range indices are rejected.
    pub fn from_subsets(n: usize, k: usize, seed: u64, subsets: &[Vec<usize>]) -> Result<Self> {
        if k == 0 || k > n || n > MAX_PLAN_N {
            return Err(Error::Params(format!("invalid plan shape n={n}, k={k}")));
        }
        let mut indices = Vec::with_capacity(subsets.len() * k);
        for s in subsets {
            if s.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    actual: s.len(),
                });
            }
            let mut sorted = s.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) || sorted.last().is_some_and(|&x| x >= n) {
                return Err(Error::Params(format!("invalid subset {s:?} for n={n}")));
            }
            indices.extend(sorted.into_iter().map(|x| x as u16));
        }
        if indices.is_empty() {
            return Err(Error::Params("plan needs at least one subset".into()));
        }
        Ok(Self {
            n,
            k,
            seed,
            indices,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn subset(&self, i: usize) -> &[u16] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn subsets(&self) -> impl ExactSizeIterator<Item = &[u16]> {
        self.indices.chunks_exact(self.k)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PLAN_MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&(self.m() as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for &ix in &self.indices {
            w.write_all(&ix.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 28];
        r.read_exact(&mut header)
            .map_err(|_| Error::Corrupt("truncated plan header".into()))?;
        if &header[..8] != PLAN_MAGIC {
            return Err(Error::Corrupt("bad plan magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
        let (n, k, m) = (u32_at(8), u32_at(12), u32_at(16));
        let seed = u64::from_le_bytes(header[20..28].try_into().unwrap());
        if k == 0 || k > n || n > MAX_PLAN_N || m == 0 {
            return Err(Error::Corrupt(format!(
                "invalid plan shape n={n}, k={k}, m={m}"
            )));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != m * k * 2 {
            return Err(Error::Corrupt(format!(
                "plan body is {} bytes, expected {}",
                body.len(),
                m * k * 2
            )));
        }
        let indices: Vec<u16> = body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        for s in indices.chunks_exact(k) {
            if s.windows(2).any(|w| w[0] >= w[1]) || usize::from(s[k - 1]) >= n {
                return Err(Error::Corrupt(
                    "plan subset not sorted/distinct/in range".into(),
                ));
            }
        }
        Ok(Self {
            n,
            k,
            seed,
            indices,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Complete binary sum tree over the weights; leaves at `[size, 2 * size)`.
struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(weights: &[f64]) -> Self {
        let size = weights.len().next_power_of_two();
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + weights.len()].copy_from_slice(weights);
        for p in (1..size).rev() {
            nodes[p] = nodes[2 * p] + nodes[2 * p + 1];
        }
        Self { size, nodes }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Leaf whose cumulative range contains `u`, never a zero-weight leaf
    /// while the total is positive.
    fn find(&self, mut u: f64) -> usize {
        let mut p = 1;
        while p < self.size {
            let (l, r) = (self.nodes[2 * p], self.nodes[2 * p + 1]);
            if (u < l && l > 0.0) || r <= 0.0 {
                p *= 2;
            } else {
                u -= l;
                p = 2 * p + 1;
            }
        }
        p - self.size
    }

    fn zero(&mut self, leaf: usize) {
        let mut p = leaf + self.size;
        self.nodes[p] = 0.0;
        while p > 1 {
            p /= 2;
            self.nodes[p] = self.nodes[2 * p] + self.nodes[2 * p + 1];
        }
    }
}

/// Draws `m` subsets of `k` distinct indices. Once all positive-weight
/// indices of a subset are taken, the remainder is filled uniformly from the
/// unchosen zero-weight indices.
pub fn sample_subsets(
    params: &SystemParams,
    weights: &BitWeights,
    seed: u64,
) -> Result<SubsetPlan> {
    if params.k >= params.n || params.k == 0 {
        return Err(Error::Params(format!(
            "need 0 < k < n, got k={}, n={}",
            params.k, params.n
        )));
    }
    if params.m == 0 || params.n > MAX_PLAN_N {
        return Err(Error::Params(format!(
            "invalid m={} or n={}",
            params.m, params.n
        )));
    }
    if weights.len() != params.n {
        return Err(Error::LengthMismatch {
            expected: params.n,
            actual: weights.len(),
        });
    }
    if weights
        .weights
        .iter()
        .any(|w| !(w.is_finite() && *w >= 0.0))
    {
        return Err(Error::Params(
            "weights must be finite and non-negative".into(),
        ));
    }
    let (n, k) = (params.n, params.k);
    let base = SumTree::new(&weights.weights);
    let mut scratch = SumTree::new(&weights.weights);
    let mut chosen = vec![false; n];
    let mut subset = Vec::with_capacity(k);
    let mut indices = Vec::with_capacity(params.m * k);
    let mut rng = rng::seeded(seed);

    for _ in 0..params.m {
        scratch.nodes.copy_from_slice(&base.nodes);
        subset.clear();
        while subset.len() < k {
            let ix = if scratch.total() > 0.0 {
                let u = rng.random::<f64>() * scratch.total();
                scratch.find(u)
            } else {
                loop {
                    let ix = rng.random_range(0..n);
                    if !chosen[ix] {
                        break ix;
                    }
                }
            };
            debug_assert!(!chosen[ix]);
            chosen[ix] = true;
            scratch.zero(ix);
            subset.push(ix);
        }
        subset.sort_unstable();
        for &ix in &subset {
            chosen[ix] = false;
            indices.push(ix as u16);
        }
    }
    Ok(SubsetPlan {
        n,
        k,
        seed,
        indices,
    })
}

/// Uniform or MI-weighted setup in one call. With `zeta == 0` the weights are
/// uniform and `training` is ignored.
pub fn setup(
    params: &SystemParams,
    training: Option<&[LabeledSample]>,
    seed: u64,
) -> Result<(SubsetPlan, BitWeights)> {
    params.validate()?;
    let weights = match training {
        Some(samples) if params.zeta != 0.0 => {
            let mi = estimate_mutual_information(samples)?;
            if mi.len() != params.n {
                return Err(Error::LengthMismatch {
                    expected: params.n,
                    actual: mi.len(),
                });
            }
            BitWeights::from_mi(mi, params.zeta)
        }
        _ => BitWeights::uniform(params.n),
    };
    let plan = sample_subsets(params, &weights, seed)?;
    Ok((plan, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;
    use crate::population::{generate_population, PopulationConfig, Session};
    use proptest::prelude::*;

    fn sample(id: u32, bits: &str) -> LabeledSample {
        LabeledSample {
            id: IdentityId(id),
            session: Session::Enroll,
            payload: crate::population::Payload::Bits(bits.parse().unwrap()),
        }
    }

    #[test]
    fn constant_bit_has_zero_mi() {
        let samples = vec![
            sample(0, "10"),
            sample(0, "11"),
            sample(1, "10"),
            sample(1, "11"),
        ];
        let mi = estimate_mutual_information(&samples).unwrap();
        assert_eq!(mi[0], 0.0);
    }

    #[test]
    fn parity_bit_has_one_bit_of_mi() {
        let samples = vec![
            sample(0, "0"),
            sample(0, "0"),
            sample(1, "1"),
            sample(1, "1"),
        ];
        assert_eq!(estimate_mutual_information(&samples).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_identity_is_an_error() {
        let samples = vec![sample(7, "01"), sample(7, "11")];
        assert!(matches!(
            estimate_mutual_information(&samples),
            Err(Error::Estimation(_))
        ));
    }

    /// Direct per-bit plug-in computation, written independently of the
    /// word-walking estimator.
    fn brute_force_mi(samples: &[LabeledSample], bit: usize) -> f64 {
        let h = |p: f64| {
            if p == 0.0 || p == 1.0 {
                0.0
            } else {
                -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
            }
        };
        let total = samples.len() as f64;
        let ones = samples
            .iter()
            .filter(|s| s.bits().unwrap().get(bit))
            .count() as f64;
        let mut ids: Vec<u32> = samples.iter().map(|s| s.id.0).collect();
        ids.sort_unstable();
        ids.dedup();
        let cond: f64 = ids
            .iter()
            .map(|&id| {
                let own: Vec<_> = samples.iter().filter(|s| s.id.0 == id).collect();
                let c = own.len() as f64;
                let o = own.iter().filter(|s| s.bits().unwrap().get(bit)).count() as f64;
                c / total * h(o / c)
            })
            .sum();
        (h(ones / total) - cond).max(0.0)
    }

    #[test]
    fn independent_bits_carry_only_plugin_bias() {
        // 1000 identities x 2 samples with fully independent bits (max noise).
        let cfg = PopulationConfig::bit_level(1000, 16, 0.0, 1);
        let mut pop = generate_population(&cfg).unwrap();
        let mut r = rng::seeded(99);
        for s in &mut pop {
            s.payload = crate::population::Payload::Bits(BitString::from_fn(16, |_| r.random()));
        }
        let mi = estimate_mutual_information(&pop).unwrap();
        for (bit, &est) in mi.iter().enumerate() {
            assert!((est - brute_force_mi(&pop, bit)).abs() < 1e-12);
            // With two samples per identity, E[H(bit | id)] = 1/2 while H(bit) ~ 1,
            // so the plug-in bias is about 1/2 bit.
            assert!((est - 0.5).abs() < 0.05, "bit {bit}: {est}");
        }
    }

    #[test]
    fn zeta_weight_examples() {
        assert_eq!(zeta_weights(&[1.0; 4], 3.7), vec![0.25; 4]);
        assert_eq!(zeta_weights(&[0.2, 0.9, 3.0], 0.0), vec![1.0 / 3.0; 3]);
        assert_eq!(zeta_weights(&[1.0, 3.0], 1.0), vec![0.25, 0.75]);
        assert_eq!(zeta_weights(&[0.0, 0.0], 2.0), vec![0.5, 0.5]);
        let w = zeta_weights(&[0.1, 0.5, 0.2], 1e6);
        assert_eq!(w, vec![0.0, 1.0, 0.0]);
        let w = zeta_weights(&[0.3, 0.1, 0.6], 2.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((w[2] - 0.36 / 0.46).abs() < 1e-12);
    }

    #[test]
    fn figure_scale_toy_plan() {
        let params = SystemParams::new(9, 7, 3);
        let plan = sample_subsets(&params, &BitWeights::uniform(9), 1).unwrap();
        assert_eq!(plan.m(), 3);
        for s in plan.subsets() {
            assert_eq!(s.len(), 7);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&x| x < 9));
        }
    }

    #[test]
    fn k_equal_n_minus_one_omits_one() {
        let params = SystemParams::new(12, 11, 50);
        let plan = sample_subsets(&params, &BitWeights::uniform(12), 2).unwrap();
        for s in plan.subsets() {
            assert_eq!(s.len(), 11);
        }
    }

    #[test]
    fn k_not_below_n_rejected() {
        let params = SystemParams::new(5, 5, 1);
        assert!(matches!(
            sample_subsets(&params, &BitWeights::uniform(5), 0),
            Err(Error::Params(_))
        ));
    }

    #[test]
    fn uniform_pairs_match_enumeration() {
        // All C(4, 2) = 6 subsets, enumerated.
        let mut all = Vec::new();
        for a in 0..4u16 {
            for b in a + 1..4 {
                all.push(vec![a, b]);
            }
        }
        assert_eq!(all.len(), 6);
        let draws = 100_000;
        let plan =
            sample_subsets(&SystemParams::new(4, 2, draws), &BitWeights::uniform(4), 3).unwrap();
        let mut counts = vec![0usize; 6];
        for s in plan.subsets() {
            counts[all.iter().position(|x| x == s).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn heavy_zeta_selects_argmax() {
        let mi = vec![0.1, 0.2, 0.9, 0.3, 0.05];
        let weights = BitWeights::from_mi(mi, 1e4);
        let mut params = SystemParams::new(5, 1, 200);
        params.tau = 1;
        let plan = sample_subsets(&params, &weights, 4).unwrap();
        assert!(plan.subsets().all(|s| s == [2]));
    }

    #[test]
    fn zero_weight_indices_fill_when_positive_mass_exhausted() {
        let weights = BitWeights {
            weights: vec![0.5, 0.5, 0.0, 0.0, 0.0],
            mi: vec![0.0; 5],
        };
        let plan = sample_subsets(&SystemParams::new(5, 3, 100), &weights, 5).unwrap();
        for s in plan.subsets() {
            assert_eq!(&s[..2], &[0, 1]);
            assert!(s[2] >= 2);
        }
    }

    #[test]
    fn setup_is_deterministic() {
        let params = SystemParams::new(64, 8, 20);
        let pop = generate_population(&PopulationConfig::bit_level(30, 64, 0.05, 1)).unwrap();
        let a = setup(&params, Some(&pop), 42).unwrap();
        let b = setup(&params, Some(&pop), 42).unwrap();
        assert_eq!(a, b);
        let mut one = Vec::new();
        a.0.write_to(&mut one).unwrap();
        let mut two = Vec::new();
        b.0.write_to(&mut two).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn plan_header_layout_and_corruption() {
        let plan = SubsetPlan::from_subsets(9, 2, 7, &[vec![3, 1], vec![0, 8]]).unwrap();
        assert_eq!(plan.subset(0), &[1, 3]);
        let mut buf = Vec::new();
        plan.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SBAPLAN1");
        assert_eq!(buf.len(), 28 + 2 * 2 * 2);
        assert!(SubsetPlan::read_from(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SubsetPlan::read_from(&bad[..]).is_err());
        let mut unsorted = buf.clone();
        unsorted.swap(28, 30);
        assert!(SubsetPlan::read_from(&unsorted[..]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams::default().validate().is_ok());
        let mut p = SystemParams::new(10, 3, 5);
        p.tau = 6;
        assert!(p.validate().is_err());
        p.tau = 0;
        assert!(p.validate().is_err());
        assert!(SystemParams::new(10, 0, 5).validate().is_err());
        assert!(SystemParams::new(10, 10, 5).validate().is_err());
        assert!(SystemParams::new(10, 3, 0).validate().is_err());
        assert_eq!(SystemParams::new(9, 7, 3).t(), 2);
    }

    proptest! {
        #[test]
        fn plan_round_trips(n in 2usize..300, seed in any::<u64>(), m in 1usize..20, kf in 0.0f64..1.0) {
            let k = 1 + ((n - 2) as f64 * kf) as usize;
            let plan = sample_subsets(&SystemParams::new(n, k, m), &BitWeights::uniform(n), seed).unwrap();
            let mut buf = Vec::new();
            plan.write_to(&mut buf).unwrap();
            let back = SubsetPlan::read_from(&buf[..]).unwrap();
            prop_assert_eq!(&back, &plan);
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            prop_assert_eq!(again, buf);
        }
    }
}
