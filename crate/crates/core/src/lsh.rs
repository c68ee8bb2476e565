//! Random-hyperplane locality-sensitive hashing.
//!
//! Bit `i` of the output is the sign of the projection onto normal `i`, so two
//! templates at angle `theta` disagree on each bit with probability
//! `theta / pi`. External bit strings (e.g. from a trained deep hash) bypass
//! this module and enter the protocol directly as [`BitString`]s.

use rand_distr::{Distribution, StandardNormal};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::population::Template;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneBank {
    /// Row-major `n x d`.
    normals: Vec<f64>,
    dim: usize,
    seed: u64,
}

impl HyperplaneBank {
    /// Samples `n` isotropic unit normals in dimension `d`.
    pub fn new(d: usize, n: usize, seed: u64) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::Params(format!(
                "hyperplane bank needs d >= 1 and n >= 1, got d={d}, n={n}"
            )));
        }
        let mut rng = rng::seeded(seed);
        let mut normals = Vec::with_capacity(n * d);
        for _ in 0..n {
            let row = loop {
                let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    break row.into_iter().map(|x| x / norm).collect::<Vec<_>>();
                }
            };
            normals.extend(row);
        }
        Ok(Self {
            normals,
            dim: d,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.normals.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    /// `bit_i = 1` iff `<t, normal_i> >= 0`.
    pub fn project(&self, t: &Template) -> Result<BitString> {
        if t.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: t.dim(),
            });
        }
        let coords = t.coords();
        Ok(BitString::from_fn(self.len(), |i| {
            let dot: f64 = self.normal(i).iter().zip(coords).map(|(a, b)| a * b).sum();
            dot >= 0.0
        }))
    }
}

pub fn build_bank(d: usize, n: usize, seed: u64) -> Result<HyperplaneBank> {
    HyperplaneBank::new(d, n, seed)
}

pub fn lsh_project(t: &Template, bank: &HyperplaneBank) -> Result<BitString> {
    bank.project(t)
}

pub fn hamming(a: &BitString, b: &BitString) -> Result<usize> {
    a.hamming(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{generate_population, random_unit, PopulationConfig};
    use std::f64::consts::PI;

    #[test]
    fn bank_shape_and_norms() {
        let bank = build_bank(1024, 4096, 1).unwrap();
        assert_eq!(bank.len(), 4096);
        assert_eq!(bank.dim(), 1024);
        for i in (0..4096).step_by(97) {
            let norm: f64 = bank.normal(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_is_deterministic() {
        assert_eq!(
            build_bank(16, 32, 9).unwrap(),
            build_bank(16, 32, 9).unwrap()
        );
        assert_ne!(
            build_bank(16, 32, 9).unwrap(),
            build_bank(16, 32, 10).unwrap()
        );
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(matches!(build_bank(8, 0, 0), Err(Error::Params(_))));
        assert!(matches!(build_bank(0, 8, 0), Err(Error::Params(_))));
    }

    #[test]
    fn normal_projects_to_one() {
        let bank = build_bank(12, 40, 3).unwrap();
        for j in 0..40 {
            let t = Template::new(bank.normal(j).to_vec()).unwrap();
            assert!(lsh_project(&t, &bank).unwrap().get(j));
        }
    }

    #[test]
    fn antipodal_templates_complement() {
        let bank = build_bank(32, 256, 4).unwrap();
        let mut rng = rng::seeded(77);
        for _ in 0..20 {
            let t = random_unit(32, &mut rng).unwrap();
            let a = lsh_project(&t, &bank).unwrap();
            let b = lsh_project(&t.negated(), &bank).unwrap();
            assert_eq!(a.complement(), b);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let bank = build_bank(4, 8, 0).unwrap();
        let t = Template::new(vec![1.0; 5]).unwrap();
        assert!(matches!(
            lsh_project(&t, &bank),
            Err(Error::DimensionMismatch {
                expected: 4,
                actual: 5
            })
        ));
    }

    #[test]
    fn hamming_examples() {
        let v: BitString = "010101".parse().unwrap();
        let w: BitString = "011100".parse().unwrap();
        assert_eq!(hamming(&v, &v).unwrap(), 0);
        assert_eq!(hamming(&v, &v.complement()).unwrap(), 6);
        // Positions 2 and 5 differ.
        assert_eq!(hamming(&v, &w).unwrap(), 2);
        let x: BitString = "011110".parse().unwrap();
        assert_eq!(hamming(&v, &x).unwrap(), 3);
        let short: BitString = "01".parse().unwrap();
        assert!(hamming(&v, &short).is_err());
    }

    /// Monte Carlo over 10^5 random pairs at a fixed angle.
    #[test]
    fn disagreement_rate_is_angle_over_pi() {
        let d = 8;
        let bank = build_bank(d, 32, 5).unwrap();
        let mut rng = rng::seeded(2024);
        for theta in [PI / 6.0, PI / 3.0, PI / 2.0, 2.0 * PI / 3.0] {
            let pairs = 100_000;
            let mut disagree = 0usize;
            for _ in 0..pairs {
                let u = random_unit(d, &mut rng).unwrap();
                let r = random_unit(d, &mut rng).unwrap();
                // Gram-Schmidt r against u.
                let dot: f64 = u.coords().iter().zip(r.coords()).map(|(a, b)| a * b).sum();
                let w = Template::normalized(
                    r.coords()
                        .iter()
                        .zip(u.coords())
                        .map(|(r, u)| r - dot * u)
                        .collect(),
                )
                .unwrap();
                let v = Template::new(
                    u.coords()
                        .iter()
                        .zip(w.coords())
                        .map(|(u, w)| theta.cos() * u + theta.sin() * w)
                        .collect(),
                )
                .unwrap();
                disagree +=
                    hamming(&bank.project(&u).unwrap(), &bank.project(&v).unwrap()).unwrap();
            }
            let rate = disagree as f64 / (pairs * bank.len()) as f64;
            assert!(
                (rate - theta / PI).abs() < 0.01,
                "theta {theta}: rate {rate}"
            );
        }
    }

    #[test]
    fn same_identity_closer_than_different() {
        let bank = build_bank(64, 512, 8).unwrap();
        for sigma in [0.1, 0.3, 0.49] {
            let pop =
                generate_population(&PopulationConfig::template_level(200, 64, sigma, 9)).unwrap();
            let bits: Vec<_> = pop
                .iter()
                .map(|s| bank.project(s.template().unwrap()).unwrap())
                .collect();
            let same = bits
                .chunks(2)
                .map(|c| c[0].hamming(&c[1]).unwrap() as f64)
                .sum::<f64>()
                / 200.0;
            let diff = bits
                .chunks(2)
                .zip(bits.chunks(2).skip(1))
                .map(|(a, b)| a[0].hamming(&b[1]).unwrap() as f64)
                .sum::<f64>()
                / 199.0;
            assert!(same < diff, "sigma {sigma}: same {same} diff {diff}");
        }
    }
}
