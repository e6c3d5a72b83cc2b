//! Symmetric noise laws and the distribution of the difference of two
//! independent draws.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_real_line;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Absolute tolerance of the quadrature paths for `phi2` and `phi2_density`.
pub const PHI2_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseFamily {
    #[serde(rename = "gaussian", alias = "normal")]
    Gaussian,
    #[serde(rename = "t3")]
    StudentT3,
    #[serde(rename = "cauchy")]
    Cauchy,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [NoiseFamily::Gaussian, NoiseFamily::StudentT3, NoiseFamily::Cauchy];

    /// Name used in configs and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::StudentT3 => "t3",
            NoiseFamily::Cauchy => "cauchy",
        }
    }

    /// Column label used in the efficiency table.
    pub fn table_label(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "normal",
            NoiseFamily::StudentT3 => "t3",
            NoiseFamily::Cauchy => "cauchy",
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "t3" | "student-t3" => Ok(NoiseFamily::StudentT3),
            "cauchy" => Ok(NoiseFamily::Cauchy),
            other => Err(Error::InvalidConfig(format!("unknown noise family `{other}`"))),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

/// A symmetric noise law with a scale parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl NoiseModel {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<NoiseModel> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise scale must be positive, got {scale}"
            )));
        }
        Ok(NoiseModel { family, scale })
    }

    pub fn gaussian(scale: f64) -> NoiseModel {
        NoiseModel::new(NoiseFamily::Gaussian, scale).expect("positive scale")
    }

    pub fn student_t3(scale: f64) -> NoiseModel {
        NoiseModel::new(NoiseFamily::StudentT3, scale).expect("positive scale")
    }

    pub fn cauchy(scale: f64) -> NoiseModel {
        NoiseModel::new(NoiseFamily::Cauchy, scale).expect("positive scale")
    }

    pub fn validate(&self) -> Result<()> {
        NoiseModel::new(self.family, self.scale).map(|_| ())
    }

    /// Noise variance; `+inf` for Cauchy.
    pub fn variance(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.family {
            NoiseFamily::Gaussian => s2,
            NoiseFamily::StudentT3 => 3.0 * s2,
            NoiseFamily::Cauchy => f64::INFINITY,
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        let s = self.scale;
        let u = z / s;
        match self.family {
            NoiseFamily::Gaussian => (-0.5 * u * u).exp() / (s * (2.0 * PI).sqrt()),
            NoiseFamily::StudentT3 => {
                let d = 3.0 + u * u;
                6.0 * SQRT_3 / (PI * d * d * s)
            }
            NoiseFamily::Cauchy => 1.0 / (PI * s * (1.0 + u * u)),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let u = z / self.scale;
        match self.family {
            NoiseFamily::Gaussian => 0.5 * libm::erfc(-u / SQRT_2),
            NoiseFamily::StudentT3 => 0.5 + (u / (SQRT_3 * (1.0 + u * u / 3.0)) + (u / SQRT_3).atan()) / PI,
            NoiseFamily::Cauchy => 0.5 + u.atan() / PI,
        }
    }

    /// `n` iid draws; the same `(n, seed)` always yields the same vector.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.scale;
        match self.family {
            NoiseFamily::Gaussian => {
                let d = Normal::new(0.0, s).expect("positive scale");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            NoiseFamily::StudentT3 => {
                let d = StudentT::new(3.0).expect("positive dof");
                (0..n).map(|_| s * d.sample(&mut rng)).collect()
            }
            NoiseFamily::Cauchy => {
                let d = Cauchy::new(0.0, s).expect("positive scale");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        }
    }

    /// `Φ₂(t) = P(Z' - Z ≤ t)` for independent draws `Z`, `Z'`.
    pub fn phi2(&self, t: f64) -> f64 {
        let s = self.scale;
        match self.family {
            // Z' - Z ~ N(0, 2s²)
            NoiseFamily::Gaussian => 0.5 * libm::erfc(-t / (2.0 * s)),
            // Z' - Z ~ Cauchy(0, 2s)
            NoiseFamily::Cauchy => 0.5 + (t / (2.0 * s)).atan() / PI,
            NoiseFamily::StudentT3 => self.phi2_by_quadrature(t),
        }
    }

    /// `φ₂(t) = Φ₂'(t) = ∫ φ(z + t) φ(z) dz`.
    pub fn phi2_density(&self, t: f64) -> f64 {
        let s = self.scale;
        match self.family {
            NoiseFamily::Gaussian => (-t * t / (4.0 * s * s)).exp() / (2.0 * s * PI.sqrt()),
            NoiseFamily::Cauchy => 2.0 * s / (PI * (4.0 * s * s + t * t)),
            NoiseFamily::StudentT3 => self.phi2_density_by_quadrature(t),
        }
    }

    /// Generic path for `Φ₂`: `∫ Φ(t + z) φ(z) dz` by tangent-substituted quadrature.
    ///
    /// Uses the symmetric form `1/2 + ∫ (Φ(t + z) - 1/2) φ(z) dz` so the
    /// integrand vanishes in both tails.
    pub fn phi2_by_quadrature(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.5;
        }
        let half = integrate_real_line(|z| (self.cdf(t + z) - 0.5) * self.pdf(z), self.scale, PHI2_TOL);
        0.5 + half
    }

    /// Generic path for `φ₂` by tangent-substituted quadrature.
    pub fn phi2_density_by_quadrature(&self, t: f64) -> f64 {
        // centre the substitution between the two bumps at 0 and -t
        let c = -0.5 * t;
        integrate_real_line(|z| self.pdf(z + c + t) * self.pdf(z + c), self.scale, PHI2_TOL)
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(scale={})", self.family, self.scale)
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of substream `stream` under `master`; independent of scheduling.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}
