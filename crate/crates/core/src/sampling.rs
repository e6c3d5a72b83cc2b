//! Observations `Y_i = f(i/n - θ*) + Z_i` on the regular grid, and the rank
//! transform.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::templates::{wrap_unit, Template};

/// Ground truth recorded alongside a generated signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta_star: f64,
    pub template: String,
    pub noise: Option<NoiseModel>,
    pub seed: u64,
}

/// Observed values `Y_1..Y_n`; the design point of `values[i]` is `(i + 1) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub values: Vec<f64>,
    pub truth: Option<Truth>,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Signal> {
        if values.len() < 2 {
            return Err(Error::TooShort {
                min: 2,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite observation {bad}")));
        }
        Ok(Signal { values, truth: None })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Applies `g` to every observation, keeping the truth record.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> Signal {
        Signal {
            values: self.values.iter().map(|&v| g(v)).collect(),
            truth: self.truth.clone(),
        }
    }

    /// Writes one value per line with full round-trip precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for v in &self.values {
            writeln!(out, "{v:?}")?;
        }
        Ok(())
    }

    /// Reads one real per line; blank lines are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Signal> {
        let mut values = Vec::new();
        for (lineno, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let field = line.trim();
            if field.is_empty() {
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::InvalidInput(format!("line {}: cannot parse `{field}` as a number", lineno + 1)))?;
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::InvalidInput("signal file is empty".into()));
        }
        Signal::new(values)
    }

    /// Sidecar path for the truth record: `x.csv` → `x.truth.json`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("truth.json")
    }

    /// Writes the CSV and, when present, the truth sidecar.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
        if let Some(truth) = &self.truth {
            std::fs::write(Signal::sidecar_path(csv_path), serde_json::to_string_pretty(truth)?)?;
        }
        Ok(())
    }

    /// Reads the CSV and the truth sidecar if one exists next to it.
    pub fn load(csv_path: impl AsRef<Path>) -> Result<Signal> {
        let csv_path = csv_path.as_ref();
        let mut signal = Signal::read_csv(std::fs::File::open(csv_path)?)?;
        let sidecar = Signal::sidecar_path(csv_path);
        if sidecar.exists() {
            signal.truth = Some(serde_json::from_str(&std::fs::read_to_string(sidecar)?)?);
        }
        Ok(signal)
    }
}

/// Generates `Y_i = f(i/n - θ*) + Z_i`, `i = 1..n`. `noise = None` gives the
/// noiseless signal.
pub fn generate_signal(
    template: &Template,
    theta_star: f64,
    n: usize,
    noise: Option<&NoiseModel>,
    seed: u64,
) -> Result<Signal> {
    if n < 2 {
        return Err(Error::TooShort { min: 2, got: n });
    }
    let theta_star = wrap_unit(theta_star);
    let mut values: Vec<f64> = (1..=n)
        .map(|i| template.eval(i as f64 / n as f64 - theta_star))
        .collect();
    if let Some(noise) = noise {
        for (y, z) in values.iter_mut().zip(noise.sample(n, seed)) {
            *y += z;
        }
    }
    Ok(Signal {
        values,
        truth: Some(Truth {
            theta_star,
            template: template.id().to_string(),
            noise: noise.copied(),
            seed,
        }),
    })
}

/// Ranks in increasing order; ties share their midrank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub ranks: Vec<f64>,
}

impl RankVector {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// True when every observation is tied with every other.
    pub fn is_constant(&self) -> bool {
        self.ranks.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn rank_transform(values: &[f64]) -> RankVector {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share the average rank
        let midrank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = midrank;
        }
        start = end;
    }
    RankVector { ranks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use proptest::prelude::*;

    #[test]
    fn noiseless_template_a() {
        let s = generate_signal(&Template::builtin_a(), 0.0, 4, None, 0).unwrap();
        assert_eq!(s.values, vec![0.0, 1.0, 0.0, 0.0]);
        let shifted = generate_signal(&Template::builtin_a(), 0.25, 4, None, 0).unwrap();
        assert_eq!(shifted.values, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn grid_shift_is_cyclic_permutation() {
        for t in Template::builtins() {
            let n = 200;
            let base = generate_signal(&t, 0.0, n, None, 0).unwrap();
            for k in [1, 7, 50, 199] {
                let s = generate_signal(&t, k as f64 / n as f64, n, None, 0).unwrap();
                for i in 0..n {
                    let expected = base.values[(i + n - k) % n];
                    assert!((s.values[i] - expected).abs() < 1e-12, "{} k={k} i={i}", t.id());
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let noise = NoiseModel::student_t3(1.0);
        let a = generate_signal(&Template::builtin_b(), 0.3, 500, Some(&noise), 9).unwrap();
        let b = generate_signal(&Template::builtin_b(), 0.3, 500, Some(&noise), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.truth.as_ref().unwrap().theta_star, 0.3);
    }

    #[test]
    fn rejects_short_signals() {
        assert!(generate_signal(&Template::builtin_a(), 0.0, 1, None, 0).is_err());
        assert!(Signal::new(vec![1.0]).is_err());
        assert!(Signal::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_transform(&[3.1, 1.2, 2.5]).ranks, vec![3.0, 1.0, 2.0]);
        assert_eq!(rank_transform(&[1.0, 1.0, 2.0]).ranks, vec![1.5, 1.5, 3.0]);
        let v = [0.3, -1.0, 2.0, 0.0];
        let g: Vec<f64> = v.iter().map(|x: &f64| x.atan()).collect();
        assert_eq!(rank_transform(&v), rank_transform(&g));
    }

    #[test]
    fn csv_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sig.csv");
        let s = generate_signal(&Template::builtin_c(), 0.1, 50, Some(&NoiseModel::cauchy(1.0)), 3).unwrap();
        s.save(&path).unwrap();
        assert!(dir.path().join("sig.truth.json").exists());
        assert_eq!(Signal::load(&path).unwrap(), s);
    }

    #[test]
    fn csv_errors() {
        assert!(Signal::read_csv("".as_bytes()).is_err());
        assert!(Signal::read_csv("1.0\nabc\n".as_bytes()).is_err());
        assert!(Signal::read_csv("1.0\n".as_bytes()).is_err());
        assert_eq!(
            Signal::read_csv("1\n\n2.5\n".as_bytes()).unwrap().values,
            vec![1.0, 2.5]
        );
    }

    proptest! {
        #[test]
        fn ranks_sum_and_permutation(values in proptest::collection::vec(-1e6f64..1e6, 1..300)) {
            let r = rank_transform(&values);
            let n = values.len() as f64;
            prop_assert_eq!(r.ranks.iter().sum::<f64>(), n * (n + 1.0) / 2.0);
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == values.len() {
                let mut ints: Vec<f64> = r.ranks.clone();
                ints.sort_by(f64::total_cmp);
                prop_assert!(ints.iter().enumerate().all(|(i, &x)| x == (i + 1) as f64));
            }
        }

        #[test]
        fn ties_sum_exactly(values in proptest::collection::vec(0u8..5, 1..200)) {
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let n = values.len() as f64;
            prop_assert_eq!(rank_transform(&values).ranks.iter().sum::<f64>(), n * (n + 1.0) / 2.0);
        }

        #[test]
        fn invariant_under_increasing_maps(values in proptest::collection::vec(-3.0f64..3.0, 1..200)) {
            let r = rank_transform(&values);
            let cubic: Vec<f64> = values.iter().map(|x| x * x * x + x).collect();
            let atan: Vec<f64> = values.iter().map(|x| x.atan()).collect();
            let exp: Vec<f64> = values.iter().map(|x| x.exp()).collect();
            prop_assert_eq!(&r, &rank_transform(&cubic));
            prop_assert_eq!(&r, &rank_transform(&atan));
            prop_assert_eq!(&r, &rank_transform(&exp));
        }
    }
}
