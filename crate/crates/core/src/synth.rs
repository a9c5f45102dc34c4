//! Seeded synthetic corpora with known cluster structure.
//!
//! Each chunk picks an archetype `(a, b, c, d)` from a mixture, perturbs every
//! parameter by an independent log-normal factor, and is measured on the grid
//! as `quality(q) = a - b q` and `rate(q) = c exp(-d q)`. Perturbing the
//! parameters rather than the points keeps every curve strictly decreasing.
//! Features are a seeded random affine image of the chunk's standardized
//! log-parameters plus Gaussian noise, so they carry information about the
//! R-D curve without revealing it exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::FeatureVector;
use crate::error::{Error, Result};
use crate::rd_model::{OperatingPointGrid, RdSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeParams {
    /// Quality intercept (dB).
    pub a: f64,
    /// Quality slope (dB per CRF unit).
    pub b: f64,
    /// Rate scale (kbps).
    pub c: f64,
    /// Rate decay (per CRF unit).
    pub d: f64,
}

impl ArchetypeParams {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn quality(&self, q: f64) -> f64 {
        self.a - self.b * q
    }

    pub fn rate(&self, q: f64) -> f64 {
        self.c * (-self.d * q).exp()
    }

    fn log_params(&self) -> [f64; 4] {
        [self.a.ln(), self.b.ln(), self.c.ln(), self.d.ln()]
    }
}

/// Ten archetypes with similar rate levels and well spread quality levels.
/// Keeping the rate spread narrow makes the rate noise comparable to the
/// quality noise after per-component normalization, so clusters are not
/// flattened onto a single noise direction.
pub const DEFAULT_ARCHETYPES: [ArchetypeParams; 10] = [
    ArchetypeParams::new(34.0, 0.226, 6010.0, 0.063),
    ArchetypeParams::new(45.2, 0.243, 5010.0, 0.034),
    ArchetypeParams::new(54.5, 0.104, 4820.0, 0.040),
    ArchetypeParams::new(39.3, 0.224, 5500.0, 0.069),
    ArchetypeParams::new(54.5, 0.260, 5310.0, 0.048),
    ArchetypeParams::new(37.7, 0.280, 4020.0, 0.047),
    ArchetypeParams::new(48.5, 0.290, 4460.0, 0.061),
    ArchetypeParams::new(37.6, 0.276, 4440.0, 0.041),
    ArchetypeParams::new(56.9, 0.598, 3720.0, 0.052),
    ArchetypeParams::new(57.5, 0.333, 5710.0, 0.039),
];

pub const DEFAULT_MIXTURE: [f64; 10] = [0.1; 10];

/// Thirteen CRF values, 0 to 60 in steps of 5.
pub fn default_grid() -> OperatingPointGrid {
    OperatingPointGrid::new((0..13).map(|i| 5.0 * i as f64).collect())
        .expect("static grid is valid")
}

fn default_rd_noise() -> f64 {
    0.03
}

fn default_feature_dim() -> usize {
    22
}

fn default_feature_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_chunks: usize,
    pub k_true: usize,
    pub grid: OperatingPointGrid,
    pub archetypes: Vec<ArchetypeParams>,
    pub mixture: Vec<f64>,
    /// Standard deviation of the log-normal factor on each parameter.
    #[serde(default = "default_rd_noise")]
    pub rd_noise_rel: f64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Standard deviation of additive feature noise.
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    /// Ten archetypes on the default 13-point grid with default noise.
    pub fn default_corpus(n_chunks: usize, seed: u64) -> Self {
        Self {
            n_chunks,
            k_true: DEFAULT_ARCHETYPES.len(),
            grid: default_grid(),
            archetypes: DEFAULT_ARCHETYPES.to_vec(),
            mixture: DEFAULT_MIXTURE.to_vec(),
            rd_noise_rel: default_rd_noise(),
            feature_dim: default_feature_dim(),
            feature_noise: default_feature_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_chunks == 0 {
            return bad("n_chunks must be positive".into());
        }
        if self.k_true == 0 {
            return bad("k_true must be positive".into());
        }
        if self.archetypes.len() != self.k_true || self.mixture.len() != self.k_true {
            return bad(format!(
                "k_true = {} but got {} archetypes and {} mixture weights",
                self.k_true,
                self.archetypes.len(),
                self.mixture.len()
            ));
        }
        if self.mixture.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (self.mixture.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("mixture must be non-negative and sum to 1".into());
        }
        for (i, p) in self.archetypes.iter().enumerate() {
            if !(p.a > 0.0 && p.b > 0.0 && p.c > 0.0 && p.d > 0.0)
                || ![p.a, p.b, p.c, p.d].iter().all(|v| v.is_finite())
            {
                return bad(format!("archetype {i} needs positive finite parameters"));
            }
        }
        if !(self.rd_noise_rel >= 0.0 && self.feature_noise >= 0.0)
            || !self.rd_noise_rel.is_finite()
            || !self.feature_noise.is_finite()
        {
            return bad("noise levels must be finite and non-negative".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub grid: OperatingPointGrid,
    pub samples: Vec<RdSample>,
    pub features: Vec<FeatureVector>,
    /// Archetype index of every chunk.
    pub labels: Vec<usize>,
}

pub fn chunk_id(i: usize) -> String {
    format!("chunk_{i:06}")
}

/// Generates the corpus. Chunk `i` draws from its own ChaCha stream, so the
/// output is a pure function of the configuration.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let k = cfg.k_true;

    // Standardize log-parameters by their spread across archetypes.
    let logs: Vec<[f64; 4]> = cfg
        .archetypes
        .iter()
        .map(ArchetypeParams::log_params)
        .collect();
    let mut center = [0.0; 4];
    let mut scale = [0.0; 4];
    for j in 0..4 {
        center[j] = logs.iter().map(|l| l[j]).sum::<f64>() / k as f64;
        let var = logs.iter().map(|l| (l[j] - center[j]).powi(2)).sum::<f64>() / k as f64;
        scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let mut proj_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    proj_rng.set_stream(0);
    let projection: Vec<[f64; 4]> = (0..cfg.feature_dim)
        .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut proj_rng)))
        .collect();
    let offsets: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| 5.0 * Distribution::<f64>::sample(&StandardNormal, &mut proj_rng))
        .collect();

    let cumulative: Vec<f64> = cfg
        .mixture
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let rd_noise =
        Normal::new(0.0, cfg.rd_noise_rel).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let feature_noise =
        Normal::new(0.0, cfg.feature_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut samples = Vec::with_capacity(cfg.n_chunks);
    let mut features = Vec::with_capacity(cfg.n_chunks);
    let mut labels = Vec::with_capacity(cfg.n_chunks);
    for i in 0..cfg.n_chunks {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let u: f64 = rng.random();
        let label = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| cfg.mixture.iter().rposition(|&p| p > 0.0).unwrap_or(k - 1));
        let base = cfg.archetypes[label];
        let mut jitter = || rd_noise.sample(&mut rng).exp();
        let p = ArchetypeParams {
            a: base.a * jitter(),
            b: base.b * jitter(),
            c: base.c * jitter(),
            d: base.d * jitter(),
        };
        let id = chunk_id(i);
        let rates = cfg.grid.points().iter().map(|&q| p.rate(q)).collect();
        let qualities = cfg.grid.points().iter().map(|&q| p.quality(q)).collect();
        samples.push(RdSample::new(id.clone(), rates, qualities, &cfg.grid)?);

        let lp = p.log_params();
        let z: [f64; 4] = std::array::from_fn(|j| (lp[j] - center[j]) / scale[j]);
        let values = projection
            .iter()
            .zip(&offsets)
            .map(|(row, off)| {
                row.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>()
                    + off
                    + feature_noise.sample(&mut rng)
            })
            .collect();
        features.push(FeatureVector::new(id, values));
        labels.push(label);
    }
    Ok(SyntheticCorpus {
        grid: cfg.grid.clone(),
        samples,
        features,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_chunks_equal_their_archetype() {
        let cfg = SynthConfig {
            rd_noise_rel: 0.0,
            feature_noise: 0.0,
            ..SynthConfig::default_corpus(200, 3)
        };
        let corpus = generate(&cfg).unwrap();
        for (s, &l) in corpus.samples.iter().zip(&corpus.labels) {
            let arch = cfg.archetypes[l];
            for (j, &q) in cfg.grid.points().iter().enumerate() {
                assert_eq!(s.rates[j], arch.rate(q));
                assert_eq!(s.qualities[j], arch.quality(q));
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig::default_corpus(300, 42);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig::default_corpus(300, 43);
        assert_ne!(
            generate(&cfg).unwrap().labels,
            generate(&other).unwrap().labels
        );
    }

    #[test]
    fn prefix_stability_across_sizes() {
        let small = generate(&SynthConfig::default_corpus(50, 9)).unwrap();
        let large = generate(&SynthConfig::default_corpus(100, 9)).unwrap();
        assert_eq!(small.samples[..], large.samples[..50]);
    }

    #[test]
    fn frequencies_follow_the_mixture() {
        let cfg = SynthConfig::default_corpus(20_000, 5);
        let corpus = generate(&cfg).unwrap();
        let n = corpus.labels.len() as f64;
        for (l, &p) in cfg.mixture.iter().enumerate() {
            let freq = corpus.labels.iter().filter(|&&x| x == l).count() as f64 / n;
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "archetype {l}: {freq} vs {p}"
            );
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::default_corpus(10, 0);
        cfg.mixture[0] += 0.1;
        assert!(generate(&cfg).is_err());
        let mut cfg = SynthConfig::default_corpus(10, 0);
        cfg.mixture.pop();
        assert!(generate(&cfg).is_err());
        let mut cfg = SynthConfig::default_corpus(10, 0);
        cfg.rd_noise_rel = -1.0;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let json = r#"{
            "n_chunks": 5,
            "k_true": 1,
            "grid": [10.0, 20.0, 30.0],
            "archetypes": [{"a": 45.0, "b": 0.3, "c": 3000.0, "d": 0.05}],
            "mixture": [1.0]
        }"#;
        let cfg = SynthConfig::from_json(json).unwrap();
        assert_eq!(cfg.rd_noise_rel, 0.03);
        assert_eq!(cfg.feature_dim, 22);
        assert_eq!(cfg.seed, 0);
        assert_eq!(generate(&cfg).unwrap().features[0].values.len(), 22);
    }
}
