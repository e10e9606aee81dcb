//! Flat `key = value` configuration and the typed run configuration built
//! from it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::cohesion::{NggParams, UKernel};
use crate::conjugate::{ConjPriorConfig, ConjugateConfig};
use crate::covariates::{MetricChoice, MixedCovariateMatrix};
use crate::error::{Error, Result};
use crate::recurrent::{RecPriorConfig, RecurrentConfig};
use crate::similarity::{calibrate_lambda, SimilarityConfig, SimilarityFamily};
use crate::trace::{InitStrategy, SamplerConfig};

/// Prefix of environment variables overriding config keys: `ngg.kappa` is
/// overridden by `PPMX_NGG_KAPPA`.
pub const ENV_PREFIX: &str = "PPMX_";

/// Every key understood by [`RunConfig`].
pub const KNOWN_KEYS: &[&str] = &[
    "model",
    "seed",
    "chains",
    "output_dir",
    "ngg.kappa",
    "ngg.sigma",
    "similarity.family",
    "similarity.lambda",
    "similarity.alpha",
    "similarity.eps_star",
    "similarity.n_mc",
    "similarity.metric",
    "sampler.n_iter",
    "sampler.n_burnin",
    "sampler.init",
    "sampler.u_kernel",
    "sampler.u_proposal_sd",
    "prior.mu0",
    "prior.B0_scale",
    "prior.a0",
    "prior.b0",
    "rec.alpha0",
    "rec.psi0",
    "rec.kappa0",
    "rec.kappa1",
    "rec.a",
    "rec.b",
    "rec.nu0",
    "rec.gamma0",
    "rec.Sigma0_scale",
    "rec.R",
    "rec.shape_from_subjects",
    "benchmark.subsamples",
    "benchmark.subsample_size",
];

/// Ordered `key = value` pairs. Lines starting with `#` and blank lines are
/// skipped; a trailing `# ...` after a value is a comment too.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (row, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(p) => &line[..p],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                row: row + 1,
                column: "line".into(),
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FlatConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Applies `PPMX_*` overrides from `vars`; names are matched against the
    /// known keys with dots replaced by underscores, case-insensitively.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            if let Some(key) = KNOWN_KEYS.iter().find(|k| k.replace('.', "_").eq_ignore_ascii_case(rest)) {
                self.entries.insert(key.to_string(), value);
            }
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.parsed(key, default)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default)
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.parsed(key, default)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        self.parsed(key, default)
    }

    /// Comma-separated reals.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|e| Error::config(key, format!("cannot parse `{t}`: {e}"))))
                    .collect()
            })
            .transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    #[default]
    ConjugateRegression,
    Recurrent,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "conjugate_regression" => Ok(ModelKind::ConjugateRegression),
            "recurrent" => Ok(ModelKind::Recurrent),
            other => Err(Error::config("model", format!("expected conjugate_regression or recurrent, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::ConjugateRegression => "conjugate_regression",
            ModelKind::Recurrent => "recurrent",
        })
    }
}

/// Fixed temperature or one calibrated from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSetting {
    Fixed(f64),
    Auto { eps_star: f64, n_mc: usize },
}

/// Settings of the recurrent-event prior that are not tied to the data
/// dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RecSettings {
    pub alpha0: f64,
    pub psi0: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub a: f64,
    pub b: f64,
    pub nu0: f64,
    pub gamma0: f64,
    /// `Σ₀ = scale · I`
    pub sigma0_scale: f64,
    pub r: usize,
    pub shape_from_subjects: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub ngg: NggParams,
    pub family: SimilarityFamily,
    pub lambda: LambdaSetting,
    pub alpha: f64,
    pub metric: MetricChoice,
    pub sampler: SamplerConfig,
    /// one value (broadcast) or one per design column
    pub mu0: Vec<f64>,
    pub b0_scale: f64,
    pub a0: f64,
    pub b0: f64,
    pub rec: RecSettings,
    pub seed: u64,
    pub chains: usize,
    pub output_dir: PathBuf,
    pub subsamples: usize,
    pub subsample_size: usize,
    /// the flat form this was built from, for hashing and the manifest
    flat: FlatConfig,
}

impl RunConfig {
    /// Builds and validates every sub-configuration. Missing keys take
    /// defaults.
    pub fn from_flat(flat: &FlatConfig) -> Result<Self> {
        let model = flat.get("model").map_or(Ok(ModelKind::default()), str::parse)?;
        let ngg = NggParams::new(flat.f64_or("ngg.kappa", 1.0)?, flat.f64_or("ngg.sigma", 0.2)?)?;
        let family: SimilarityFamily = flat.get("similarity.family").map_or(Ok(SimilarityFamily::GC), str::parse)?;
        let eps_star = flat.f64_or("similarity.eps_star", 0.1)?;
        let n_mc = flat.usize_or("similarity.n_mc", 10)?;
        let lambda = match flat.get("similarity.lambda") {
            Some("auto") => LambdaSetting::Auto { eps_star, n_mc },
            _ => LambdaSetting::Fixed(flat.f64_or("similarity.lambda", 0.5)?),
        };
        let alpha = flat.f64_or("similarity.alpha", 1.0)?;
        match lambda {
            LambdaSetting::Fixed(l) => {
                SimilarityConfig::new(family, l, alpha)?;
            }
            LambdaSetting::Auto { eps_star, n_mc } => {
                SimilarityConfig::new(family, 1.0, alpha)?;
                if !(eps_star > 0.0 && eps_star.is_finite()) {
                    return Err(Error::config("similarity.eps_star", "must be positive"));
                }
                if n_mc == 0 {
                    return Err(Error::config("similarity.n_mc", "must be at least 1"));
                }
            }
        }
        let metric = flat.get("similarity.metric").map_or(Ok(MetricChoice::default()), str::parse)?;
        let sampler = SamplerConfig {
            n_iter: flat.usize_or("sampler.n_iter", 2000)?,
            n_burnin: flat.usize_or("sampler.n_burnin", 1000)?,
            init: flat.get("sampler.init").map_or(Ok(InitStrategy::default()), str::parse)?,
            u_kernel: flat.get("sampler.u_kernel").map_or(Ok(UKernel::default()), str::parse)?,
            u_proposal_sd: flat.get("sampler.u_proposal_sd").map(|_| flat.f64_or("sampler.u_proposal_sd", 1.0)).transpose()?,
        };
        sampler.validate()?;
        let mu0 = flat.f64_list("prior.mu0")?.unwrap_or_else(|| vec![0.0]);
        if mu0.is_empty() || mu0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("prior.mu0", "must be finite"));
        }
        let positive = |key: &str, v: f64| -> Result<f64> {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::config(key, "must be positive"))
            }
        };
        let b0_scale = positive("prior.B0_scale", flat.f64_or("prior.B0_scale", 100.0)?)?;
        let a0 = positive("prior.a0", flat.f64_or("prior.a0", 2.0)?)?;
        let b0 = positive("prior.b0", flat.f64_or("prior.b0", 1.0)?)?;
        let std = RecPriorConfig::standard(0);
        let rec = RecSettings {
            alpha0: flat.f64_or("rec.alpha0", std.alpha0)?,
            psi0: flat.f64_or("rec.psi0", std.psi0)?,
            kappa0: flat.f64_or("rec.kappa0", std.kappa0)?,
            kappa1: flat.f64_or("rec.kappa1", std.kappa1)?,
            a: flat.f64_or("rec.a", std.a)?,
            b: flat.f64_or("rec.b", std.b)?,
            nu0: flat.f64_or("rec.nu0", std.nu0)?,
            gamma0: flat.f64_or("rec.gamma0", std.gamma0)?,
            sigma0_scale: positive("rec.Sigma0_scale", flat.f64_or("rec.Sigma0_scale", 1.0)?)?,
            r: flat.usize_or("rec.R", std.r)?,
            shape_from_subjects: flat.bool_or("rec.shape_from_subjects", false)?,
        };
        let cfg = RunConfig {
            model,
            ngg,
            family,
            lambda,
            alpha,
            metric,
            sampler,
            mu0,
            b0_scale,
            a0,
            b0,
            seed: flat.u64_or("seed", 1)?,
            chains: flat.usize_or("chains", 1)?,
            output_dir: PathBuf::from(flat.get("output_dir").unwrap_or("ppmx_out")),
            subsamples: flat.usize_or("benchmark.subsamples", 100)?,
            subsample_size: flat.usize_or("benchmark.subsample_size", 200)?,
            rec,
            flat: flat.clone(),
        };
        cfg.rec_prior(0)?;
        if cfg.chains == 0 {
            return Err(Error::config("chains", "must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn flat(&self) -> &FlatConfig {
        &self.flat
    }

    /// SHA-256 of the canonical config text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.flat.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Similarity settings for covariates `x`, running the λ heuristic when
    /// `similarity.lambda = auto`.
    pub fn similarity<R: Rng + ?Sized>(&self, x: &MixedCovariateMatrix, rng: &mut R) -> Result<SimilarityConfig> {
        let lambda = match self.lambda {
            LambdaSetting::Fixed(l) => l,
            LambdaSetting::Auto { .. } if self.family == SimilarityFamily::One => 1.0,
            LambdaSetting::Auto { eps_star, n_mc } => calibrate_lambda(x, eps_star, n_mc, rng)?.lambda,
        };
        SimilarityConfig::new(self.family, lambda, self.alpha)
    }

    /// NIG prior for a design with `p` columns.
    pub fn conj_prior(&self, p: usize) -> Result<ConjPriorConfig> {
        let mu0 = match self.mu0.len() {
            1 => DVector::from_element(p, self.mu0[0]),
            l if l == p => DVector::from_column_slice(&self.mu0),
            l => {
                return Err(Error::config("prior.mu0", format!("expected 1 or {p} values, got {l}")));
            }
        };
        ConjPriorConfig::new(mu0, DMatrix::identity(p, p) * self.b0_scale, self.a0, self.b0)
    }

    pub fn conjugate_config(&self, p: usize, similarity: SimilarityConfig) -> Result<ConjugateConfig> {
        Ok(ConjugateConfig {
            ngg: self.ngg,
            similarity,
            prior: self.conj_prior(p)?,
            sampler: self.sampler.clone(),
        })
    }

    /// Recurrent prior for `p1` fixed-time covariates.
    pub fn rec_prior(&self, p1: usize) -> Result<RecPriorConfig> {
        let r = &self.rec;
        let prior = RecPriorConfig {
            alpha0: r.alpha0,
            psi0: r.psi0,
            kappa0: r.kappa0,
            kappa1: r.kappa1,
            a: r.a,
            b: r.b,
            sigma0: DMatrix::identity(p1, p1) * r.sigma0_scale,
            nu0: r.nu0,
            gamma0: r.gamma0,
            r: r.r,
            shape_from_subjects: r.shape_from_subjects,
        };
        prior.validate(p1)?;
        Ok(prior)
    }

    pub fn recurrent_config(&self, p1: usize, similarity: SimilarityConfig) -> Result<RecurrentConfig> {
        Ok(RecurrentConfig {
            ngg: self.ngg,
            similarity,
            prior: self.rec_prior(p1)?,
            sampler: self.sampler.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_defaults() {
        let flat = FlatConfig::parse("# run\nngg.kappa = 0.3 # mass\n\nngg.sigma=0.2\nsimilarity.family = gA\n").unwrap();
        let cfg = RunConfig::from_flat(&flat).unwrap();
        assert_eq!(cfg.ngg, NggParams { kappa: 0.3, sigma: 0.2 });
        assert_eq!(cfg.family, SimilarityFamily::GA);
        assert_eq!(cfg.lambda, LambdaSetting::Fixed(0.5));
        assert_eq!(cfg.sampler.n_iter, 2000);
    }

    #[test]
    fn errors_name_the_key() {
        let bad_sigma = FlatConfig::parse("ngg.sigma = 1.5").unwrap();
        match RunConfig::from_flat(&bad_sigma) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "ngg.sigma"),
            other => panic!("{other:?}"),
        }
        match FlatConfig::parse("ngg.kapa = 1") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "ngg.kapa"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_flat(&FlatConfig::parse("sampler.n_iter = ten").unwrap()) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "sampler.n_iter"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(FlatConfig::parse("just words"), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn env_overrides() {
        let mut flat = FlatConfig::parse("ngg.kappa = 0.3").unwrap();
        flat.apply_env([
            ("PPMX_NGG_KAPPA".to_string(), "2".to_string()),
            ("PPMX_REC_SIGMA0_SCALE".to_string(), "4".to_string()),
            ("HOME".to_string(), "/".to_string()),
        ]);
        assert_eq!(flat.get("ngg.kappa"), Some("2"));
        assert_eq!(flat.get("rec.Sigma0_scale"), Some("4"));
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = RunConfig::from_flat(&FlatConfig::parse("seed = 3\nngg.kappa=1").unwrap()).unwrap();
        let b = RunConfig::from_flat(&FlatConfig::parse("ngg.kappa = 1\n# x\nseed = 3").unwrap()).unwrap();
        let c = RunConfig::from_flat(&FlatConfig::parse("seed = 4\nngg.kappa=1").unwrap()).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn priors_from_settings() {
        let cfg = RunConfig::from_flat(&FlatConfig::parse("prior.mu0 = 1, 2\nprior.B0_scale = 4").unwrap()).unwrap();
        let p = cfg.conj_prior(2).unwrap();
        assert_eq!(p.mu0().as_slice(), &[1.0, 2.0]);
        assert_eq!(p.cov0()[(1, 1)], 4.0);
        assert!(cfg.conj_prior(3).is_err());
        let rec = cfg.rec_prior(3).unwrap();
        assert_eq!(rec.sigma0.shape(), (3, 3));
        assert!(RunConfig::from_flat(&FlatConfig::parse("rec.R = 0").unwrap()).is_err());
    }
}
