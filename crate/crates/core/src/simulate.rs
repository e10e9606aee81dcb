//! Synthetic data: the three-group regression benchmark and a generator of
//! donor-like recurrent gap times with administrative censoring.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution};

use crate::conjugate::RegressionData;
use crate::covariates::{MetricChoice, MixedCovariateMatrix};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::recurrent::{RecurrentDataset, Subject};
use crate::stats::{std_normal, std_normal_lower_truncated};

/// Group sizes of the three-group regression benchmark.
pub const APPENDIX_E_SIZES: [usize; 3] = [75, 75, 50];
/// Means of the continuous pair `(x1, x2)` per group.
pub const APPENDIX_E_MEANS: [[f64; 2]; 3] = [[-3.0, 3.0], [0.0, 0.0], [3.0, 3.0]];
/// Success probability of the binary pair `(x3, x4)` per group.
pub const APPENDIX_E_Q: [f64; 3] = [0.1, 0.5, 0.9];
/// Regression coefficients on `(1, x1, x2, x3, x4)` per group.
pub const APPENDIX_E_BETA: [[f64; 5]; 3] = [[1.0, 5.0, 2.0, 1.0, 0.0], [4.0, 2.0, -2.0, 1.0, -1.0], [-1.0, -5.0, -2.0, -1.0, 1.0]];
/// Variance of both the covariates and the responses.
pub const APPENDIX_E_VAR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated<D> {
    pub data: D,
    pub truth: Partition,
}

/// 200 items in three groups: `(x1, x2) ~ N₂(μ_j, 0.5 I)`, `x3, x4 ~
/// Bern(q_j)`, `y ~ N((1, x)ᵀβ_j, 0.5)`. Similarity uses `x1..x4`; the
/// design row is `(1, x1, x2, x3, x4)`.
pub fn simulate_appendix_e<R: Rng + ?Sized>(rng: &mut R) -> Simulated<RegressionData> {
    let n: usize = APPENDIX_E_SIZES.iter().sum();
    let sd = APPENDIX_E_VAR.sqrt();
    let mut labels = Vec::with_capacity(n);
    let mut cont = Vec::with_capacity(2 * n);
    let mut bin = Vec::with_capacity(n);
    let mut design = Vec::with_capacity(5 * n);
    let mut y = Vec::with_capacity(n);
    for (g, &size) in APPENDIX_E_SIZES.iter().enumerate() {
        let coin = Bernoulli::new(APPENDIX_E_Q[g]).expect("probability in [0, 1]");
        for _ in 0..size {
            let x1 = APPENDIX_E_MEANS[g][0] + sd * std_normal(rng);
            let x2 = APPENDIX_E_MEANS[g][1] + sd * std_normal(rng);
            let x3 = coin.sample(rng) as u8;
            let x4 = coin.sample(rng) as u8;
            let row = [1.0, x1, x2, x3 as f64, x4 as f64];
            let mean: f64 = row.iter().zip(&APPENDIX_E_BETA[g]).map(|(a, b)| a * b).sum();
            y.push(mean + sd * std_normal(rng));
            labels.push(g);
            cont.extend([x1, x2]);
            bin.push(vec![x3, x4]);
            design.extend(row);
        }
    }
    let covariates =
        MixedCovariateMatrix::new(DMatrix::from_row_slice(n, 2, &cont), bin, MetricChoice::Empirical).expect("non-degenerate covariates");
    let data = RegressionData::new(y, DMatrix::from_row_slice(n, 5, &design), covariates).expect("consistent sizes");
    Simulated {
        data,
        truth: Partition::from_labels(&labels),
    }
}

/// One latent donor group of the recurrent generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RecClusterSpec {
    pub size: usize,
    pub alpha: f64,
    pub psi: f64,
    pub sigma2: f64,
    /// mean of the continuous static covariates (age, bmi)
    pub continuous_mean: [f64; 2],
    pub continuous_sd: [f64; 2],
    /// probabilities of the binary static covariates (gender, smoke)
    pub binary_prob: [f64; 2],
}

/// Donor-like data. Static covariates are age and BMI at first donation
/// (continuous) and gender and smoking (binary); the linear predictor has
/// fixed effects for gender and three blood-group dummies (four groups,
/// uniform) and one time-varying effect, age at each donation.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentSimSpec {
    pub clusters: Vec<RecClusterSpec>,
    /// coefficients of (gender, blood B, blood AB, blood O)
    pub beta0: [f64; 4],
    /// coefficient of the centred age at each donation, per decade
    pub beta_age: f64,
    /// the observation window of each donor is uniform on this interval,
    /// starting at the first donation, in days
    pub window: (f64, f64),
    /// at most this many observed gaps per donor
    pub max_events: usize,
}

impl RecurrentSimSpec {
    /// Three groups of 40 donors separated by BMI and smoking, which enter
    /// only the partition prior. Age and gender share one distribution across
    /// groups so the linear predictor cannot absorb the group intercepts,
    /// which are close enough that the likelihood alone mixes them.
    pub fn default_three_groups() -> Self {
        let group = |alpha: f64, bmi: f64, p_smoke: f64| RecClusterSpec {
            size: 40,
            alpha,
            psi: 0.4,
            sigma2: 0.09,
            continuous_mean: [40.0, bmi],
            continuous_sd: [8.0, 1.0],
            binary_prob: [0.5, p_smoke],
        };
        RecurrentSimSpec {
            clusters: vec![group(4.2, 21.0, 0.1), group(4.6, 25.0, 0.5), group(5.0, 29.0, 0.9)],
            beta0: [0.2, 0.05, -0.05, 0.0],
            beta_age: 0.05,
            window: (700.0, 1100.0),
            max_events: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Spec("at least one cluster is required".into()));
        }
        for (j, c) in self.clusters.iter().enumerate() {
            if c.size == 0 {
                return Err(Error::Spec(format!("cluster {j} is empty")));
            }
            if !(c.sigma2 > 0.0) {
                return Err(Error::Spec(format!("cluster {j}: sigma2 must be positive")));
            }
            if c.continuous_sd.iter().any(|s| !(*s >= 0.0)) || c.binary_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Spec(format!("cluster {j}: invalid covariate distribution")));
            }
        }
        if !(self.window.0 > 0.0 && self.window.1 >= self.window.0) {
            return Err(Error::Spec("window must satisfy 0 < lower <= upper".into()));
        }
        if self.max_events == 0 {
            return Err(Error::Spec("max_events must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generates donors group by group. Each donor's window starts at the first
/// observed gap, so every donor has at least one observed gap and exactly one
/// censored gap; the window is shortened when more than `max_events` gaps
/// would fall inside it.
pub fn simulate_recurrent_synthetic<R: Rng + ?Sized>(spec: &RecurrentSimSpec, rng: &mut R) -> Result<Simulated<RecurrentDataset>> {
    spec.validate()?;
    let n: usize = spec.clusters.iter().map(|c| c.size).sum();
    let mut subjects = Vec::with_capacity(n);
    let mut cont = Vec::with_capacity(2 * n);
    let mut bin = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (g, c) in spec.clusters.iter().enumerate() {
        for _ in 0..c.size {
            let age = c.continuous_mean[0] + c.continuous_sd[0] * std_normal(rng);
            let bmi = c.continuous_mean[1] + c.continuous_sd[1] * std_normal(rng);
            let gender = rng.gen_bool(c.binary_prob[0]) as u8;
            let smoke = rng.gen_bool(c.binary_prob[1]) as u8;
            let blood = rng.gen_range(0..4usize);
            let mut x_fixed = vec![gender as f64, 0.0, 0.0, 0.0];
            if blood > 0 {
                x_fixed[blood] = 1.0;
            }
            let fixed: f64 = x_fixed.iter().zip(&spec.beta0).map(|(a, b)| a * b).sum();
            let mut elapsed = 0.0;
            let mut tau = f64::NAN;
            let mut y = Vec::new();
            let mut x_time = Vec::new();
            loop {
                let x_age = (age + elapsed / 365.25 - 40.0) / 10.0;
                let eta = std_normal_lower_truncated(0.0, rng);
                let log_gap = c.alpha + fixed + spec.beta_age * x_age + c.psi * eta + c.sigma2.sqrt() * std_normal(rng);
                let gap = log_gap.exp();
                x_time.push(vec![x_age]);
                if y.is_empty() {
                    tau = gap + rng.gen_range(spec.window.0..=spec.window.1);
                }
                if elapsed + gap >= tau {
                    break;
                }
                if y.len() == spec.max_events {
                    tau = elapsed + 0.5 * gap;
                    break;
                }
                y.push(log_gap);
                elapsed += gap;
            }
            let censor_bound = (tau - elapsed).ln();
            subjects.push(Subject {
                id: format!("d{}", subjects.len() + 1),
                y,
                censor_bound,
                x_fixed,
                x_time,
            });
            cont.extend([age, bmi]);
            bin.push(vec![gender, smoke]);
            labels.push(g);
        }
    }
    let covariates = MixedCovariateMatrix::new(DMatrix::from_row_slice(n, 2, &cont), bin, MetricChoice::Empirical)?;
    Ok(Simulated {
        data: RecurrentDataset::new(subjects, covariates)?,
        truth: Partition::from_labels(&labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn appendix_e_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sim = simulate_appendix_e(&mut rng);
        assert_eq!(sim.truth.sizes(), &[75, 75, 50]);
        assert_eq!(sim.data.design.ncols(), 5);
        let x = &sim.data.covariates;
        let m1: f64 = (0..75).map(|i| x.continuous()[(i, 0)]).sum::<f64>() / 75.0;
        let m2: f64 = (0..75).map(|i| x.continuous()[(i, 1)]).sum::<f64>() / 75.0;
        let tol = 3.0 * (0.5f64 / 75.0).sqrt();
        assert!((m1 + 3.0).abs() < tol && (m2 - 3.0).abs() < tol);
        let freq: f64 = (150..200).map(|i| x.binary_row(i).iter().map(|&b| b as f64).sum::<f64>()).sum::<f64>() / 100.0;
        assert!((freq - 0.9).abs() < 3.0 * (0.09f64 / 100.0).sqrt());
    }

    #[test]
    fn recurrent_generator_censoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RecurrentSimSpec::default_three_groups();
        let sim = simulate_recurrent_synthetic(&spec, &mut rng).unwrap();
        assert_eq!(sim.data.n_subjects(), 120);
        for s in sim.data.subjects() {
            assert!(!s.y.is_empty() && s.y.len() <= spec.max_events);
            assert_eq!(s.x_time.len(), s.y.len() + 1);
            assert!(s.censor_bound.is_finite());
        }
    }

    #[test]
    fn skewness_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut spec = RecurrentSimSpec::default_three_groups();
        spec.clusters.truncate(1);
        spec.clusters[0].psi = 2.0;
        spec.clusters[0].size = 400;
        spec.beta0 = [0.0; 4];
        spec.beta_age = 0.0;
        spec.window = (1e5, 1e5);
        let sim = simulate_recurrent_synthetic(&spec, &mut rng).unwrap();
        let ys: Vec<f64> = sim.data.subjects().iter().flat_map(|s| s.y.iter().copied()).collect();
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        let m3 = ys.iter().map(|v| (v - m).powi(3)).sum::<f64>() / ys.len() as f64;
        assert!(m3 > 0.0);
    }

    #[test]
    fn invalid_spec() {
        let mut spec = RecurrentSimSpec::default_three_groups();
        spec.clusters[1].sigma2 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(simulate_recurrent_synthetic(&spec, &mut rng), Err(Error::Spec(_))));
    }
}
