//! Synthetic tasks, exact discrete oracles and a desk-scale ablation bench.
//!
//! The ablation pool mimics a two-domain task split: every domain embeds a
//! shared set of class latents through its own random subspace of the input
//! space, and each task in the pool owns a few classes of one domain. A source
//! "extractor" projects inputs onto the orthonormalized class means of its
//! task, estimated from plenty of source data. The target task lives in the
//! first domain, so sources from the same domain carry most of the target's
//! class information while sources from the other domain mostly pass noise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{ConditionalMeans, FeatureMatrix, LabelVector, Ridge};
use crate::mcr::{
    evaluate, mix_features, optimal_classifier, predict, ClassEmbeddings, FittedEnsembleModel,
};
use crate::optimizer::{EnsembleWeights, Objective, OptimizerConfig};
use crate::pipeline::{fit_ensemble, prepare_sources, FitOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub n_classes: usize,
    pub feature_dim: usize,
    /// Scale of the Gaussian class means; 0 gives a task without signal.
    pub class_mean_scale: f64,
    pub noise_sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.feature_dim == 0 || self.n_samples < self.n_classes {
            return Err(Error::InvalidInput(format!(
                "need n_classes >= 1, feature_dim >= 1 and n_samples >= n_classes, got {self:?}"
            )));
        }
        if self.class_mean_scale.is_nan()
            || self.class_mean_scale < 0.0
            || self.noise_sigma.is_nan()
            || self.noise_sigma <= 0.0
        {
            return Err(Error::InvalidInput(
                "class_mean_scale must be >= 0 and noise_sigma > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    /// `n_classes x feature_dim` generating means.
    pub class_means: DMatrix<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Balanced Gaussian classes around seeded random means; sample `i` has label `i % n_classes`.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, d) = (spec.n_classes, spec.feature_dim);
    let class_means =
        DMatrix::from_fn(k, d, |_, _| 0.0).map(|_: f64| gaussian(&mut rng) * spec.class_mean_scale);
    let labels: Vec<usize> = (0..spec.n_samples).map(|i| i % k).collect();
    let mut values = Vec::with_capacity(spec.n_samples * d);
    for &y in &labels {
        for j in 0..d {
            values.push(class_means[(y, j)] + spec.noise_sigma * gaussian(&mut rng));
        }
    }
    Ok(SyntheticTask {
        features: FeatureMatrix::from_row_slice(spec.n_samples, d, &values)?,
        labels: LabelVector::new(labels, k)?,
        class_means,
    })
}

/// A joint distribution over a small discrete input space and the labels,
/// with one deterministic feature table per source.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJointSpec {
    /// `x_support x y_support`, entries sum to 1.
    joint: DMatrix<f64>,
    /// One `x_support x d` table per source.
    feature_tables: Vec<DMatrix<f64>>,
}

pub const MAX_X_SUPPORT: usize = 8;
pub const MAX_Y_SUPPORT: usize = 4;

impl DiscreteJointSpec {
    pub fn new(joint: DMatrix<f64>, feature_tables: Vec<DMatrix<f64>>) -> Result<Self> {
        let (nx, ny) = joint.shape();
        if nx == 0 || ny == 0 || nx > MAX_X_SUPPORT || ny > MAX_Y_SUPPORT {
            return Err(Error::InvalidInput(format!(
                "joint table must be at most {MAX_X_SUPPORT}x{MAX_Y_SUPPORT}, got {nx}x{ny}"
            )));
        }
        if joint.iter().any(|&p| !(p >= 0.0 && p.is_finite())) || (joint.sum() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidInput(
                "joint must be nonnegative and sum to 1".into(),
            ));
        }
        if let Some(y) = (0..ny).find(|&y| joint.column(y).sum() <= 0.0) {
            return Err(Error::ZeroMarginal(y));
        }
        let d = feature_tables.first().map_or(0, DMatrix::ncols);
        if d == 0
            || feature_tables
                .iter()
                .any(|t| t.nrows() != nx || t.ncols() != d)
        {
            return Err(Error::dims(format!(
                "every feature table must be {nx}xd with d >= 1"
            )));
        }
        Ok(Self {
            joint,
            feature_tables,
        })
    }

    /// Random instance whose feature tables are whitened under `P_X`.
    ///
    /// Needs `dim < x_support` so the whitening is well defined.
    pub fn random_whitened(
        seed: u64,
        x_support: usize,
        y_support: usize,
        dim: usize,
        n_sources: usize,
    ) -> Result<Self> {
        if dim >= x_support {
            return Err(Error::InvalidInput("dim must be below x_support".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut joint = DMatrix::from_fn(x_support, y_support, |_, _| 0.0);
        for v in joint.iter_mut() {
            *v = rng.random_range(0.05..1.0);
        }
        joint /= joint.sum();
        let p_x: DVector<f64> =
            DVector::from_iterator(x_support, joint.row_iter().map(|r| r.sum()));
        let tables = (0..n_sources)
            .map(|_| {
                let raw =
                    DMatrix::from_fn(x_support, dim, |_, _| 0.0).map(|_: f64| gaussian(&mut rng));
                whiten_weighted(&raw, &p_x)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(joint, tables)
    }

    pub fn x_support(&self) -> usize {
        self.joint.nrows()
    }

    pub fn y_support(&self) -> usize {
        self.joint.ncols()
    }

    pub fn n_sources(&self) -> usize {
        self.feature_tables.len()
    }

    pub fn dim(&self) -> usize {
        self.feature_tables[0].ncols()
    }

    pub fn joint(&self) -> &DMatrix<f64> {
        &self.joint
    }

    pub fn feature_table(&self, source: usize) -> &DMatrix<f64> {
        &self.feature_tables[source]
    }

    pub fn p_x(&self) -> DVector<f64> {
        DVector::from_iterator(self.x_support(), self.joint.row_iter().map(|r| r.sum()))
    }

    pub fn p_y(&self) -> DVector<f64> {
        DVector::from_iterator(self.y_support(), self.joint.column_iter().map(|c| c.sum()))
    }

    /// `sum_j alpha_j table_j`; `None` means the single table.
    pub fn mixed_table(&self, alpha: Option<&EnsembleWeights>) -> Result<DMatrix<f64>> {
        match alpha {
            None if self.n_sources() == 1 => Ok(self.feature_tables[0].clone()),
            None => Err(Error::InvalidInput(format!(
                "{} sources need explicit weights",
                self.n_sources()
            ))),
            Some(a) if a.len() != self.n_sources() => Err(Error::dims(format!(
                "{} weights for {} sources",
                a.len(),
                self.n_sources()
            ))),
            Some(a) => Ok(self.feature_tables.iter().zip(a.as_slice()).fold(
                DMatrix::zeros(self.x_support(), self.dim()),
                |acc, (t, &w)| acc + t * w,
            )),
        }
    }

    /// Exact `E[f_j(X) | Y = y]` with the label marginal as priors.
    pub fn conditional_means(&self, source: usize) -> Result<ConditionalMeans> {
        let table = &self.feature_tables[source];
        let p_y = self.p_y();
        let means = DMatrix::from_fn(self.y_support(), self.dim(), |y, k| {
            (0..self.x_support())
                .map(|x| self.joint[(x, y)] * table[(x, k)])
                .sum::<f64>()
                / p_y[y]
        });
        ConditionalMeans::new(means, p_y / self.p_y().sum())
    }

    /// `E[f(X)^T g(Y)] - 1/2 tr(cov f cov g)` under the exact distribution.
    pub fn two_sided_h_score(
        &self,
        alpha: Option<&EnsembleWeights>,
        g: &ClassEmbeddings,
    ) -> Result<f64> {
        let f = self.mixed_table(alpha)?;
        self.check_embeddings(g)?;
        let correlation: f64 = (0..self.x_support())
            .flat_map(|x| (0..self.y_support()).map(move |y| (x, y)))
            .map(|(x, y)| self.joint[(x, y)] * f.row(x).dot(&g.matrix().row(y)))
            .sum();
        let cov_f = weighted_covariance(&f, &self.p_x());
        let cov_g = weighted_covariance(g.matrix(), &self.p_y());
        Ok(correlation - 0.5 * (cov_f * cov_g).trace())
    }

    fn check_embeddings(&self, g: &ClassEmbeddings) -> Result<()> {
        if g.n_classes() != self.y_support() || g.dim() != self.dim() {
            return Err(Error::dims(format!(
                "embeddings are {}x{}, expected {}x{}",
                g.n_classes(),
                g.dim(),
                self.y_support(),
                self.dim()
            )));
        }
        Ok(())
    }
}

fn weighted_covariance(rows: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mean = rows.transpose() * w;
    let mut cov = DMatrix::zeros(rows.ncols(), rows.ncols());
    for (r, &p) in rows.row_iter().zip(w.iter()) {
        let c = r.transpose() - &mean;
        cov += &c * c.transpose() * p;
    }
    cov
}

fn whiten_weighted(rows: &DMatrix<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mean = rows.transpose() * w;
    let a = crate::features::inverse_sqrt_psd(&weighted_covariance(rows, w), 0.0)?;
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    Ok(centered * a.transpose())
}

/// `sum_x P(x) sum_y [P(y)(1 + f(x)^T g(y)) - P(y|x)]^2 / P(y)`.
///
/// The model posterior is used raw (no clipping). Inputs with zero mass are skipped.
pub fn chi2_divergence(
    spec: &DiscreteJointSpec,
    alpha: Option<&EnsembleWeights>,
    class_embeddings: &ClassEmbeddings,
) -> Result<f64> {
    let f = spec.mixed_table(alpha)?;
    spec.check_embeddings(class_embeddings)?;
    let (p_x, p_y) = (spec.p_x(), spec.p_y());
    if let Some(y) = p_y.iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroMarginal(y));
    }
    let g = class_embeddings.matrix();
    let mut total = 0.0;
    for x in 0..spec.x_support() {
        if p_x[x] <= 0.0 {
            continue;
        }
        let inner: f64 = (0..spec.y_support())
            .map(|y| {
                let model = p_y[y] * (1.0 + f.row(x).dot(&g.row(y)));
                let truth = spec.joint[(x, y)] / p_x[x];
                (model - truth).powi(2) / p_y[y]
            })
            .sum();
        total += p_x[x] * inner;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

/// Shape of the synthetic ablation pool.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    /// Source tasks in the target's domain and in the other domain.
    pub tasks_per_domain: [usize; 2],
    pub classes_per_task: usize,
    pub input_dim: usize,
    /// Dimension of each domain's class subspace.
    pub latent_dim: usize,
    pub class_mean_scale: f64,
    pub noise_sigma: f64,
    pub source_samples_per_class: usize,
    pub test_samples: usize,
    /// Every source task and the target use the same classes.
    pub shared_classes: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            tasks_per_domain: [4, 4],
            classes_per_task: 3,
            input_dim: 96,
            latent_dim: 6,
            class_mean_scale: 3.0,
            noise_sigma: 1.0,
            source_samples_per_class: 100,
            test_samples: 1000,
            shared_classes: false,
            optimizer: OptimizerConfig {
                learning_rate: 0.05,
                ..OptimizerConfig::default()
            },
        }
    }
}

impl AblationConfig {
    /// Same-domain sources trained on the target's own classes.
    pub fn easy() -> Self {
        Self {
            tasks_per_domain: [4, 0],
            shared_classes: true,
            noise_sigma: 0.5,
            ..Self::default()
        }
    }

    /// One same-domain source.
    pub fn single_source() -> Self {
        Self {
            tasks_per_domain: [1, 0],
            ..Self::default()
        }
    }

    fn validate(&self, k_shot: usize) -> Result<()> {
        if k_shot == 0 {
            return Err(Error::InvalidInput("k_shot must be at least 1".into()));
        }
        if self.tasks_per_domain.iter().sum::<usize>() == 0
            || self.classes_per_task < 2
            || self.latent_dim == 0
            || self.input_dim < self.latent_dim
            || self.source_samples_per_class == 0
            || self.test_samples == 0
        {
            return Err(Error::InvalidInput(format!(
                "invalid ablation config {self:?}"
            )));
        }
        self.optimizer.validate()
    }
}

/// Target data as seen through every source extractor.
#[derive(Debug, Clone)]
pub struct PoolData {
    pub source_domains: Vec<Domain>,
    pub train: Vec<FeatureMatrix>,
    pub train_labels: LabelVector,
    pub test: Vec<FeatureMatrix>,
    pub test_labels: LabelVector,
}

struct World {
    bases: [DMatrix<f64>; 2],
    latents: DMatrix<f64>,
    scale: f64,
    sigma: f64,
}

impl World {
    fn class_mean(&self, domain: Domain, class: usize) -> DVector<f64> {
        let basis = &self.bases[domain as usize];
        basis * self.latents.row(class).transpose() * self.scale
    }

    fn sample(&self, rng: &mut ChaCha8Rng, domain: Domain, class: usize) -> DVector<f64> {
        let mean = self.class_mean(domain, class);
        mean.map(|m| m + self.sigma * gaussian(rng))
    }
}

/// Orthonormal columns spanning the columns of `m` (modified Gram-Schmidt).
fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).clone_owned();
            let mut cj = q.column_mut(j);
            cj -= qi * proj;
        }
        let norm = q.column(j).norm();
        let mut cj = q.column_mut(j);
        cj /= norm;
    }
    q
}

fn random_basis(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(rows, cols, |_, _| 0.0).map(|_: f64| gaussian(rng));
    orthonormal_columns(&raw)
}

/// Draws the pool and extracts train/test target features for every source.
pub fn generate_pool(cfg: &AblationConfig, pool_seed: u64, k_shot: usize) -> Result<PoolData> {
    cfg.validate(k_shot)?;
    let mut rng = ChaCha8Rng::seed_from_u64(pool_seed);
    let c = cfg.classes_per_task;
    let n_groups = if cfg.shared_classes {
        1
    } else {
        cfg.tasks_per_domain.iter().copied().max().unwrap_or(0) + 1
    };
    let group_of = |task: usize| if cfg.shared_classes { 0 } else { task };
    let world = World {
        bases: [
            random_basis(&mut rng, cfg.input_dim, cfg.latent_dim),
            random_basis(&mut rng, cfg.input_dim, cfg.latent_dim),
        ],
        latents: DMatrix::from_fn(n_groups * c, cfg.latent_dim, |_, _| 0.0)
            .map(|_: f64| gaussian(&mut rng)),
        scale: cfg.class_mean_scale,
        sigma: cfg.noise_sigma,
    };

    // source extractors: rows are the orthonormalized estimated class means
    let mut extractors = Vec::new();
    let mut source_domains = Vec::new();
    for (domain, &n_tasks) in [Domain::A, Domain::B].iter().zip(&cfg.tasks_per_domain) {
        for task in 0..n_tasks {
            let mut means = DMatrix::zeros(cfg.input_dim, c);
            for local in 0..c {
                let class = group_of(task) * c + local;
                let mut acc = DVector::zeros(cfg.input_dim);
                for _ in 0..cfg.source_samples_per_class {
                    acc += world.sample(&mut rng, *domain, class);
                }
                means.set_column(local, &(acc / cfg.source_samples_per_class as f64));
            }
            extractors.push(orthonormal_columns(&means).transpose());
            source_domains.push(*domain);
        }
    }

    // the target lives in domain A, on a class group no source owns unless shared
    let target_group = n_groups - 1;
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<(Vec<FeatureMatrix>, LabelVector)> {
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let inputs: Vec<DVector<f64>> = labels
            .iter()
            .map(|&y| world.sample(rng, Domain::A, target_group * c + y))
            .collect();
        let feats = extractors
            .iter()
            .map(|w| {
                let rows: Vec<f64> = inputs
                    .iter()
                    .flat_map(|x| (w * x).iter().copied().collect::<Vec<_>>())
                    .collect();
                FeatureMatrix::from_row_slice(n, w.nrows(), &rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((feats, LabelVector::new(labels, c)?))
    };
    let (train, train_labels) = draw(k_shot * c, &mut rng)?;
    let (test, test_labels) = draw(cfg.test_samples, &mut rng)?;
    Ok(PoolData {
        source_domains,
        train,
        train_labels,
        test,
        test_labels,
    })
}

pub const METHOD_SINGLE: &str = "single_mcr_average";
pub const METHOD_AVERAGE: &str = "average_w";
pub const METHOD_FULL: &str = "h_ensemble_full";
pub const METHOD_SIMPLIFIED: &str = "h_ensemble_simplified";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub method: &'static str,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub source_domains: Vec<Domain>,
    /// Weights learned with the full objective.
    pub full_weights: EnsembleWeights,
    pub simplified_weights: EnsembleWeights,
    pub simplified_diverged: bool,
}

impl AblationReport {
    pub fn accuracy(&self, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .map(|r| r.accuracy)
    }

    /// Full-objective weight summed over sources of `domain`.
    pub fn weight_mass(&self, domain: Domain) -> f64 {
        self.full_weights
            .as_slice()
            .iter()
            .zip(&self.source_domains)
            .filter(|(_, d)| **d == domain)
            .map(|(w, _)| w)
            .sum()
    }

    /// `method,accuracy` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,accuracy\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.method, r.accuracy));
        }
        out
    }
}

fn accuracy_with(
    alpha: EnsembleWeights,
    prepared: &crate::pipeline::PreparedSources,
    objective: Objective,
    data: &PoolData,
) -> Result<f64> {
    let embeddings = optimal_classifier(&prepared.conditional_means, &alpha)?;
    let model = FittedEnsembleModel::new(
        alpha,
        prepared.whiteners.clone(),
        embeddings,
        objective,
        f64::NAN,
    )?;
    evaluate(&predict(&model, &data.test)?, &data.test_labels)
}

/// Runs the four methods on generated pool data.
pub fn run_ablation_on(data: &PoolData, cfg: &AblationConfig) -> Result<AblationReport> {
    let m = data.train.len();
    let whiten = Ridge::Auto;
    let prepared = prepare_sources(&data.train, &data.train_labels, whiten)?;

    let mut single = 0.0;
    for j in 0..m {
        single += accuracy_with(
            EnsembleWeights::one_hot(m, j),
            &prepared,
            Objective::Full,
            data,
        )?;
    }
    let single = single / m as f64;
    let average = accuracy_with(
        EnsembleWeights::uniform(m),
        &prepared,
        Objective::Full,
        data,
    )?;

    let fit = |objective| {
        let opts = FitOptions {
            optimizer: OptimizerConfig {
                objective,
                ..cfg.optimizer.clone()
            },
            whiten_ridge: whiten,
        };
        fit_ensemble(&data.train, &data.train_labels, &opts)
    };
    let (full_model, _) = fit(Objective::Full)?;
    let full = evaluate(&predict(&full_model, &data.test)?, &data.test_labels)?;
    let (simp_model, simp_report) = fit(Objective::Simplified)?;
    let simplified = evaluate(&predict(&simp_model, &data.test)?, &data.test_labels)?;

    Ok(AblationReport {
        rows: vec![
            AblationRow {
                method: METHOD_SINGLE,
                accuracy: single,
            },
            AblationRow {
                method: METHOD_AVERAGE,
                accuracy: average,
            },
            AblationRow {
                method: METHOD_FULL,
                accuracy: full,
            },
            AblationRow {
                method: METHOD_SIMPLIFIED,
                accuracy: simplified,
            },
        ],
        source_domains: data.source_domains.clone(),
        full_weights: full_model.alpha,
        simplified_weights: simp_model.alpha,
        simplified_diverged: simp_report.diverged,
    })
}

pub fn run_ablation_with(
    cfg: &AblationConfig,
    pool_seed: u64,
    k_shot: usize,
) -> Result<AblationReport> {
    run_ablation_on(&generate_pool(cfg, pool_seed, k_shot)?, cfg)
}

/// The default two-domain pool: 4 same-domain and 4 cross-domain sources.
pub fn run_ablation(pool_seed: u64, k_shot: usize) -> Result<AblationReport> {
    run_ablation_with(&AblationConfig::default(), pool_seed, k_shot)
}

/// Mixed whitened target features for arbitrary weights (used by examples).
pub fn mixed_train_features(data: &PoolData, alpha: &EnsembleWeights) -> Result<FeatureMatrix> {
    let prepared = prepare_sources(&data.train, &data.train_labels, Ridge::Auto)?;
    mix_features(&prepared.whitened, alpha.as_slice())
}
