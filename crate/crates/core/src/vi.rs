//! Annealed variational inference over poses and part-to-slot assignments.
//!
//! `q(Y)` is a Gaussian per object, `q(Z)` a matrix of responsibilities over
//! (observed-or-dummy row) × (object, part) slots. The doubly stochastic variant
//! balances `q(Z)` with Sinkhorn; the mixture variant only normalizes rows.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::metrics::Partition;
use crate::model::{build_part_features, transform_template, ModelConfig, Pose, Scene, TemplateSet};
use crate::sinkhorn::{self, AssignmentMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Doubly stochastic assignments (at most one point per slot).
    #[serde(rename = "gcm-ds")]
    Ds,
    /// Independent categorical assignment per point.
    #[serde(rename = "gcm-gmm")]
    Gmm,
}

/// Gaussian `q(y_k) = N(μ_k, Λ_k⁻¹)` over the stacked pose and appearance latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PosteriorRecord", try_from = "PosteriorRecord")]
pub struct PosePosterior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    logdet_precision: f64,
}

#[derive(Serialize, Deserialize)]
struct PosteriorRecord {
    mean: Vec<f64>,
    precision: Vec<Vec<f64>>,
}

impl From<PosePosterior> for PosteriorRecord {
    fn from(p: PosePosterior) -> Self {
        PosteriorRecord {
            mean: p.mean.iter().copied().collect(),
            precision: p
                .precision
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<PosteriorRecord> for PosePosterior {
    type Error = GcmError;

    fn try_from(r: PosteriorRecord) -> Result<Self> {
        let d = r.mean.len();
        if r.precision.len() != d || r.precision.iter().any(|row| row.len() != d) {
            return Err(GcmError::DimensionMismatch("precision must be d×d".into()));
        }
        let prec = DMatrix::from_fn(d, d, |i, j| r.precision[i][j]);
        PosePosterior::from_precision(DVector::from_vec(r.mean), prec)
    }
}

impl PosePosterior {
    pub fn from_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
            GcmError::DimensionMismatch("posterior precision is not positive definite".into())
        })?;
        let logdet_precision = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(PosePosterior {
            mean,
            covariance: chol.inverse(),
            precision,
            logdet_precision,
        })
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn logdet_precision(&self) -> f64 {
        self.logdet_precision
    }

    /// Geometric part of the mean as a pose.
    pub fn pose(&self) -> Pose {
        Pose::from_slice(&self.mean.as_slice()[..4])
    }
}

struct Slot {
    object: usize,
    dim: usize,
    /// `Fᵀ D⁻¹ F`.
    a: DMatrix<f64>,
    /// `Fᵀ D⁻¹`.
    ft_dinv: DMatrix<f64>,
    dinv: DVector<f64>,
    offset: DVector<f64>,
    logdet_d: f64,
}

/// A scene and template set with every quantity that does not change across
/// iterations precomputed.
pub struct InferenceProblem<'a> {
    pub templates: &'a TemplateSet,
    pub config: ModelConfig,
    n: usize,
    m: usize,
    slots: Vec<Slot>,
    object_slots: Vec<Range<usize>>,
    compatible: Vec<bool>,
    /// `Fᵀ D⁻¹ (x_m − m_j)` per compatible (m, j).
    b: Vec<DVector<f64>>,
    /// `(x_m − m_j)ᵀ D⁻¹ (x_m − m_j)` per compatible (m, j).
    c: Vec<f64>,
    log_a: f64,
    prior_mean: Vec<DVector<f64>>,
    prior_prec: Vec<DVector<f64>>,
}

impl<'a> InferenceProblem<'a> {
    pub fn new(scene: &Scene, templates: &'a TemplateSet, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        if scene.is_empty() {
            return Err(GcmError::Empty("scene has no points".into()));
        }
        if templates.is_empty() {
            return Err(GcmError::Empty("no templates".into()));
        }
        let n = templates.n_slots();
        let m = scene.len();
        if m > n {
            return Err(GcmError::TooManyPoints { points: m, slots: n });
        }
        let mode = config.mode;
        let dg = mode.dim();
        let lambda = config.lambda;

        let mut slots = Vec::with_capacity(n);
        let mut object_slots = Vec::with_capacity(templates.len());
        for (k, t) in templates.iter().enumerate() {
            let start = slots.len();
            for part in t.parts() {
                let j = slots.len();
                let f = build_part_features(part, mode, t.latent_dim()).map_err(|e| match e {
                    GcmError::MissingField { .. } => GcmError::MissingField { part: j },
                    other => other,
                })?;
                let mut var = vec![1.0 / lambda; dg];
                let mut offset = vec![0.0; dg];
                if let Some(block) = &part.appearance {
                    var.extend(block.variances().iter());
                    offset.extend(block.mean().iter());
                }
                let dinv = DVector::from_iterator(var.len(), var.iter().map(|v| 1.0 / v));
                let ft_dinv = {
                    let mut ft = f.transpose();
                    for (col, w) in dinv.iter().enumerate() {
                        ft.column_mut(col).scale_mut(*w);
                    }
                    ft
                };
                slots.push(Slot {
                    object: k,
                    dim: var.len(),
                    a: &ft_dinv * &f,
                    ft_dinv,
                    dinv,
                    offset: DVector::from_vec(offset),
                    logdet_d: var.iter().map(|v| v.ln()).sum(),
                });
            }
            object_slots.push(start..slots.len());
        }

        let mut compatible = vec![false; m * n];
        let mut b = vec![DVector::zeros(0); m * n];
        let mut c = vec![0.0; m * n];
        for mi in 0..m {
            let geo = &scene.points[mi];
            if geo.len() != dg {
                return Err(GcmError::DimensionMismatch(format!(
                    "point {mi} has {} geometric features but the feature mode uses {dg}",
                    geo.len()
                )));
            }
            let mut x = geo.clone();
            if let Some(app) = scene.appearance_of(mi) {
                x.extend_from_slice(app);
            }
            let x = DVector::from_vec(x);
            for (j, slot) in slots.iter().enumerate() {
                if slot.dim != x.len() {
                    continue;
                }
                let resid = &x - &slot.offset;
                compatible[mi * n + j] = true;
                c[mi * n + j] = resid.iter().zip(slot.dinv.iter()).map(|(r, w)| r * r * w).sum();
                b[mi * n + j] = &slot.ft_dinv * resid;
            }
        }

        let mut prior_mean = Vec::with_capacity(templates.len());
        let mut prior_prec = Vec::with_capacity(templates.len());
        for t in templates.iter() {
            let d = t.total_latent_dim();
            let mut mean = DVector::zeros(d);
            let mut prec = DVector::from_element(d, 1.0);
            for i in 0..4 {
                mean[i] = config.prior_mean[i];
                prec[i] = 1.0 / config.prior_variance[i];
            }
            prior_mean.push(mean);
            prior_prec.push(prec);
        }

        Ok(InferenceProblem {
            templates,
            log_a: config.match_prior_for(n).ln(),
            config: config.clone(),
            n,
            m,
            slots,
            object_slots,
            compatible,
            b,
            c,
            prior_mean,
            prior_prec,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.n
    }

    pub fn n_points(&self) -> usize {
        self.m
    }

    pub fn n_objects(&self) -> usize {
        self.object_slots.len()
    }

    pub fn object_of_slot(&self, j: usize) -> usize {
        self.slots[j].object
    }

    pub fn slot_range(&self, k: usize) -> Range<usize> {
        self.object_slots[k].clone()
    }

    pub fn is_compatible(&self, m: usize, j: usize) -> bool {
        self.compatible[m * self.n + j]
    }

    /// Prior `q(Y) = p(Y)`.
    pub fn prior_posterior(&self) -> Vec<PosePosterior> {
        (0..self.n_objects())
            .map(|k| {
                PosePosterior::from_precision(
                    self.prior_mean[k].clone(),
                    DMatrix::from_diagonal(&self.prior_prec[k]),
                )
                .expect("prior precision is positive")
            })
            .collect()
    }

    /// Uniform `U(0, 1]` draws on every admissible entry, then normalized for
    /// the variant.
    pub fn random_responsibilities<R: Rng + ?Sized>(
        &self,
        variant: Variant,
        rng: &mut R,
    ) -> Result<AssignmentMatrix> {
        let n = self.n;
        let mut log_rho = vec![f64::NEG_INFINITY; n * n];
        for i in 0..n {
            for j in 0..n {
                let admissible = if i < self.m {
                    self.compatible[i * n + j]
                } else {
                    variant == Variant::Ds
                };
                if admissible {
                    log_rho[i * n + j] = (1.0 - rng.random::<f64>()).ln();
                }
            }
        }
        self.normalize(log_rho, variant)
    }

    fn normalize(&self, mut log_rho: Vec<f64>, variant: Variant) -> Result<AssignmentMatrix> {
        let n = self.n;
        match variant {
            Variant::Ds => {
                sinkhorn::sinkhorn_log_in_place(
                    &mut log_rho,
                    n,
                    self.config.sinkhorn_tol,
                    self.config.sinkhorn_max_iter,
                )?;
            }
            Variant::Gmm => {
                sinkhorn::row_normalize_log_in_place(&mut log_rho[..self.m * n], n)?;
                log_rho[self.m * n..].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(AssignmentMatrix::new(n, self.m, log_rho).expect("normalized entries are valid"))
    }

    /// Expected log-likelihood `E_q(y)[log N(x_m | F_j y + m_j, β⁻¹ D_j)]` for
    /// every compatible observed (m, j); `-∞` elsewhere.
    fn expected_log_likelihoods(&self, posterior: &[PosePosterior], beta: f64) -> Vec<f64> {
        let n = self.n;
        let per_slot: Vec<(f64, f64)> = self
            .slots
            .iter()
            .map(|s| {
                let q = &posterior[s.object];
                let a_mu = &s.a * &q.mean;
                let trace = s.a.component_mul(&q.covariance).sum();
                let norm = -0.5 * (s.logdet_d - s.dim as f64 * beta.ln())
                    - 0.5 * s.dim as f64 * (2.0 * PI).ln();
                (trace + q.mean.dot(&a_mu), norm)
            })
            .collect();
        let mut out = vec![f64::NEG_INFINITY; self.m * n];
        for mi in 0..self.m {
            for (j, s) in self.slots.iter().enumerate() {
                let idx = mi * n + j;
                if !self.compatible[idx] {
                    continue;
                }
                let mu = &posterior[s.object].mean;
                let (quad_const, norm) = &per_slot[j];
                // (x − m − Fμ)ᵀ D⁻¹ (·) + tr(A Σ) = c − 2 μᵀ b + μᵀ A μ + tr(A Σ)
                let quad = self.c[idx] - 2.0 * mu.dot(&self.b[idx]) + quad_const;
                out[idx] = norm - 0.5 * beta * quad;
            }
        }
        out
    }
}

/// Closed-form `q(Y)` update given responsibilities.
pub fn update_pose_posterior(
    problem: &InferenceProblem<'_>,
    r: &AssignmentMatrix,
    beta: f64,
) -> Result<Vec<PosePosterior>> {
    if r.n() != problem.n {
        return Err(GcmError::DimensionMismatch(format!(
            "responsibilities are {}×{}, problem has {} slots",
            r.n(),
            r.n(),
            problem.n
        )));
    }
    let n = problem.n;
    (0..problem.n_objects())
        .map(|k| {
            let prior_prec = &problem.prior_prec[k];
            let mut prec = DMatrix::from_diagonal(prior_prec);
            let mut rhs = problem.prior_mean[k].component_mul(prior_prec);
            for j in problem.slot_range(k) {
                let slot = &problem.slots[j];
                let mut weight = 0.0;
                for mi in 0..problem.m {
                    let w = r.get(mi, j);
                    if w == 0.0 || !problem.compatible[mi * n + j] {
                        continue;
                    }
                    weight += w;
                    rhs.axpy(beta * w, &problem.b[mi * n + j], 1.0);
                }
                if weight != 0.0 {
                    prec += &slot.a * (beta * weight);
                }
            }
            let chol = Cholesky::new(prec.clone()).ok_or_else(|| {
                GcmError::DimensionMismatch("posterior precision lost definiteness".into())
            })?;
            let mean = chol.solve(&rhs);
            let logdet_precision = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Ok(PosePosterior {
                mean,
                covariance: chol.inverse(),
                precision: prec,
                logdet_precision,
            })
        })
        .collect()
}

/// Closed-form `q(Z)` update given the pose posteriors.
pub fn update_responsibilities(
    problem: &InferenceProblem<'_>,
    posterior: &[PosePosterior],
    beta: f64,
    variant: Variant,
) -> Result<AssignmentMatrix> {
    let n = problem.n;
    let ell = problem.expected_log_likelihoods(posterior, beta);
    let mut log_rho = vec![problem.log_a; n * n];
    for (dst, l) in log_rho.iter_mut().zip(&ell) {
        *dst = if *l == f64::NEG_INFINITY { *l } else { problem.log_a + l };
    }
    problem.normalize(log_rho, variant)
}

/// `E_q[log p(X | Y, Z)] − KL(q(Y) ‖ p(Y)) − KL(q(Z) ‖ p(Z))`.
pub fn compute_elbo(
    problem: &InferenceProblem<'_>,
    r: &AssignmentMatrix,
    posterior: &[PosePosterior],
    beta: f64,
) -> f64 {
    elbo_terms(problem, r, posterior, beta).total()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub expected_log_likelihood: f64,
    pub kl_pose: f64,
    pub kl_assignment: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.expected_log_likelihood - self.kl_pose - self.kl_assignment
    }
}

pub fn elbo_terms(
    problem: &InferenceProblem<'_>,
    r: &AssignmentMatrix,
    posterior: &[PosePosterior],
    beta: f64,
) -> ElboTerms {
    let ell = problem.expected_log_likelihoods(posterior, beta);
    let mut expected = 0.0;
    for (idx, l) in ell.iter().enumerate() {
        let w = r.as_slice()[idx];
        if w > 0.0 && *l > f64::NEG_INFINITY {
            expected += w * l;
        }
    }
    let mut kl_pose = 0.0;
    for (k, q) in posterior.iter().enumerate() {
        let prec0 = &problem.prior_prec[k];
        let diff = &q.mean - &problem.prior_mean[k];
        let d = prec0.len() as f64;
        let trace: f64 = (0..prec0.len()).map(|i| prec0[i] * q.covariance[(i, i)]).sum();
        let maha: f64 = diff.iter().zip(prec0.iter()).map(|(x, p)| x * x * p).sum();
        let logdet_prior_cov: f64 = -prec0.iter().map(|p| p.ln()).sum::<f64>();
        kl_pose += 0.5 * (trace - d + maha + logdet_prior_cov + q.logdet_precision);
    }
    let mut kl_assignment = 0.0;
    for &w in r.as_slice() {
        if w > 0.0 {
            kl_assignment += w * (w.ln() - problem.log_a);
        }
    }
    ElboTerms {
        expected_log_likelihood: expected,
        kl_pose,
        kl_assignment,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub beta: f64,
    pub elbo: f64,
}

/// Output of [`run_inference`]: the best restart plus its decoded partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub variant: Variant,
    pub responsibilities: AssignmentMatrix,
    pub posteriors: Vec<PosePosterior>,
    pub elbo: f64,
    pub trace: Vec<TracePoint>,
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    pub sparsity_violated: bool,
    pub decoded: DecodedSolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedSolution {
    /// Row → slot after the absent-object reassignment.
    pub assignment: Vec<usize>,
    pub partition: Partition,
    pub present: Vec<bool>,
    pub poses: Vec<Pose>,
    /// Template parts of each present object mapped through its mean pose.
    pub reconstructions: Vec<Option<Vec<[f64; 2]>>>,
}

struct RunOutcome {
    r: AssignmentMatrix,
    posterior: Vec<PosePosterior>,
    elbo: f64,
    trace: Vec<TracePoint>,
    iterations: usize,
    converged: bool,
}

fn elbo_converged(prev: f64, cur: f64, config: &ModelConfig) -> bool {
    let delta = (cur - prev).abs();
    delta < config.elbo_abs_tol || delta < config.elbo_rel_tol * prev.abs()
}

/// One annealed run from a given initial `q(Z)`.
fn anneal(
    problem: &InferenceProblem<'_>,
    mut r: AssignmentMatrix,
    variant: Variant,
) -> Result<RunOutcome> {
    let config = &problem.config;
    let mut beta = config.beta_init;
    let mut prev: Option<f64> = None;
    let mut trace = Vec::new();
    let mut posterior = problem.prior_posterior();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        posterior = update_pose_posterior(problem, &r, beta)?;
        r = update_responsibilities(problem, &posterior, beta, variant)?;
        let elbo = compute_elbo(problem, &r, &posterior, beta);
        trace.push(TracePoint { beta, elbo });
        match prev {
            Some(p) if elbo_converged(p, elbo, config) => {
                if beta >= config.beta_max {
                    converged = true;
                    break;
                }
                beta = (beta * config.beta_multiplier).min(config.beta_max);
                prev = None;
            }
            _ => prev = Some(elbo),
        }
    }
    let elbo = trace.last().map_or(f64::NEG_INFINITY, |t| t.elbo);
    Ok(RunOutcome {
        r,
        posterior,
        elbo,
        trace,
        iterations,
        converged,
    })
}

/// Some object claims a point with `r > 0.9` while explaining fewer than two
/// observed points in total.
pub fn violates_sparsity(problem: &InferenceProblem<'_>, r: &AssignmentMatrix) -> bool {
    (0..problem.n_objects()).any(|k| {
        let range = problem.slot_range(k);
        let mut mass = 0.0;
        let mut peak = 0.0f64;
        for mi in 0..problem.m {
            for j in range.clone() {
                let v = r.get(mi, j);
                mass += v;
                peak = peak.max(v);
            }
        }
        peak > 0.9 && mass < 2.0
    })
}

/// RNG for attempt `attempt` of restart `restart`.
pub fn restart_rng(seed: u64, restart: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((restart as u64) << 32) | attempt as u64);
    rng
}

/// Full inference: `restarts` annealed runs, each re-initialized up to
/// `sparsity_retries` times while it violates the two-point constraint. The
/// run with the highest final ELBO among those satisfying the constraint is
/// kept (falling back to the best violating run when none does).
pub fn run_inference(
    scene: &Scene,
    templates: &TemplateSet,
    config: &ModelConfig,
    variant: Variant,
) -> Result<InferenceResult> {
    let problem = InferenceProblem::new(scene, templates, config)?;
    run_problem(&problem, variant)
}

pub fn run_problem(problem: &InferenceProblem<'_>, variant: Variant) -> Result<InferenceResult> {
    let config = &problem.config;
    let mut best: Option<(bool, usize, RunOutcome)> = None;
    for restart in 0..config.restarts {
        for attempt in 0..=config.sparsity_retries {
            let mut rng = restart_rng(config.seed, restart, attempt);
            let r0 = problem.random_responsibilities(variant, &mut rng)?;
            let run = anneal(problem, r0, variant)?;
            let violated = violates_sparsity(problem, &run.r);
            let better = match &best {
                None => true,
                Some((bv, _, b)) => (!violated && *bv) || (violated == *bv && run.elbo > b.elbo),
            };
            if better {
                best = Some((violated, restart, run));
            }
            if !violated {
                break;
            }
        }
    }
    let (sparsity_violated, restart, run) = best.expect("at least one restart");
    let decoded = decode_solution(problem, &run.r, &run.posterior, variant);
    Ok(InferenceResult {
        variant,
        responsibilities: run.r,
        posteriors: run.posterior,
        elbo: run.elbo,
        trace: run.trace,
        restart,
        iterations: run.iterations,
        converged: run.converged,
        sparsity_violated,
        decoded,
    })
}

/// Hard partition from soft assignments.
///
/// The doubly stochastic variant decodes an optimal permutation; the mixture
/// variant takes each point's most responsible slot. Objects explaining fewer
/// than two observed points are absent, and their points move to the best
/// slot of a present object. Dummy rows always land in the missing block.
pub fn decode_solution(
    problem: &InferenceProblem<'_>,
    r: &AssignmentMatrix,
    posterior: &[PosePosterior],
    variant: Variant,
) -> DecodedSolution {
    let n = problem.n;
    let m = problem.m;
    let mut assignment: Vec<usize> = match variant {
        Variant::Ds => sinkhorn::decode_permutation(r),
        Variant::Gmm => (0..n)
            .map(|i| {
                if i >= m {
                    return 0;
                }
                let row = r.row(i);
                (0..n).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect(),
    };
    let n_obj = problem.n_objects();
    let mut counts = vec![0usize; n_obj];
    for &j in &assignment[..m] {
        counts[problem.object_of_slot(j)] += 1;
    }
    let present: Vec<bool> = counts.iter().map(|&c| c >= 2).collect();
    if present.iter().any(|&p| p) {
        for mi in 0..m {
            if present[problem.object_of_slot(assignment[mi])] {
                continue;
            }
            let row = r.row(mi);
            let best = (0..n)
                .filter(|&j| present[problem.object_of_slot(j)] && problem.is_compatible(mi, j))
                .fold(None, |acc: Option<usize>, j| match acc {
                    Some(b) if row[b] >= row[j] => Some(b),
                    _ => Some(j),
                });
            if let Some(j) = best {
                assignment[mi] = j;
            }
        }
    }
    let mut labels = vec![0; n];
    for mi in 0..m {
        labels[mi] = problem.object_of_slot(assignment[mi]) + 1;
    }
    let poses: Vec<Pose> = posterior.iter().map(PosePosterior::pose).collect();
    let reconstructions = (0..n_obj)
        .map(|k| present[k].then(|| transform_template(&problem.templates[k], &poses[k])))
        .collect();
    DecodedSolution {
        assignment,
        partition: Partition::new(labels),
        present,
        poses,
        reconstructions,
    }
}
