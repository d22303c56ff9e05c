//! Variational EM for a single point-only template from scenes that each hold
//! one complete noisy instance of it.
//!
//! After every M-step the template is centred with `Σ_n |p_n|² = N`. With that
//! constraint `Σ_n F_nᵀ F_n = N I₄`, so the pose posterior precision is the
//! scalar matrix `(α + βλN) I₄` and the M-step reduces to an `ŝ²`-weighted
//! average of back-projected scene points.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::model::{Pose, Scene, Template};
use crate::scene_gen::{generate_dataset, GeneratorConfig};
use crate::sinkhorn::log_sum_exp;
use crate::vi::PosePosterior;

/// Largest template size for which permutations are enumerated.
pub const MAX_ENUMERATION: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    pub beta_init: f64,
    pub beta_multiplier: f64,
    pub beta_max: f64,
    /// Stop once the SMSE between consecutive templates falls below this.
    pub tol: f64,
    pub max_iterations: usize,
    /// Prior pose precision `Λ₀ = α I₄`.
    pub alpha: f64,
    pub lambda: f64,
    pub reestimate_lambda: bool,
    pub lambda_max: f64,
    pub seed: u64,
    /// Only accept the stopping test once β has reached `beta_max`.
    pub anneal_fully: bool,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            beta_init: 0.01,
            beta_multiplier: 2.0,
            beta_max: 1.0,
            tol: 1e-4,
            max_iterations: 100,
            alpha: 1.0,
            lambda: 1e4,
            reestimate_lambda: false,
            lambda_max: 1e8,
            seed: 0,
            anneal_fully: false,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_init > 0.0
            && self.beta_init <= self.beta_max
            && self.beta_multiplier >= 1.0
            && self.tol > 0.0
            && self.alpha > 0.0
            && self.lambda > 0.0
            && self.lambda_max >= self.lambda
            && self.max_iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(GcmError::InvalidConfig(format!("invalid learning configuration {self:?}")))
        }
    }
}

/// Centres the parts and rescales them so that `Σ_n |p_n|² = N`.
pub fn normalize_template(parts: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let n = parts.len() as f64;
    if parts.is_empty() {
        return Err(GcmError::Empty("template has no parts".into()));
    }
    let cx = parts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = parts.iter().map(|p| p[1]).sum::<f64>() / n;
    let centred: Vec<[f64; 2]> = parts.iter().map(|p| [p[0] - cx, p[1] - cy]).collect();
    let ss: f64 = centred.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    if !(ss > 1e-24) {
        return Err(GcmError::CoincidentParts);
    }
    let k = (n / ss).sqrt();
    Ok(centred.iter().map(|p| [p[0] * k, p[1] * k]).collect())
}

fn feature(p: [f64; 2]) -> nalgebra::Matrix2x4<f64> {
    nalgebra::Matrix2x4::new(1.0, 0.0, p[0], p[1], 0.0, 1.0, p[1], -p[0])
}

fn ftf(p: [f64; 2]) -> Matrix4<f64> {
    let f = feature(p);
    f.transpose() * f
}

fn ftx(p: [f64; 2], x: [f64; 2]) -> Vector4<f64> {
    feature(p).transpose() * nalgebra::Vector2::new(x[0], x[1])
}

/// All injective maps `{0..m} → {0..n}` in lexicographic order.
pub fn injective_maps(m: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(m: usize, n: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(m, n, cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    if m <= n {
        rec(m, n, &mut Vec::with_capacity(m), &mut vec![false; n], &mut out);
    }
    out
}

fn log_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// Distribution over the injective maps from observed points to template
/// parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationPosterior {
    pub maps: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    /// Marginals `r[m][n] = q(point m ↦ part n)`.
    pub r: Vec<Vec<f64>>,
    /// Log normalizer: the exact log evidence for the integrated posterior.
    pub log_norm: f64,
}

impl PermutationPosterior {
    fn from_log_weights(maps: Vec<Vec<usize>>, logw: Vec<f64>, n: usize) -> Self {
        let log_norm = log_sum_exp(&logw);
        let probs: Vec<f64> = logw.iter().map(|l| (l - log_norm).exp()).collect();
        let m = maps.first().map_or(0, Vec::len);
        let mut r = vec![vec![0.0; n]; m];
        for (map, p) in maps.iter().zip(&probs) {
            for (mi, &j) in map.iter().enumerate() {
                r[mi][j] += p;
            }
        }
        PermutationPosterior {
            maps,
            probs,
            r,
            log_norm,
        }
    }

    /// Most probable map (earliest on ties).
    pub fn map_estimate(&self) -> &[usize] {
        let best = (0..self.probs.len()).fold(0, |b, i| if self.probs[i] > self.probs[b] { i } else { b });
        &self.maps[best]
    }

    /// Hard responsibilities of the most probable map.
    pub fn hard_r(&self, n: usize) -> Vec<Vec<f64>> {
        let map = self.map_estimate();
        let mut r = vec![vec![0.0; n]; map.len()];
        for (mi, &j) in map.iter().enumerate() {
            r[mi][j] = 1.0;
        }
        r
    }

    fn kl_from_uniform(&self, m: usize, n: usize) -> f64 {
        let log_prior = log_factorial(n - m) - log_factorial(n);
        self.probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * (p.ln() - log_prior))
            .sum()
    }
}

fn check_sizes(m: usize, n: usize) -> Result<()> {
    if n > MAX_ENUMERATION {
        return Err(GcmError::TooManyParts {
            n,
            limit: MAX_ENUMERATION,
        });
    }
    if m > n {
        return Err(GcmError::TooManyPoints { points: m, slots: n });
    }
    if m == 0 {
        return Err(GcmError::EmptyObservation);
    }
    Ok(())
}

/// Exact posterior over maps with the pose integrated out: under map σ the
/// stacked points are `N(0, α⁻¹ F_σ F_σᵀ + (βλ)⁻¹ I)`; maps are a priori
/// uniform. `log_norm` is the exact log evidence `log p(X)`.
pub fn exact_permutation_posterior(
    points: &[[f64; 2]],
    template: &[[f64; 2]],
    beta: f64,
    lambda: f64,
    alpha: f64,
) -> Result<PermutationPosterior> {
    let (m, n) = (points.len(), template.len());
    check_sizes(m, n)?;
    let prec = beta * lambda;
    let d = 2.0 * m as f64;
    let xx: f64 = points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let log_prior = log_factorial(n - m) - log_factorial(n);
    let maps = injective_maps(m, n);
    let logw = maps
        .iter()
        .map(|map| {
            // C = σ²I + α⁻¹FFᵀ with σ² = 1/prec; Woodbury and the determinant lemma
            // reduce everything to P = αI + prec·FᵀF.
            let mut p = Matrix4::identity() * alpha;
            let mut fx = Vector4::zeros();
            for (mi, &j) in map.iter().enumerate() {
                p += ftf(template[j]) * prec;
                fx += ftx(template[j], points[mi]);
            }
            let chol = p.cholesky().expect("P is positive definite");
            let logdet_p = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let quad = prec * xx - prec * prec * fx.dot(&chol.solve(&fx));
            let logdet_c = -d * prec.ln() + logdet_p - 4.0 * alpha.ln();
            log_prior - 0.5 * (d * (2.0 * PI).ln() + logdet_c + quad)
        })
        .collect();
    Ok(PermutationPosterior::from_log_weights(maps, logw, n))
}

/// `E_q(y)[log N(x_m | F_n y, (βλ)⁻¹ I₂)]` for every (m, n).
fn expected_log_likelihoods(
    points: &[[f64; 2]],
    template: &[[f64; 2]],
    q: &PosePosterior,
    beta: f64,
    lambda: f64,
) -> Vec<Vec<f64>> {
    let prec = beta * lambda;
    let mu = Pose::from_slice(q.mean.as_slice());
    let cov = Matrix4::from_fn(|i, j| q.covariance()[(i, j)]);
    let traces: Vec<f64> = template.iter().map(|p| ftf(*p).component_mul(&cov).sum()).collect();
    points
        .iter()
        .map(|x| {
            template
                .iter()
                .zip(&traces)
                .map(|(p, tr)| {
                    let pred = mu.apply(*p);
                    let d2 = (x[0] - pred[0]).powi(2) + (x[1] - pred[1]).powi(2);
                    -(2.0 * PI / prec).ln() - 0.5 * prec * (d2 + tr)
                })
                .collect()
        })
        .collect()
}

/// Optimal structured `q(Z)` over maps for a fixed `q(y)`.
pub fn mean_field_permutation_posterior(
    points: &[[f64; 2]],
    template: &[[f64; 2]],
    q: &PosePosterior,
    beta: f64,
    lambda: f64,
) -> Result<PermutationPosterior> {
    let (m, n) = (points.len(), template.len());
    check_sizes(m, n)?;
    let ell = expected_log_likelihoods(points, template, q, beta, lambda);
    let log_prior = log_factorial(n - m) - log_factorial(n);
    let maps = injective_maps(m, n);
    let logw = maps
        .iter()
        .map(|map| log_prior + map.iter().enumerate().map(|(mi, &j)| ell[mi][j]).sum::<f64>())
        .collect();
    Ok(PermutationPosterior::from_log_weights(maps, logw, n))
}

/// Closed-form `q(y)` given responsibilities `r[m][n]`.
pub fn e_step_pose(
    points: &[[f64; 2]],
    template: &[[f64; 2]],
    r: &[Vec<f64>],
    beta: f64,
    lambda: f64,
    alpha: f64,
) -> PosePosterior {
    let prec = beta * lambda;
    let mut lam = Matrix4::identity() * alpha;
    let mut rhs = Vector4::zeros();
    for (mi, row) in r.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w != 0.0 {
                lam += ftf(template[j]) * (prec * w);
                rhs += ftx(template[j], points[mi]) * (prec * w);
            }
        }
    }
    let mean = lam.cholesky().expect("Λ is positive definite").solve(&rhs);
    PosePosterior::from_precision(
        DVector::from_column_slice(mean.as_slice()),
        DMatrix::from_column_slice(4, 4, lam.as_slice()),
    )
    .expect("Λ is positive definite")
}

/// Per-scene bound `E_q[log p(X | y, Z)] − KL(q(y) ‖ p(y)) − KL(q(Z) ‖ p(Z))`
/// for a structured `q(Z)` over maps.
pub fn scene_elbo(
    points: &[[f64; 2]],
    template: &[[f64; 2]],
    qz: &PermutationPosterior,
    qy: &PosePosterior,
    beta: f64,
    lambda: f64,
    alpha: f64,
) -> f64 {
    let (m, n) = (points.len(), template.len());
    let ell = expected_log_likelihoods(points, template, qy, beta, lambda);
    let expected: f64 = qz
        .r
        .iter()
        .zip(&ell)
        .map(|(rr, ll)| rr.iter().zip(ll).map(|(a, b)| if *a > 0.0 { a * b } else { 0.0 }).sum::<f64>())
        .sum();
    let cov = qy.covariance();
    let trace: f64 = (0..4).map(|i| cov[(i, i)]).sum();
    let kl_y = 0.5 * (alpha * trace - 4.0 + alpha * qy.mean.norm_squared() - 4.0 * alpha.ln() + qy.logdet_precision());
    expected - kl_y - qz.kl_from_uniform(m, n)
}

/// One weighted learning example: points, responsibilities and pose
/// posterior. The exact E-step emits one per map, weighted by its posterior
/// probability.
pub struct EStepOutput<'a> {
    pub points: &'a [[f64; 2]],
    pub r: &'a [Vec<f64>],
    pub pose: &'a PosePosterior,
    pub weight: f64,
}

/// One mixture component of the exact joint posterior `q(Z, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorComponent {
    pub weight: f64,
    pub r: Vec<Vec<f64>>,
    pub pose: PosePosterior,
}

/// Components below this posterior probability are dropped.
pub const COMPONENT_CUTOFF: f64 = 1e-15;

/// Exact E-step: `q(Z, y) = Σ_σ q(σ) δ(Z = σ) q(y | σ)`, with `q(σ)` from
/// [`exact_permutation_posterior`] and `q(y | σ)` from [`e_step_pose`] under
/// the hard responsibilities of σ. Also returns the exact log evidence.
pub fn exact_e_step(
    points: &[[f64; 2]],
    template: &[[f64; 2]],
    beta: f64,
    lambda: f64,
    alpha: f64,
) -> Result<(Vec<PosteriorComponent>, f64)> {
    let n = template.len();
    let post = exact_permutation_posterior(points, template, beta, lambda, alpha)?;
    let components = post
        .maps
        .iter()
        .zip(&post.probs)
        .filter(|(_, w)| **w >= COMPONENT_CUTOFF)
        .map(|(map, &weight)| {
            let mut r = vec![vec![0.0; n]; map.len()];
            for (mi, &j) in map.iter().enumerate() {
                r[mi][j] = 1.0;
            }
            let pose = e_step_pose(points, template, &r, beta, lambda, alpha);
            PosteriorComponent { weight, r, pose }
        })
        .collect();
    Ok((components, post.log_norm))
}

/// `p_n = Σ_i w_i T̂_iᵀ Σ_m r_mn (x_m − t̂_i) / Σ_i w_i ŝ_i²`, then normalized.
pub fn m_step_update(n_parts: usize, batch: &[EStepOutput<'_>]) -> Result<Vec<[f64; 2]>> {
    let raw = m_step_raw(n_parts, batch)?;
    normalize_template(&raw)
}

fn m_step_raw(n_parts: usize, batch: &[EStepOutput<'_>]) -> Result<Vec<[f64; 2]>> {
    let mut num = vec![[0.0; 2]; n_parts];
    let mut den = 0.0;
    for ex in batch {
        let y = ex.pose.pose();
        den += ex.weight * (y.sc * y.sc + y.ss * y.ss);
        for (mi, row) in ex.r.iter().enumerate() {
            let xt = [ex.points[mi][0] - y.tx, ex.points[mi][1] - y.ty];
            // T̂ᵀ x̃ with T̂ = [[c, s], [−s, c]]
            let back = [y.sc * xt[0] - y.ss * xt[1], y.ss * xt[0] + y.sc * xt[1]];
            for (j, &w) in row.iter().enumerate() {
                num[j][0] += ex.weight * w * back[0];
                num[j][1] += ex.weight * w * back[1];
            }
        }
    }
    if !(den > 1e-300) {
        return Err(GcmError::DegenerateScale);
    }
    Ok(num.iter().map(|p| [p[0] / den, p[1] / den]).collect())
}

/// `1/λ = (1 / 2NS) Σ_i w_i Σ_{m,n} r_mn |x_m − F_n μ_i|²` with `S = Σ_i w_i`,
/// capped at `lambda_max`.
pub fn reestimate_lambda(template: &[[f64; 2]], batch: &[EStepOutput<'_>], lambda_max: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(GcmError::Empty("no scenes to re-estimate λ from".into()));
    }
    let (mut total, mut scenes) = (0.0, 0.0);
    for ex in batch {
        let y = ex.pose.pose();
        scenes += ex.weight;
        for (mi, row) in ex.r.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                let pred = y.apply(template[j]);
                total += ex.weight * w * ((ex.points[mi][0] - pred[0]).powi(2) + (ex.points[mi][1] - pred[1]).powi(2));
            }
        }
    }
    let var = total / (2.0 * template.len() as f64 * scenes);
    Ok(if var <= 1.0 / lambda_max { lambda_max } else { 1.0 / var })
}

/// Rotates `learned` about the origin to best fit `truth` (proper rotations only).
pub fn procrustes_align(learned: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    if learned.len() != truth.len() {
        return Err(GcmError::DimensionMismatch(format!(
            "templates have {} and {} parts",
            learned.len(),
            truth.len()
        )));
    }
    let (mut a, mut b) = (0.0, 0.0);
    for (p, g) in learned.iter().zip(truth) {
        a += p[0] * g[0] + p[1] * g[1];
        b += p[0] * g[1] - p[1] * g[0];
    }
    let phi = b.atan2(a);
    let (s, c) = phi.sin_cos();
    Ok(learned.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect())
}

/// `(1/N) Σ_n |a_n − b_n|²`.
pub fn smse(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(GcmError::DimensionMismatch(format!(
            "templates have {} and {} parts",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sum::<f64>() / a.len() as f64)
}

/// SMSE of a learned template against ground truth: both normalized, the
/// learned one rotated by Procrustes, minimized over part orderings (the
/// learned part order is arbitrary).
pub fn template_error(learned: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    let truth = normalize_template(truth)?;
    let learned = normalize_template(learned)?;
    if learned.len() > MAX_ENUMERATION {
        return Err(GcmError::TooManyParts {
            n: learned.len(),
            limit: MAX_ENUMERATION,
        });
    }
    let mut best = f64::INFINITY;
    for perm in injective_maps(learned.len(), learned.len()) {
        let reordered: Vec<[f64; 2]> = perm.iter().map(|&i| learned[i]).collect();
        let aligned = procrustes_align(&reordered, &truth)?;
        best = best.min(smse(&aligned, &truth)?);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningStep {
    pub iteration: usize,
    pub beta: f64,
    pub lambda: f64,
    /// SMSE between this and the previous template (same part order).
    pub change: f64,
    pub elbo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningResult {
    pub template: Template,
    pub trace: Vec<LearningStep>,
    pub converged: bool,
    pub seed_scene: usize,
}

/// `count` scenes, each one complete noisy instance of `template`.
pub fn generate_learning_scenes(template: &Template, sigma: f64, count: usize, seed: u64) -> Result<Vec<Scene>> {
    let config = GeneratorConfig {
        templates: crate::model::TemplateSet::new(vec![template.clone()]),
        presence: 1.0,
        sigma,
        draws: count,
        seed,
        normalize: true,
    };
    generate_dataset(&config)
}

/// Learns a template from `scenes`, seeded with one of them.
pub fn learn_template(scenes: &[Scene], config: &LearningConfig) -> Result<LearningResult> {
    config.validate()?;
    let data: Vec<Vec<[f64; 2]>> = scenes.iter().map(Scene::xy_points).collect();
    let Some(first) = data.first() else {
        return Err(GcmError::Empty("no training scenes".into()));
    };
    let n = first.len();
    if data.iter().any(|d| d.len() != n) {
        return Err(GcmError::DimensionMismatch("training scenes differ in part count".into()));
    }
    check_sizes(n, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seed_scene = rng.random_range(0..data.len());
    let mut template = normalize_template(&data[seed_scene])?;
    let mut beta = config.beta_init;
    let mut lambda = config.lambda;
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 0..config.max_iterations {
        let mut components = Vec::with_capacity(data.len());
        let mut elbo = 0.0;
        for pts in &data {
            let (comps, log_evidence) = exact_e_step(pts, &template, beta, lambda, config.alpha)?;
            elbo += log_evidence;
            components.push(comps);
        }
        let batch: Vec<EStepOutput<'_>> = data
            .iter()
            .zip(&components)
            .flat_map(|(points, comps)| {
                comps.iter().map(move |c| EStepOutput {
                    points,
                    r: &c.r,
                    pose: &c.pose,
                    weight: c.weight,
                })
            })
            .collect();
        let updated = m_step_update(n, &batch)?;
        if config.reestimate_lambda {
            lambda = reestimate_lambda(&updated, &batch, config.lambda_max)?;
        }
        let change = smse(&updated, &template)?;
        log::debug!("learning iteration {iteration}: β = {beta}, change = {change:e}");
        trace.push(LearningStep {
            iteration,
            beta,
            lambda,
            change,
            elbo,
        });
        // on convergence the template that passed the test is kept
        if change < config.tol && (!config.anneal_fully || beta >= config.beta_max) {
            converged = true;
            break;
        }
        template = updated;
        beta = (beta * config.beta_multiplier).min(config.beta_max);
    }
    let id = scenes[0]
        .templates_used
        .first()
        .map_or_else(|| "learned".to_string(), |k| format!("learned-{k}"));
    Ok(LearningResult {
        template: Template::from_points(id, &template)?,
        trace,
        converged,
        seed_scene,
    })
}
