//! Templates, poses and scenes, plus the geometric and Gaussian kernels shared
//! by the variational and RANSAC engines.
//!
//! A pose is stored in the linear parameterization `(t_x, t_y, s cos θ, s sin θ)`
//! so that the predicted location of a part is a linear function of the pose:
//! `x_n = F_n · y` with `F_n` built by [`build_feature_matrix`]. Rotations are
//! clockwise for positive θ.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::metrics::Partition;

/// Similarity transform `(t_x, t_y, s cos θ, s sin θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    pub sc: f64,
    pub ss: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        tx: 0.0,
        ty: 0.0,
        sc: 1.0,
        ss: 0.0,
    };

    pub fn new(tx: f64, ty: f64, sc: f64, ss: f64) -> Self {
        Pose { tx, ty, sc, ss }
    }

    /// Builds a pose from translation, scale and clockwise angle.
    pub fn from_params(tx: f64, ty: f64, scale: f64, angle: f64) -> Self {
        Pose {
            tx,
            ty,
            sc: scale * angle.cos(),
            ss: scale * angle.sin(),
        }
    }

    /// `(t_x, t_y, s, θ)`.
    pub fn params(&self) -> (f64, f64, f64, f64) {
        (self.tx, self.ty, self.scale(), self.angle())
    }

    pub fn scale(&self) -> f64 {
        self.sc.hypot(self.ss)
    }

    pub fn angle(&self) -> f64 {
        self.ss.atan2(self.sc)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.sc, self.ss]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Pose::new(v[0], v[1], v[2], v[3])
    }

    /// Maps a template-frame point into the scene.
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.tx + self.sc * p[0] + self.ss * p[1],
            self.ty - self.ss * p[0] + self.sc * p[1],
        ]
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &Pose) -> Pose {
        let [tx, ty] = self.apply([0.0, 0.0]);
        let lin = |p: [f64; 2]| [p[0] - tx, p[1] - ty];
        let [itx, ity] = lin(self.apply([inner.tx, inner.ty]));
        Pose {
            tx: tx + itx,
            ty: ty + ity,
            sc: self.sc * inner.sc - self.ss * inner.ss,
            ss: self.sc * inner.ss + self.ss * inner.sc,
        }
    }

    /// Inverse similarity; `None` for a zero-scale pose.
    pub fn inverse(&self) -> Option<Pose> {
        let s2 = self.sc * self.sc + self.ss * self.ss;
        if s2 == 0.0 {
            return None;
        }
        let (ic, is) = (self.sc / s2, -self.ss / s2);
        let lin = Pose::new(0.0, 0.0, ic, is);
        let [tx, ty] = lin.apply([self.tx, self.ty]);
        Some(Pose::new(-tx, -ty, ic, is))
    }

    /// Largest absolute difference between the four parameters.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Geometry of one template part in its reference frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartGeometry {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<f64>,
}

impl PartGeometry {
    pub fn point(x: f64, y: f64) -> Self {
        PartGeometry {
            x,
            y,
            size: None,
            orientation: None,
        }
    }

    pub fn oriented(x: f64, y: f64, size: f64, orientation: f64) -> Self {
        PartGeometry {
            x,
            y,
            size: Some(size),
            orientation: Some(orientation),
        }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// `(s_n cos φ_n, s_n sin φ_n)` when size and orientation are present.
    pub fn projection(&self) -> Option<(f64, f64)> {
        match (self.size, self.orientation) {
            (Some(s), Some(phi)) => Some((s * phi.cos(), s * phi.sin())),
            _ => None,
        }
    }
}

/// Factor-analysis appearance model of one part: `x^a = F^a y^a + m^a + N(0, diag(D^a))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AppearanceRecord", into = "AppearanceRecord")]
pub struct AppearanceBlock {
    loadings: DMatrix<f64>,
    mean: DVector<f64>,
    variances: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct AppearanceRecord {
    loadings: Vec<Vec<f64>>,
    mean: Vec<f64>,
    variances: Vec<f64>,
}

impl TryFrom<AppearanceRecord> for AppearanceBlock {
    type Error = GcmError;

    fn try_from(r: AppearanceRecord) -> Result<Self> {
        let rows = r.loadings.len();
        let cols = r.loadings.first().map_or(0, Vec::len);
        if r.loadings.iter().any(|row| row.len() != cols) {
            return Err(GcmError::DimensionMismatch("ragged loading matrix".into()));
        }
        let loadings = DMatrix::from_fn(rows, cols, |i, j| r.loadings[i][j]);
        AppearanceBlock::new(loadings, DVector::from_vec(r.mean), DVector::from_vec(r.variances))
    }
}

impl From<AppearanceBlock> for AppearanceRecord {
    fn from(b: AppearanceBlock) -> Self {
        AppearanceRecord {
            loadings: b
                .loadings
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
            mean: b.mean.iter().copied().collect(),
            variances: b.variances.iter().copied().collect(),
        }
    }
}

impl AppearanceBlock {
    pub fn new(loadings: DMatrix<f64>, mean: DVector<f64>, variances: DVector<f64>) -> Result<Self> {
        let d = loadings.nrows();
        if d == 0 {
            return Err(GcmError::DimensionMismatch(
                "appearance block needs at least one feature".into(),
            ));
        }
        if mean.len() != d || variances.len() != d {
            return Err(GcmError::DimensionMismatch(format!(
                "loadings have {d} rows, mean {} and variances {}",
                mean.len(),
                variances.len()
            )));
        }
        if let Some(&v) = variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(GcmError::InvalidVariance(v));
        }
        Ok(AppearanceBlock {
            loadings,
            mean,
            variances,
        })
    }

    /// Feature dimension `d_kn`.
    pub fn dim(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn variances(&self) -> &DVector<f64> {
        &self.variances
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part {
    #[serde(flatten)]
    pub geometry: PartGeometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<AppearanceBlock>,
}

impl Part {
    pub fn point(x: f64, y: f64) -> Self {
        Part {
            geometry: PartGeometry::point(x, y),
            appearance: None,
        }
    }

    /// Length of the appearance vector this part emits (0 without appearance).
    pub fn appearance_dim(&self) -> usize {
        self.appearance.as_ref().map_or(0, AppearanceBlock::dim)
    }
}

/// An object model: a rigid constellation of parts with an optional shared
/// appearance latent of dimension `latent_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateRecord")]
pub struct Template {
    pub id: String,
    parts: Vec<Part>,
    latent_dim: usize,
}

#[derive(Deserialize)]
struct TemplateRecord {
    id: String,
    parts: Vec<Part>,
    #[serde(default)]
    latent_dim: usize,
}

impl TryFrom<TemplateRecord> for Template {
    type Error = GcmError;

    fn try_from(r: TemplateRecord) -> Result<Self> {
        Template::new(r.id, r.parts, r.latent_dim)
    }
}

impl Template {
    pub fn new(id: impl Into<String>, parts: Vec<Part>, latent_dim: usize) -> Result<Self> {
        let id = id.into();
        if parts.len() < 2 {
            return Err(GcmError::InvalidTemplate(format!(
                "template `{id}` has {} part(s); at least 2 are required",
                parts.len()
            )));
        }
        let with_appearance = parts.iter().filter(|p| p.appearance.is_some()).count();
        if with_appearance != 0 && with_appearance != parts.len() {
            return Err(GcmError::InvalidTemplate(format!(
                "template `{id}`: either all parts or none carry an appearance block"
            )));
        }
        if with_appearance == 0 && latent_dim != 0 {
            return Err(GcmError::InvalidTemplate(format!(
                "template `{id}` has latent_dim {latent_dim} but no appearance blocks"
            )));
        }
        for (n, part) in parts.iter().enumerate() {
            let g = &part.geometry;
            if !g.x.is_finite() || !g.y.is_finite() {
                return Err(GcmError::InvalidTemplate(format!("part {n} is not finite")));
            }
            match (g.size, g.orientation) {
                (None, None) => {}
                (Some(s), Some(phi)) if s > 0.0 && s.is_finite() && phi.is_finite() => {}
                _ => {
                    return Err(GcmError::InvalidTemplate(format!(
                        "part {n}: size must be positive and come with an orientation"
                    )))
                }
            }
            if let Some(block) = &part.appearance {
                if block.latent_dim() != latent_dim {
                    return Err(GcmError::DimensionMismatch(format!(
                        "part {n} loadings have {} columns, template latent_dim is {latent_dim}",
                        block.latent_dim()
                    )));
                }
            }
        }
        Ok(Template {
            id,
            parts,
            latent_dim,
        })
    }

    /// Point-only template from raw coordinates.
    pub fn from_points(id: impl Into<String>, points: &[[f64; 2]]) -> Result<Self> {
        Template::new(id, points.iter().map(|p| Part::point(p[0], p[1])).collect(), 0)
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Appearance latent dimension `d_y`.
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Pose plus appearance latent dimension.
    pub fn total_latent_dim(&self) -> usize {
        4 + self.latent_dim
    }

    pub fn has_appearance(&self) -> bool {
        self.parts[0].appearance.is_some()
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.parts.iter().map(|p| p.geometry.xy()).collect()
    }
}

/// The set of templates available to explain a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateSet(pub Vec<Template>);

impl TemplateSet {
    pub fn new(templates: Vec<Template>) -> Self {
        TemplateSet(templates)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Template> {
        self.0.iter()
    }

    pub fn get(&self, k: usize) -> Option<&Template> {
        self.0.get(k)
    }

    /// Total number of template parts `N = Σ_k N_k`.
    pub fn n_slots(&self) -> usize {
        self.0.iter().map(Template::len).sum()
    }

    /// `(k, n)` label of every slot, in column order.
    pub fn slots(&self) -> Vec<(usize, usize)> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(k, t)| (0..t.len()).map(move |n| (k, n)))
            .collect()
    }
}

impl std::ops::Index<usize> for TemplateSet {
    type Output = Template;

    fn index(&self, k: usize) -> &Template {
        &self.0[k]
    }
}

/// Which geometric features a part exposes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Location only (2 features).
    #[default]
    PointOnly,
    /// Location plus projected size/orientation (4 features).
    Full,
}

impl FeatureMode {
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::PointOnly => 2,
            FeatureMode::Full => 4,
        }
    }
}

/// Feature matrix mapping a pose `(t_x, t_y, s cos θ, s sin θ)` to the predicted
/// geometric features of `part`.
pub fn build_feature_matrix(part: &PartGeometry, mode: FeatureMode) -> Result<DMatrix<f64>> {
    let (px, py) = (part.x, part.y);
    match mode {
        FeatureMode::PointOnly => Ok(DMatrix::from_row_slice(
            2,
            4,
            &[1.0, 0.0, px, py, 0.0, 1.0, py, -px],
        )),
        FeatureMode::Full => {
            let (c, s) = part.projection().ok_or(GcmError::MissingField { part: 0 })?;
            Ok(DMatrix::from_row_slice(
                4,
                4,
                &[
                    1.0, 0.0, px, py, //
                    0.0, 1.0, py, -px, //
                    0.0, 0.0, c, -s, //
                    0.0, 0.0, s, c,
                ],
            ))
        }
    }
}

/// Feature matrix of a part over the stacked pose + appearance latent. The
/// geometric rows ignore the appearance latent and vice versa.
pub fn build_part_features(part: &Part, mode: FeatureMode, latent_dim: usize) -> Result<DMatrix<f64>> {
    let geo = build_feature_matrix(&part.geometry, mode)?;
    let dg = geo.nrows();
    let da = part.appearance_dim();
    let mut f = DMatrix::zeros(dg + da, 4 + latent_dim);
    f.view_mut((0, 0), (dg, 4)).copy_from(&geo);
    if let Some(block) = &part.appearance {
        f.view_mut((dg, 4), (da, latent_dim)).copy_from(block.loadings());
    }
    Ok(f)
}

/// Predicted scene locations of every part of `template` under `pose`.
pub fn transform_template(template: &Template, pose: &Pose) -> Vec<[f64; 2]> {
    template.parts().iter().map(|p| pose.apply(p.geometry.xy())).collect()
}

fn mode_error(part: usize, e: GcmError) -> GcmError {
    match e {
        GcmError::MissingField { .. } => GcmError::MissingField { part },
        other => other,
    }
}

/// Gaussian log density of an observation `x` (geometric features followed by
/// appearance features) under `N(F y + m, β⁻¹ D)`, where `y` stacks the pose
/// and appearance latent, `D` is `λ⁻¹ I` on the geometric rows and `D^a` on
/// the appearance rows.
pub fn part_log_likelihood(
    x: &[f64],
    part: &Part,
    mode: FeatureMode,
    latent: &[f64],
    beta: f64,
    lambda: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(GcmError::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    if !(lambda > 0.0) {
        return Err(GcmError::InvalidVariance(lambda));
    }
    let latent_dim = latent.len().checked_sub(4).ok_or_else(|| {
        GcmError::DimensionMismatch(format!("latent has {} entries, need at least 4", latent.len()))
    })?;
    let f = build_part_features(part, mode, latent_dim).map_err(|e| mode_error(0, e))?;
    if f.nrows() != x.len() {
        return Err(GcmError::DimensionMismatch(format!(
            "observation has {} features, part predicts {}",
            x.len(),
            f.nrows()
        )));
    }
    let pred = &f * DVector::from_column_slice(latent);
    let dg = mode.dim();
    let mut log_density = -0.5 * x.len() as f64 * (2.0 * PI).ln();
    for i in 0..x.len() {
        let (mean, var) = if i < dg {
            (0.0, 1.0 / lambda)
        } else {
            let block = part.appearance.as_ref().expect("appearance rows imply a block");
            (block.mean()[i - dg], block.variances()[i - dg])
        };
        let resid = x[i] - pred[i] - mean;
        log_density -= 0.5 * (var / beta).ln() + 0.5 * beta * resid * resid / var;
    }
    Ok(log_density)
}

/// Hyperparameters shared by the variational engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Geometric observation precision λ.
    pub lambda: f64,
    /// Prior pose mean μ₀.
    pub prior_mean: [f64; 4],
    /// Diagonal of the prior pose covariance D₀.
    pub prior_variance: [f64; 4],
    pub beta_init: f64,
    pub beta_max: f64,
    pub beta_multiplier: f64,
    /// Uniform match prior `a_mnk`; `None` means `1/N`.
    pub match_prior: Option<f64>,
    pub restarts: usize,
    /// Fresh initializations allowed per restart when the two-part sparsity
    /// constraint is violated.
    pub sparsity_retries: usize,
    pub elbo_rel_tol: f64,
    pub elbo_abs_tol: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Total update budget across all annealing phases.
    pub max_iterations: usize,
    pub mode: FeatureMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lambda: 1e4,
            prior_mean: [0.0; 4],
            prior_variance: [1.0; 4],
            beta_init: 0.05,
            beta_max: 1.0,
            beta_multiplier: 2.0,
            match_prior: None,
            restarts: 5,
            sparsity_retries: 3,
            elbo_rel_tol: 1e-6,
            elbo_abs_tol: 1e-8,
            sinkhorn_tol: 1e-8,
            sinkhorn_max_iter: 1000,
            max_iterations: 2000,
            mode: FeatureMode::PointOnly,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GcmError::InvalidConfig(msg));
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.prior_variance.iter().any(|v| !(*v > 0.0)) {
            return bad("prior variances must be positive".into());
        }
        if !(self.beta_init > 0.0 && self.beta_init <= self.beta_max) {
            return bad(format!(
                "need 0 < beta_init <= beta_max (got {} and {})",
                self.beta_init, self.beta_max
            ));
        }
        if !(self.beta_multiplier > 1.0) {
            return bad("beta_multiplier must exceed 1".into());
        }
        if let Some(a) = self.match_prior {
            if !(a > 0.0 && a <= 1.0) {
                return bad(format!("match prior must lie in (0, 1], got {a}"));
            }
        }
        if self.restarts == 0 {
            return bad("at least one restart is required".into());
        }
        if !(self.sinkhorn_tol > 0.0) || self.sinkhorn_max_iter == 0 || self.max_iterations == 0 {
            return bad("tolerances and iteration limits must be positive".into());
        }
        Ok(())
    }

    pub fn match_prior_for(&self, n_slots: usize) -> f64 {
        self.match_prior.unwrap_or(1.0 / n_slots as f64)
    }
}

/// An observed scene together with optional ground truth.
///
/// `labels[m]` is the template index that generated point `m`; `poses[i]` is
/// the generating pose of template `templates_used[i]`; `slots` is the total
/// slot count `N` of the template set the scene was drawn from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub appearance: Vec<Option<Vec<f64>>>,
    #[serde(default)]
    pub labels: Vec<Option<usize>>,
    #[serde(default)]
    pub templates_used: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub poses: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<usize>,
}

impl Scene {
    pub fn from_points(points: &[[f64; 2]]) -> Self {
        Scene {
            points: points.iter().map(|p| p.to_vec()).collect(),
            ..Scene::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xy(&self, m: usize) -> [f64; 2] {
        [self.points[m][0], self.points[m][1]]
    }

    pub fn xy_points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|m| self.xy(m)).collect()
    }

    pub fn appearance_of(&self, m: usize) -> Option<&[f64]> {
        self.appearance.get(m).and_then(|a| a.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        for (m, p) in self.points.iter().enumerate() {
            if p.len() != 2 && p.len() != 4 {
                return Err(GcmError::DimensionMismatch(format!(
                    "point {m} has {} geometric features (expected 2 or 4)",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(GcmError::DimensionMismatch(format!("point {m} is not finite")));
            }
        }
        if !self.appearance.is_empty() && self.appearance.len() != self.len() {
            return Err(GcmError::DimensionMismatch(
                "appearance list length differs from point count".into(),
            ));
        }
        if !self.labels.is_empty() && self.labels.len() != self.len() {
            return Err(GcmError::DimensionMismatch(
                "label list length differs from point count".into(),
            ));
        }
        Ok(())
    }

    /// Every location coordinate lies in `[-1, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.points
            .iter()
            .all(|p| p[0].abs() <= 1.0 + 1e-12 && p[1].abs() <= 1.0 + 1e-12)
    }

    /// Ground-truth partition over `n_slots` elements: observed points carry
    /// `label + 1`, the `n_slots - M` unobserved slots form block 0.
    pub fn ground_truth(&self, n_slots: usize) -> Option<Partition> {
        if self.labels.len() != self.len() || self.len() > n_slots {
            return None;
        }
        let mut labels = Vec::with_capacity(n_slots);
        for l in &self.labels {
            labels.push((*l)? + 1);
        }
        labels.resize(n_slots, 0);
        Some(Partition::new(labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pred(part: [f64; 2], pose: Pose) -> [f64; 2] {
        let f = build_feature_matrix(&PartGeometry::point(part[0], part[1]), FeatureMode::PointOnly)
            .unwrap();
        let y = DVector::from_row_slice(&pose.to_array());
        let x = f * y;
        [x[0], x[1]]
    }

    #[test]
    fn feature_matrix_rows() {
        let f = build_feature_matrix(&PartGeometry::point(1.0, 0.0), FeatureMode::PointOnly).unwrap();
        assert_eq!(f, DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0]));
        let f0 = build_feature_matrix(&PartGeometry::point(0.0, 0.0), FeatureMode::PointOnly).unwrap();
        assert_eq!(f0, DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert_eq!(pred([1.0, 1.0], Pose::new(0.0, 0.0, 2.0, 0.0)), [2.0, 2.0]);
    }

    #[test]
    fn full_mode_needs_size() {
        let err = build_feature_matrix(&PartGeometry::point(1.0, 2.0), FeatureMode::Full);
        assert!(matches!(err, Err(GcmError::MissingField { .. })));
        let g = PartGeometry::oriented(1.0, 2.0, 0.5, 0.3);
        let f = build_feature_matrix(&g, FeatureMode::Full).unwrap();
        let pose = Pose::from_params(0.1, 0.2, 2.0, 0.4);
        let x = &f * DVector::from_row_slice(&pose.to_array());
        // projected pair rotates by θ (clockwise convention) and scales by s
        assert_abs_diff_eq!(x[2], 0.5 * 2.0 * (0.3f64 + 0.4).cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(x[3], 0.5 * 2.0 * (0.3f64 + 0.4).sin(), epsilon = 1e-12);
        let (c, s) = g.projection().unwrap();
        assert_abs_diff_eq!(c.hypot(s), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn transform_examples() {
        let square = Template::from_points(
            "square",
            &[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
        )
        .unwrap();
        assert_eq!(
            transform_template(&square, &Pose::from_params(0.0, 0.0, 1.0, 0.0)),
            square.points()
        );
        let p = pred([1.0, 0.0], Pose::new(0.0, 0.0, 0.0, 1.0));
        assert_abs_diff_eq!(p[0], 0.0);
        assert_abs_diff_eq!(p[1], -1.0);
        assert_eq!(pred([-1.0, -1.0], Pose::new(1.0, 2.0, 2.0, 0.0)), [-1.0, 0.0]);
    }

    #[test]
    fn pose_param_round_trip() {
        for &(s, th) in &[(1.0, 0.3), (0.2, -2.9), (5.0, 3.1), (1e-3, 1.0)] {
            let p = Pose::from_params(0.5, -0.25, s, th);
            let (tx, ty, s2, th2) = p.params();
            assert_abs_diff_eq!(tx, 0.5);
            assert_abs_diff_eq!(ty, -0.25);
            assert_abs_diff_eq!(s2, s, epsilon = 1e-12);
            assert_abs_diff_eq!(th2, th, epsilon = 1e-12);
            assert!(p.angle().abs() <= PI);
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = Pose::from_params(0.3, -1.0, 1.5, 0.7);
        let b = Pose::from_params(-2.0, 0.5, 0.4, -2.1);
        let ab = a.compose(&b);
        for p in [[0.0, 0.0], [1.0, -2.0], [0.3, 0.9]] {
            let direct = a.apply(b.apply(p));
            let composed = ab.apply(p);
            assert_abs_diff_eq!(direct[0], composed[0], epsilon = 1e-12);
            assert_abs_diff_eq!(direct[1], composed[1], epsilon = 1e-12);
        }
        let inv = a.inverse().unwrap();
        assert!(inv.compose(&a).max_abs_diff(&Pose::IDENTITY) < 1e-12);
    }

    #[test]
    fn point_mode_linear_in_location() {
        let g = PartGeometry::point(0.7, -0.2);
        let g2 = PartGeometry::point(2.0 * 0.7, 2.0 * -0.2);
        let f = build_feature_matrix(&g, FeatureMode::PointOnly).unwrap();
        let f2 = build_feature_matrix(&g2, FeatureMode::PointOnly).unwrap();
        assert_eq!(f.columns(0, 2), f2.columns(0, 2));
        assert_eq!(f.columns(2, 2) * 2.0, f2.columns(2, 2));
    }

    #[test]
    fn log_likelihood_examples() {
        let part = Part::point(1.0, 1.0);
        let pose = [0.0, 0.0, 2.0, 0.0];
        let ll = part_log_likelihood(&[2.0, 2.0], &part, FeatureMode::PointOnly, &pose, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(ll, -(2.0 * PI).ln(), epsilon = 1e-12);
        let ll = part_log_likelihood(&[3.0, 2.0], &part, FeatureMode::PointOnly, &pose, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(ll, -(2.0 * PI).ln() - 0.5, epsilon = 1e-12);
        // β = 0.5: density of N(μ, 2 I) at unit residual, written out directly.
        let ll_half =
            part_log_likelihood(&[3.0, 2.0], &part, FeatureMode::PointOnly, &pose, 0.5, 1.0).unwrap();
        let direct = -(2.0 * PI).ln() - 0.5 * (2.0f64 * 2.0).ln() - 0.5 * 1.0 / 2.0;
        assert_abs_diff_eq!(ll_half, direct, epsilon = 1e-12);
        assert!(part_log_likelihood(&[3.0, 2.0], &part, FeatureMode::PointOnly, &pose, 1.0, 0.0).is_err());
    }

    #[test]
    fn template_validation() {
        assert!(Template::from_points("one", &[[0.0, 0.0]]).is_err());
        let block = AppearanceBlock::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.1]),
        )
        .unwrap();
        let mixed = vec![
            Part {
                geometry: PartGeometry::point(0.0, 0.0),
                appearance: Some(block),
            },
            Part::point(1.0, 0.0),
        ];
        assert!(Template::new("mixed", mixed, 1).is_err());
        assert!(AppearanceBlock::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.0]),
        )
        .is_err());
    }
}
