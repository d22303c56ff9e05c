//! Hypothesize-and-verify scene explanation: a pose is solved from each
//! ordered pair of scene points against the first two parts of a template,
//! the remaining parts are predicted and matched, and the best candidates are
//! combined greedily into a partition.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::metrics::Partition;
use crate::model::{
    build_feature_matrix, transform_template, FeatureMode, Pose, Scene, Template, TemplateSet,
};

const DET_EPS: f64 = 1e-9;
const ERROR_TIE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Match gate: predicted and scene points closer than this may be paired.
    pub tol: f64,
    /// Re-infer each selected object's appearance latent from all its
    /// matched parts after assembly.
    pub refine_appearance: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            tol: 0.1,
            refine_appearance: false,
        }
    }
}

/// A verified object hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub template: usize,
    /// Scene points used as the basis for parts 0 and 1.
    pub basis: (usize, usize),
    pub pose: Pose,
    /// `(part, scene point)` pairs, sorted by part.
    pub matches: Vec<(usize, usize)>,
    /// Σ squared distance over the matched pairs.
    pub error: f64,
}

/// Stacked point-only feature matrices of parts `n1` and `n2`.
pub fn basis_matrix(template: &Template, n1: usize, n2: usize) -> Result<Matrix4<f64>> {
    let parts = template.parts();
    let f1 = build_feature_matrix(&parts[n1].geometry, FeatureMode::PointOnly)?;
    let f2 = build_feature_matrix(&parts[n2].geometry, FeatureMode::PointOnly)?;
    Ok(Matrix4::from_fn(|r, c| if r < 2 { f1[(r, c)] } else { f2[(r - 2, c)] }))
}

/// The unique similarity mapping parts `n1`, `n2` onto `xi`, `xj`.
pub fn solve_pose_from_pair(
    template: &Template,
    n1: usize,
    n2: usize,
    xi: [f64; 2],
    xj: [f64; 2],
) -> Result<Pose> {
    let b = basis_matrix(template, n1, n2)?;
    let det = b.determinant();
    if det.abs() < DET_EPS {
        return Err(GcmError::DegenerateBasis { det });
    }
    let y = b
        .lu()
        .solve(&Vector4::new(xi[0], xi[1], xj[0], xj[1]))
        .ok_or(GcmError::DegenerateBasis { det })?;
    Ok(Pose::new(y[0], y[1], y[2], y[3]))
}

/// Result of [`subset_match`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMatch {
    pub pairs: Vec<(usize, usize)>,
    pub error: f64,
}

/// Injective matching of predicted parts to scene points at distance `< tol`,
/// maximizing the number of matched parts and then minimizing the total
/// squared distance. Fewer than two matches is no match.
pub fn subset_match(predicted: &[[f64; 2]], scene: &[[f64; 2]], tol: f64) -> Option<SubsetMatch> {
    let tol2 = tol * tol;
    let options: Vec<Vec<(usize, f64)>> = predicted
        .iter()
        .map(|p| {
            scene
                .iter()
                .enumerate()
                .filter_map(|(m, x)| {
                    let d2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
                    (d2 < tol2).then_some((m, d2))
                })
                .collect()
        })
        .collect();

    struct Search<'a> {
        options: &'a [Vec<(usize, f64)>],
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Option<(Vec<(usize, usize)>, f64)>,
    }

    impl Search<'_> {
        fn better(&self, count: usize, error: f64) -> bool {
            match &self.best {
                None => true,
                Some((pairs, e)) => count > pairs.len() || (count == pairs.len() && error < *e),
            }
        }

        fn run(&mut self, part: usize, error: f64) {
            if part == self.options.len() {
                if self.better(self.current.len(), error) {
                    self.best = Some((self.current.clone(), error));
                }
                return;
            }
            // even matching every remaining part cannot beat the incumbent
            let reachable = self.current.len() + (part..self.options.len()).filter(|&p| !self.options[p].is_empty()).count();
            if let Some((pairs, e)) = &self.best {
                if reachable < pairs.len() || (reachable == pairs.len() && error >= *e) {
                    return;
                }
            }
            for &(m, d2) in &self.options[part] {
                if self.used[m] {
                    continue;
                }
                self.used[m] = true;
                self.current.push((part, m));
                self.run(part + 1, error + d2);
                self.current.pop();
                self.used[m] = false;
            }
            self.run(part + 1, error);
        }
    }

    let mut search = Search {
        options: &options,
        used: vec![false; scene.len()],
        current: Vec::new(),
        best: None,
    };
    search.run(0, 0.0);
    search
        .best
        .filter(|(pairs, _)| pairs.len() >= 2)
        .map(|(pairs, error)| SubsetMatch { pairs, error })
}

/// Every candidate that survives verification, in (i, j, template) order.
pub fn ransac_scene(scene: &Scene, templates: &TemplateSet, config: &RansacConfig) -> Result<Vec<Candidate>> {
    if !(config.tol > 0.0) {
        return Err(GcmError::InvalidConfig(format!("tolerance must be positive, got {}", config.tol)));
    }
    scene.validate()?;
    if !scene.is_normalized() {
        log::warn!("scene is not normalized to [-1, 1]; the match tolerance {} is in scene units", config.tol);
    }
    let points = scene.xy_points();
    let m = points.len();
    // degenerate bases are skipped per template
    let bases: Vec<Option<Matrix4<f64>>> = templates
        .iter()
        .map(|t| {
            let b = basis_matrix(t, 0, 1).ok()?;
            (b.determinant().abs() >= DET_EPS).then_some(b)
        })
        .collect();
    let lus: Vec<_> = bases.iter().map(|b| b.map(|b| b.lu())).collect();
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let rhs = Vector4::new(points[i][0], points[i][1], points[j][0], points[j][1]);
            for (k, t) in templates.iter().enumerate() {
                let Some(lu) = &lus[k] else { continue };
                let Some(y) = lu.solve(&rhs) else { continue };
                let pose = Pose::new(y[0], y[1], y[2], y[3]);
                let predicted = transform_template(t, &pose);
                if let Some(found) = subset_match(&predicted, &points, config.tol) {
                    out.push(Candidate {
                        template: k,
                        basis: (i, j),
                        pose,
                        matches: found.pairs,
                        error: found.error,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Greedy assembly of a scene explanation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub selected: Vec<Candidate>,
    /// Universe of `n_slots` elements: observed points first, then the
    /// unobserved slots; unexplained points and unobserved slots are block 0,
    /// points of the object built from template `k` carry label `k + 1`.
    pub partition: Partition,
    pub unexplained: Vec<usize>,
}

/// Repeatedly accepts the candidate with the most matched points (ties: lower
/// fit error, then earlier position) whose points are all unclaimed and whose
/// template has not been used yet.
pub fn combine_explanations(candidates: &[Candidate], n_points: usize, n_slots: usize) -> Explanation {
    let mut claimed = vec![false; n_points];
    let mut template_used = Vec::<usize>::new();
    let mut alive: Vec<bool> = vec![true; candidates.len()];
    let mut selected = Vec::new();
    loop {
        let valid = |c: &Candidate| {
            !template_used.contains(&c.template) && c.matches.iter().all(|&(_, m)| !claimed[m])
        };
        let mut best_count = 0;
        let mut best_error = f64::INFINITY;
        for (idx, c) in candidates.iter().enumerate() {
            if !alive[idx] {
                continue;
            }
            if !valid(c) {
                alive[idx] = false;
                continue;
            }
            let count = c.matches.len();
            if count > best_count || (count == best_count && c.error < best_error) {
                best_count = count;
                best_error = c.error;
            }
        }
        if best_count == 0 {
            break;
        }
        let pick = (0..candidates.len())
            .find(|&idx| {
                alive[idx]
                    && candidates[idx].matches.len() == best_count
                    && candidates[idx].error <= best_error + ERROR_TIE
            })
            .expect("best candidate exists");
        let c = &candidates[pick];
        c.matches.iter().for_each(|&(_, m)| claimed[m] = true);
        template_used.push(c.template);
        selected.push(c.clone());
    }
    let mut labels = vec![0; n_slots.max(n_points)];
    for c in &selected {
        for &(_, m) in &c.matches {
            labels[m] = c.template + 1;
        }
    }
    Explanation {
        selected,
        partition: Partition::new(labels),
        unexplained: (0..n_points).filter(|&m| !claimed[m]).collect(),
    }
}

/// Gaussian posterior over an appearance latent plus completed appearances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearancePosterior {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// `F^a_n E[y^a] + m^a_n` for every part.
    pub completed: Vec<Vec<f64>>,
}

/// Conditions the factor-analysis model of `template` on the appearance
/// vectors of a subset of its parts, given as `(part, features)`.
pub fn infer_appearance_from_subset(
    template: &Template,
    observed: &[(usize, Vec<f64>)],
) -> Result<AppearancePosterior> {
    if observed.is_empty() {
        return Err(GcmError::EmptyObservation);
    }
    if !template.has_appearance() {
        return Err(GcmError::DimensionMismatch("template has no appearance blocks".into()));
    }
    let dy = template.latent_dim();
    let mut prec = DMatrix::<f64>::identity(dy, dy);
    let mut rhs = DVector::<f64>::zeros(dy);
    for (n, x) in observed {
        let part = template.parts().get(*n).ok_or_else(|| {
            GcmError::DimensionMismatch(format!("template has no part {n}"))
        })?;
        let block = part.appearance.as_ref().expect("checked above");
        if x.len() != block.dim() {
            return Err(GcmError::DimensionMismatch(format!(
                "part {n} expects {} appearance features, got {}",
                block.dim(),
                x.len()
            )));
        }
        let f = block.loadings();
        let mut ft_dinv = f.transpose();
        for (c, v) in block.variances().iter().enumerate() {
            ft_dinv.column_mut(c).scale_mut(1.0 / v);
        }
        prec += &ft_dinv * f;
        rhs += &ft_dinv * (DVector::from_column_slice(x) - block.mean());
    }
    let chol = nalgebra::Cholesky::new(prec)
        .ok_or_else(|| GcmError::DimensionMismatch("posterior precision is singular".into()))?;
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    let completed = template
        .parts()
        .iter()
        .map(|p| {
            let b = p.appearance.as_ref().expect("checked above");
            (b.loadings() * &mean + b.mean()).iter().copied().collect()
        })
        .collect();
    Ok(AppearancePosterior {
        mean: mean.iter().copied().collect(),
        covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        completed,
    })
}

/// Full pipeline output for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacResult {
    pub n_candidates: usize,
    pub explanation: Explanation,
    /// Pose of each template in the explanation, `None` when unused.
    pub poses: Vec<Option<Pose>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub appearance: Vec<Option<AppearancePosterior>>,
}

pub fn run_ransac(scene: &Scene, templates: &TemplateSet, config: &RansacConfig) -> Result<RansacResult> {
    let n_slots = templates.n_slots();
    if scene.len() > n_slots {
        return Err(GcmError::TooManyPoints {
            points: scene.len(),
            slots: n_slots,
        });
    }
    let candidates = ransac_scene(scene, templates, config)?;
    let explanation = combine_explanations(&candidates, scene.len(), n_slots);
    let mut poses = vec![None; templates.len()];
    for c in &explanation.selected {
        poses[c.template] = Some(c.pose);
    }
    let mut appearance = Vec::new();
    if config.refine_appearance {
        appearance = vec![None; templates.len()];
        for c in &explanation.selected {
            let t = &templates[c.template];
            if !t.has_appearance() {
                continue;
            }
            let observed: Vec<(usize, Vec<f64>)> = c
                .matches
                .iter()
                .filter_map(|&(n, m)| scene.appearance_of(m).map(|a| (n, a.to_vec())))
                .collect();
            if !observed.is_empty() {
                appearance[c.template] = Some(infer_appearance_from_subset(t, &observed)?);
            }
        }
    }
    Ok(RansacResult {
        n_candidates: candidates.len(),
        explanation,
        poses,
        appearance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_gen::{square_template, standard_constellation_set, triangle_template};

    #[test]
    fn pair_solve_examples() {
        let sq = square_template("sq");
        let pose = solve_pose_from_pair(&sq, 0, 1, [-1.0, 0.0], [3.0, 0.0]).unwrap();
        assert!(pose.max_abs_diff(&Pose::new(1.0, 2.0, 2.0, 0.0)) < 1e-12);
        let dup = Template::from_points("dup", &[[0.5, 0.5], [0.5, 0.5], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            solve_pose_from_pair(&dup, 0, 1, [0.0, 0.0], [1.0, 1.0]),
            Err(GcmError::DegenerateBasis { .. })
        ));
    }

    #[test]
    fn subset_match_examples() {
        let pred = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let exact = subset_match(&pred, &pred, 0.1).unwrap();
        assert_eq!(exact.pairs.len(), 3);
        assert_eq!(exact.error, 0.0);
        assert!(subset_match(&pred, &[[5.0, 5.0], [6.0, 6.0]], 0.1).is_none());
        // both scene points 1 and 2 lie within tol of predicted part 1
        let scene = [[0.0, 0.0], [1.05, 0.0], [1.02, 0.0]];
        let m = subset_match(&pred[..2], &scene, 0.1).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 2)]);
        assert!((m.error - 0.02f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn square_has_many_exact_candidates() {
        let set = TemplateSet::new(vec![square_template("sq")]);
        let scene = Scene::from_points(&square_template("sq").points());
        let cands = ransac_scene(&scene, &set, &RansacConfig::default()).unwrap();
        // Each of the 4 edges, traversed in the direction that keeps the square
        // on the template's side, reproduces it; the reverse traversal would
        // need a reflection.
        let exact = cands.iter().filter(|c| c.matches.len() == 4 && c.error < 1e-9).count();
        assert_eq!(exact, 4);
    }

    #[test]
    fn combine_prefers_larger_match() {
        let c4 = Candidate {
            template: 0,
            basis: (0, 1),
            pose: Pose::IDENTITY,
            matches: vec![(0, 0), (1, 1), (2, 2), (3, 3)],
            error: 0.0,
        };
        let c3 = Candidate {
            template: 1,
            basis: (3, 4),
            pose: Pose::IDENTITY,
            matches: vec![(0, 3), (1, 4), (2, 5)],
            error: 0.0,
        };
        let ex = combine_explanations(&[c3.clone(), c4.clone()], 6, 11);
        assert_eq!(ex.selected, vec![c4]);
        assert_eq!(ex.unexplained, vec![4, 5]);
    }

    #[test]
    fn two_objects_fully_explained() {
        let set = standard_constellation_set();
        let a = Pose::from_params(-0.5, 0.0, 0.3, 0.4);
        let b = Pose::from_params(0.5, 0.2, 0.25, -1.0);
        let mut pts = transform_template(&set[0], &a);
        pts.extend(transform_template(&triangle_template("t"), &b));
        let scene = Scene {
            labels: vec![Some(0), Some(0), Some(0), Some(0), Some(2), Some(2), Some(2)],
            ..Scene::from_points(&pts)
        };
        let res = run_ransac(&scene, &set, &RansacConfig::default()).unwrap();
        let truth = scene.ground_truth(11).unwrap();
        assert!(crate::metrics::scene_accuracy(&truth, &res.explanation.partition).unwrap());
    }
}
