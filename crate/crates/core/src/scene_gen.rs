//! Synthetic constellation scenes and factor-analysis appearance data.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::model::{Pose, Scene, Template, TemplateSet};

/// Default dataset seed. With 512 draws it yields 452 non-empty scenes.
pub const DEFAULT_SEED: u64 = 0;

pub fn square_template(id: &str) -> Template {
    Template::from_points(id, &[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
        .expect("square is a valid template")
}

/// Isosceles triangle with base 2 and height 2; its bounding box is centred on
/// the origin.
pub fn triangle_template(id: &str) -> Template {
    Template::from_points(id, &[[-1.0, -1.0], [1.0, -1.0], [0.0, 1.0]])
        .expect("triangle is a valid template")
}

/// Two squares and one triangle, `N = 11` slots.
pub fn standard_constellation_set() -> TemplateSet {
    TemplateSet::new(vec![
        square_template("square-a"),
        square_template("square-b"),
        triangle_template("triangle"),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub templates: TemplateSet,
    pub presence: f64,
    pub sigma: f64,
    pub draws: usize,
    pub seed: u64,
    pub normalize: bool,
}

impl GeneratorConfig {
    pub fn standard(sigma: f64, seed: u64) -> Self {
        GeneratorConfig {
            templates: standard_constellation_set(),
            presence: 0.5,
            sigma,
            draws: 512,
            seed,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(GcmError::Empty("generator needs at least one template".into()));
        }
        if !(0.0..=1.0).contains(&self.presence) {
            return Err(GcmError::InvalidConfig(format!(
                "presence probability must lie in [0, 1], got {}",
                self.presence
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(GcmError::InvalidConfig(format!("sigma must be ≥ 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One draw of the protocol; `None` when no template was selected.
pub fn draw_scene<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Option<Scene> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut used = Vec::new();
    let mut poses = Vec::new();
    for (k, template) in config.templates.iter().enumerate() {
        if !rng.random_bool(config.presence) {
            continue;
        }
        let noisy: Vec<[f64; 2]> = template
            .points()
            .iter()
            .map(|p| [p[0] + config.sigma * normal(rng), p[1] + config.sigma * normal(rng)])
            .collect();
        let pose = Pose::new(normal(rng), normal(rng), normal(rng), normal(rng));
        for p in noisy {
            points.push(pose.apply(p));
            labels.push(Some(k));
        }
        used.push(k);
        poses.push(pose);
    }
    if points.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    let mut scene = Scene {
        points: order.iter().map(|&i| points[i].to_vec()).collect(),
        appearance: vec![None; order.len()],
        labels: order.iter().map(|&i| labels[i]).collect(),
        templates_used: used,
        poses,
        slots: Some(config.templates.n_slots()),
    };
    if config.normalize {
        normalize_scene(&mut scene);
    }
    Some(scene)
}

/// Draws until a non-empty scene appears.
pub fn generate_scene<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Result<Scene> {
    config.validate()?;
    if config.presence == 0.0 {
        return Err(GcmError::InvalidConfig(
            "presence probability 0 can never produce a non-empty scene".into(),
        ));
    }
    loop {
        if let Some(scene) = draw_scene(config, rng) {
            return Ok(scene);
        }
    }
}

/// RNG for draw `index` of a dataset: one ChaCha stream per draw.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `config.draws` independent draws with the empty ones deleted.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Vec<Scene>> {
    config.validate()?;
    Ok((0..config.draws as u64)
        .filter_map(|i| draw_scene(config, &mut draw_rng(config.seed, i)))
        .collect())
}

/// Centres the bounding box of the scene on the origin and divides by the
/// larger half-range, so every coordinate lands in `[-1, 1]`. Ground-truth
/// poses are mapped by the same similarity. Returns that similarity.
pub fn normalize_scene(scene: &mut Scene) -> Pose {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &scene.points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let centre = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half = ((hi[0] - lo[0]) / 2.0).max((hi[1] - lo[1]) / 2.0);
    if !(half > 0.0) || !half.is_finite() {
        return Pose::IDENTITY;
    }
    // the same arithmetic is used for points and poses so that both agree
    for p in scene.points.iter_mut() {
        p[0] = (p[0] - centre[0]) / half;
        p[1] = (p[1] - centre[1]) / half;
    }
    for pose in scene.poses.iter_mut() {
        *pose = Pose::new(
            (pose.tx - centre[0]) / half,
            (pose.ty - centre[1]) / half,
            pose.sc / half,
            pose.ss / half,
        );
    }
    Pose::new(-centre[0] / half, -centre[1] / half, 1.0 / half, 0.0)
}

/// Samples `count` objects from a template with appearance blocks: each scene
/// holds the template at its reference pose plus appearance vectors
/// `F^a y^a + m^a + ε` with `y^a ~ N(0, I)` and `ε ~ N(0, diag(D^a))`.
pub fn generate_appearance_dataset<R: Rng + ?Sized>(
    template: &Template,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Scene>> {
    if !template.has_appearance() {
        return Err(GcmError::DimensionMismatch(
            "template has no appearance blocks".into(),
        ));
    }
    let dy = template.latent_dim();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let y = DVector::from_fn(dy, |_, _| normal(rng));
        let appearance = template
            .parts()
            .iter()
            .map(|part| {
                let block = part.appearance.as_ref().expect("checked above");
                let mean = block.loadings() * &y + block.mean();
                Some(
                    mean.iter()
                        .zip(block.variances().iter())
                        .map(|(m, v)| m + v.sqrt() * normal(rng))
                        .collect(),
                )
            })
            .collect();
        out.push(Scene {
            points: template.points().iter().map(|p| p.to_vec()).collect(),
            appearance,
            labels: vec![Some(0); template.len()],
            templates_used: vec![0],
            poses: vec![Pose::IDENTITY],
            slots: Some(template.len()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AppearanceBlock, Part, PartGeometry};
    use nalgebra::DMatrix;

    #[test]
    fn standard_set_shape() {
        let set = standard_constellation_set();
        assert_eq!(set.n_slots(), 11);
        assert_eq!(set.iter().map(Template::len).collect::<Vec<_>>(), vec![4, 4, 3]);
        for t in set.iter().take(2) {
            let s = t.points().iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
            assert_eq!(s, [0.0, 0.0]);
        }
    }

    #[test]
    fn identity_pose_reproduces_template() {
        let t = square_template("sq");
        let mut scene = Scene::from_points(&t.points());
        let before = scene.clone();
        let map = normalize_scene(&mut scene);
        assert_eq!(map, Pose::new(0.0, 0.0, 1.0, 0.0));
        assert_eq!(scene, before);
    }

    #[test]
    fn default_dataset_size() {
        let scenes = generate_dataset(&GeneratorConfig::standard(0.0, DEFAULT_SEED)).unwrap();
        assert!((450..=460).contains(&scenes.len()), "{} scenes", scenes.len());
        for s in &scenes {
            let max = s.points.iter().flat_map(|p| [p[0].abs(), p[1].abs()]).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
            let truth = s.ground_truth(11).unwrap();
            assert_eq!(truth.len(), 11);
        }
    }

    #[test]
    fn ground_truth_poses_follow_normalization() {
        let cfg = GeneratorConfig::standard(0.0, 3);
        let set = &cfg.templates;
        let scene = generate_scene(&cfg, &mut draw_rng(3, 0)).unwrap();
        for (i, &k) in scene.templates_used.iter().enumerate() {
            let predicted: Vec<[f64; 2]> =
                set[k].points().iter().map(|p| scene.poses[i].apply(*p)).collect();
            for m in (0..scene.len()).filter(|&m| scene.labels[m] == Some(k)) {
                let x = scene.xy(m);
                assert!(predicted.iter().any(|q| (q[0] - x[0]).hypot(q[1] - x[1]) < 1e-9));
            }
        }
    }

    #[test]
    fn appearance_zero_loadings_and_noise() {
        let block = AppearanceBlock::new(
            DMatrix::zeros(2, 1),
            DVector::from_vec(vec![0.5, -1.0]),
            DVector::from_vec(vec![1e-300, 1e-300]),
        )
        .unwrap();
        let parts = (0..3)
            .map(|i| Part {
                geometry: PartGeometry::point(i as f64, 0.0),
                appearance: Some(block.clone()),
            })
            .collect();
        let t = Template::new("fa", parts, 1).unwrap();
        let scenes = generate_appearance_dataset(&t, 5, &mut draw_rng(1, 0)).unwrap();
        for s in scenes {
            for a in &s.appearance {
                let a = a.as_ref().unwrap();
                assert!((a[0] - 0.5).abs() < 1e-140 && (a[1] + 1.0).abs() < 1e-140);
            }
        }
    }
}
