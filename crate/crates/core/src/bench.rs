//! Constellation benchmark: dataset per noise level, every method on every
//! scene, the four partition metrics aggregated per cell.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::metrics::{summarize, Partition, SceneMetrics, Summary};
use crate::model::{ModelConfig, Pose, Scene, TemplateSet};
use crate::ransac::{run_ransac, RansacConfig};
use crate::scene_gen::{generate_dataset, GeneratorConfig};
use crate::vi::{run_inference, InferenceResult, Variant};

pub const SIGMAS: [f64; 3] = [0.0, 0.1, 0.25];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gcm-ds")]
    GcmDs,
    #[serde(rename = "gcm-gmm")]
    GcmGmm,
    #[serde(rename = "ransac")]
    Ransac,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::GcmDs, Method::GcmGmm, Method::Ransac];

    pub fn name(self) -> &'static str {
        match self {
            Method::GcmDs => "gcm-ds",
            Method::GcmGmm => "gcm-gmm",
            Method::Ransac => "ransac",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GcmError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GcmError::UnknownMethod(s.to_string()))
    }
}

/// Method-independent outcome for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub partition: Partition,
    /// Pose per template, `None` for absent objects.
    pub poses: Vec<Option<Pose>>,
    /// Template outlines mapped through the inferred poses.
    pub reconstructions: Vec<Option<Vec<[f64; 2]>>>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbo: Option<f64>,
    /// Full variational output (responsibilities, posteriors, ELBO trace).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<Box<InferenceResult>>,
}

/// Inference settings shared by every scene of a run. Scene `i` runs with
/// seed `model.seed + i`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub model: ModelConfig,
    pub ransac: RansacConfig,
}

pub fn run_method(
    method: Method,
    scene: &Scene,
    templates: &TemplateSet,
    config: &MethodConfig,
) -> Result<SceneResult> {
    match method {
        Method::GcmDs | Method::GcmGmm => {
            let variant = if method == Method::GcmDs { Variant::Ds } else { Variant::Gmm };
            let out = run_inference(scene, templates, &config.model, variant)?;
            let d = &out.decoded;
            Ok(SceneResult {
                partition: d.partition.clone(),
                poses: d.poses.iter().zip(&d.present).map(|(p, &on)| on.then_some(*p)).collect(),
                reconstructions: d.reconstructions.clone(),
                converged: out.converged,
                elbo: Some(out.elbo),
                inference: Some(Box::new(out)),
            })
        }
        Method::Ransac => {
            if !scene.is_normalized() {
                log::warn!("scene is not normalized to [-1, 1]; the RANSAC gate assumes it is");
            }
            let out = run_ransac(scene, templates, &config.ransac)?;
            let reconstructions = out
                .poses
                .iter()
                .zip(templates.iter())
                .map(|(p, t)| p.map(|p| crate::model::transform_template(t, &p)))
                .collect();
            Ok(SceneResult {
                partition: out.explanation.partition,
                poses: out.poses,
                reconstructions,
                converged: true,
                elbo: None,
                inference: None,
            })
        }
    }
}

/// Runs `method` on every scene, in parallel, results in scene order.
pub fn run_scenes(
    method: Method,
    scenes: &[Scene],
    templates: &TemplateSet,
    config: &MethodConfig,
) -> Result<Vec<SceneResult>> {
    scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut local = config.clone();
            local.model.seed = config.model.seed.wrapping_add(i as u64);
            run_method(method, scene, templates, &local)
        })
        .collect()
}

/// Per-scene metrics against the generator's ground truth.
pub fn evaluate(scenes: &[Scene], results: &[SceneResult], n_slots: usize) -> Result<Vec<SceneMetrics>> {
    if scenes.len() != results.len() {
        return Err(GcmError::DimensionMismatch(format!(
            "{} scenes but {} results",
            scenes.len(),
            results.len()
        )));
    }
    scenes
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (scene, res))| {
            let truth = scene
                .ground_truth(n_slots)
                .ok_or_else(|| GcmError::DimensionMismatch(format!("scene {i} has no ground-truth labels")))?;
            SceneMetrics::compute(&truth, &res.partition)
        })
        .collect()
}

/// Mean ± std per metric, in [`SceneMetrics::NAMES`] order.
pub fn aggregate(metrics: &[SceneMetrics]) -> [Summary; 4] {
    std::array::from_fn(|k| summarize(&metrics.iter().map(|m| m.values()[k]).collect::<Vec<_>>()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub sigmas: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
    pub method: MethodConfig,
}

impl BenchConfig {
    pub fn standard(seed: u64) -> Self {
        let mut method = MethodConfig::default();
        method.model.seed = seed;
        BenchConfig {
            methods: Method::ALL.to_vec(),
            sigmas: SIGMAS.to_vec(),
            draws: 512,
            seed,
            method,
        }
    }
}

/// One (method, σ) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: Method,
    pub sigma: f64,
    pub summary: [Summary; 4],
    pub per_scene: Vec<SceneMetrics>,
    pub unconverged: usize,
    pub seconds: f64,
}

impl BenchCell {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        SceneMetrics::NAMES.iter().position(|n| *n == metric).map(|k| self.summary[k].mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub cells: Vec<BenchCell>,
}

/// The default dataset for noise level `sigma`.
pub fn bench_dataset(sigma: f64, draws: usize, seed: u64) -> Result<Vec<Scene>> {
    let mut gen = GeneratorConfig::standard(sigma, seed);
    gen.draws = draws;
    generate_dataset(&gen)
}

pub fn bench(config: &BenchConfig) -> Result<BenchReport> {
    let templates = crate::scene_gen::standard_constellation_set();
    let mut cells = Vec::new();
    for &sigma in &config.sigmas {
        let scenes = bench_dataset(sigma, config.draws, config.seed)?;
        for &method in &config.methods {
            let start = Instant::now();
            let results = run_scenes(method, &scenes, &templates, &config.method)?;
            let seconds = start.elapsed().as_secs_f64();
            let per_scene = evaluate(&scenes, &results, templates.n_slots())?;
            log::info!("{method} σ = {sigma}: {} scenes in {seconds:.1} s", scenes.len());
            cells.push(BenchCell {
                method,
                sigma,
                summary: aggregate(&per_scene),
                per_scene,
                unconverged: results.iter().filter(|r| !r.converged).count(),
                seconds,
            });
        }
    }
    Ok(BenchReport {
        seed: config.seed,
        cells,
    })
}

/// One inequality of the method ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub better: Method,
    pub worse: Method,
    pub sigma: f64,
    pub metric: String,
    pub better_value: f64,
    pub worse_value: f64,
    pub holds: bool,
}

impl BenchReport {
    pub fn cell(&self, method: Method, sigma: f64) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.method == method && c.sigma == sigma)
    }

    pub fn unconverged(&self) -> usize {
        self.cells.iter().map(|c| c.unconverged).sum()
    }

    /// CSV with columns `method,sigma,metric,mean,std,n,seconds`. Wall time
    /// varies between runs, so `seconds` stays empty unless `timing` is set.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("method,sigma,metric,mean,std,n,seconds\n");
        for c in &self.cells {
            for (name, s) in SceneMetrics::NAMES.iter().zip(&c.summary) {
                let secs = if timing { format!("{:.3}", c.seconds) } else { String::new() };
                out.push_str(&format!("{},{},{},{},{},{},{}\n", c.method, c.sigma, name, s.mean, s.std, s.n, secs));
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>5} {:>16} {:>16} {:>16} {:>16} {:>5}\n",
            "method", "sigma", "SA", "ARI", "VI", "SceneAcc", "n"
        );
        for c in &self.cells {
            out.push_str(&format!("{:<8} {:>5}", c.method.name(), c.sigma));
            for s in &c.summary {
                out.push_str(&format!(" {:>16}", format!("{:.3} ± {:.3}", s.mean, s.std)));
            }
            out.push_str(&format!(" {:>5}\n", c.summary[0].n));
        }
        out
    }

    /// GCM-DS against GCM-GMM, and RANSAC against both, for every metric and
    /// σ present in the report. VI is better when lower.
    pub fn ordering_checks(&self) -> Vec<OrderingCheck> {
        let pairs = [
            (Method::GcmDs, Method::GcmGmm),
            (Method::Ransac, Method::GcmDs),
            (Method::Ransac, Method::GcmGmm),
        ];
        let mut sigmas: Vec<f64> = self.cells.iter().map(|c| c.sigma).collect();
        sigmas.dedup();
        let mut out = Vec::new();
        for sigma in sigmas {
            for (better, worse) in pairs {
                let (Some(a), Some(b)) = (self.cell(better, sigma), self.cell(worse, sigma)) else {
                    continue;
                };
                for (k, name) in SceneMetrics::NAMES.iter().enumerate() {
                    let (x, y) = (a.summary[k].mean, b.summary[k].mean);
                    let holds = if *name == "VI" { x < y } else { x > y };
                    out.push(OrderingCheck {
                        better,
                        worse,
                        sigma,
                        metric: name.to_string(),
                        better_value: x,
                        worse_value: y,
                        holds,
                    });
                }
            }
        }
        out
    }
}
