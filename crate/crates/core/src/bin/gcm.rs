use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gcm::bench::{aggregate, bench, evaluate, run_scenes, BenchConfig, Method, MethodConfig};
use gcm::error::{GcmError, Result};
use gcm::io::{read_json, write_json, Dataset, ResultsFile};
use gcm::learning::{generate_learning_scenes, learn_template, template_error, LearningConfig};
use gcm::metrics::{paired_t_test, SceneMetrics};
use gcm::model::{Template, TemplateSet};
use gcm::render::render_svg;
use gcm::scene_gen::{self, generate_dataset, GeneratorConfig};

#[derive(Parser)]
#[command(name = "gcm", version, about = "Generative capsule model inference, learning and benchmarks")]
struct Cli {
    /// Default seed for every subcommand.
    #[arg(long, env = "GCM_SEED", default_value_t = scene_gen::DEFAULT_SEED, global = true)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a constellation dataset.
    Gen(GenArgs),
    /// Run one inference method over every scene of a dataset.
    Infer(InferArgs),
    /// Learn a template from single-object scenes.
    Learn(LearnArgs),
    /// Score results against ground truth, or compare two result files.
    Eval(EvalArgs),
    /// Full benchmark: every method at every noise level.
    Bench(BenchArgs),
    /// Draw one scene (and optionally its inferred explanation) as SVG.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Class {
    /// Two squares and a triangle.
    Standard,
    Triangle,
    Square,
}

impl Class {
    fn templates(self) -> TemplateSet {
        match self {
            Class::Standard => scene_gen::standard_constellation_set(),
            Class::Triangle => TemplateSet::new(vec![scene_gen::triangle_template("triangle")]),
            Class::Square => TemplateSet::new(vec![scene_gen::square_template("square")]),
        }
    }

    fn single(self) -> Option<Template> {
        match self {
            Class::Standard => None,
            _ => self.templates().0.pop(),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 512)]
    draws: usize,
    #[arg(long, value_enum, default_value_t = Class::Standard)]
    class: Class,
    /// Object presence probability (single-template classes always use 1).
    #[arg(long, default_value_t = 0.5)]
    presence: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct InferenceOptions {
    #[arg(long, default_value = "0.05")]
    beta_init: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// RANSAC match gate.
    #[arg(long, default_value_t = 0.1)]
    tol: f64,
    /// Exit with status 2 if any run failed to converge.
    #[arg(long)]
    strict: bool,
}

impl InferenceOptions {
    fn config(&self, seed: u64) -> MethodConfig {
        let mut c = MethodConfig::default();
        c.model.beta_init = self.beta_init;
        c.model.restarts = self.restarts;
        c.model.seed = seed;
        c.ransac.tol = self.tol;
        c
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    method: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    options: InferenceOptions,
}

#[derive(Args)]
struct LearnArgs {
    /// Training scenes; generated from --class/--sigma/--count when omitted.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Class::Triangle)]
    class: Class,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration CSV trace.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "compare")]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Paired t-tests between two result files over the same scenes.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with = "pred")]
    compare: Option<Vec<PathBuf>>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated subset of gcm-ds, gcm-gmm, ransac.
    #[arg(long, default_value = "gcm-ds,gcm-gmm,ransac")]
    methods: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.25")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 512)]
    draws: usize,
    /// CSV report path; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fill the seconds column with wall time (makes the CSV non-reproducible).
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    options: InferenceOptions,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn strict_exit(strict: bool, unconverged: usize) -> ExitCode {
    if unconverged > 0 {
        log::warn!("{unconverged} run(s) did not converge");
        if strict {
            return ExitCode::from(2);
        }
    }
    ExitCode::SUCCESS
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => {
            let templates = a.class.templates();
            let presence = if templates.len() == 1 { 1.0 } else { a.presence };
            let config = GeneratorConfig {
                templates: templates.clone(),
                presence,
                sigma: a.sigma,
                draws: a.draws,
                seed,
                normalize: true,
            };
            let data = Dataset {
                sigma: Some(a.sigma),
                seed: Some(seed),
                templates,
                scenes: generate_dataset(&config)?,
            };
            write_json(&a.out, &data)?;
            eprintln!("{} scenes from {} draws", data.scenes.len(), a.draws);
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer(a) => {
            let method: Method = a.method.parse()?;
            let data: Dataset = read_json(&a.scenes)?;
            let config = a.options.config(seed);
            let results = run_scenes(method, &data.scenes, &data.templates, &config)?;
            let unconverged = results.iter().filter(|r| !r.converged).count();
            write_json(&a.out, &ResultsFile { method, config, results })?;
            Ok(strict_exit(a.options.strict, unconverged))
        }
        Command::Learn(a) => {
            let truth = a.class.single();
            let scenes = match &a.scenes {
                Some(path) => read_json::<Dataset>(path)?.scenes,
                None => {
                    let t = truth.as_ref().ok_or_else(|| {
                        GcmError::InvalidConfig("--class triangle or square is needed to generate scenes".into())
                    })?;
                    generate_learning_scenes(t, a.sigma, a.count, seed)?
                }
            };
            let config = LearningConfig {
                seed,
                ..LearningConfig::default()
            };
            let out = learn_template(&scenes, &config)?;
            write_json(&a.out, &out.template)?;
            let error = match &truth {
                Some(t) => Some(template_error(&out.template.points(), &t.points())?),
                None => None,
            };
            if let Some(path) = &a.report {
                let mut csv = String::from("iteration,beta,lambda,change,elbo\n");
                for s in &out.trace {
                    csv.push_str(&format!("{},{},{},{},{}\n", s.iteration, s.beta, s.lambda, s.change, s.elbo));
                }
                if let Some(e) = error {
                    csv.push_str(&format!("# smse_vs_ground_truth,{e}\n"));
                }
                fs::write(path, csv)?;
            }
            match error {
                Some(e) => println!("{} iterations, SMSE vs ground truth {e:e}", out.trace.len()),
                None => println!("{} iterations", out.trace.len()),
            }
            Ok(strict_exit(a.strict, usize::from(!out.converged)))
        }
        Command::Eval(a) => {
            let truth: Dataset = read_json(&a.truth)?;
            let n_slots = truth.templates.n_slots();
            if let Some(pair) = &a.compare {
                let ra: ResultsFile = read_json(&pair[0])?;
                let rb: ResultsFile = read_json(&pair[1])?;
                let ma = evaluate(&truth.scenes, &ra.results, n_slots)?;
                let mb = evaluate(&truth.scenes, &rb.results, n_slots)?;
                let mut csv = String::from("metric,mean_diff,t,df,p_value\n");
                for (k, name) in SceneMetrics::NAMES.iter().enumerate() {
                    let xa: Vec<f64> = ma.iter().map(|m| m.values()[k]).collect();
                    let xb: Vec<f64> = mb.iter().map(|m| m.values()[k]).collect();
                    let t = paired_t_test(&xa, &xb)?;
                    csv.push_str(&format!("{name},{},{},{},{}\n", t.mean_diff, t.t, t.df, t.p_value));
                    println!(
                        "{name:<9} {} − {}: Δ = {:+.4}, t = {:.3}, p = {:.3e}",
                        ra.method, rb.method, t.mean_diff, t.t, t.p_value
                    );
                }
                if let Some(out) = &a.out {
                    fs::write(out, csv)?;
                }
                return Ok(ExitCode::SUCCESS);
            }
            let pred: ResultsFile = read_json(a.pred.as_ref().expect("clap enforces --pred"))?;
            let per_scene = evaluate(&truth.scenes, &pred.results, n_slots)?;
            let summary = aggregate(&per_scene);
            let mut csv = String::from("scene,metric,mean,std,count\n");
            for (i, m) in per_scene.iter().enumerate() {
                for (name, v) in SceneMetrics::NAMES.iter().zip(m.values()) {
                    csv.push_str(&format!("{i},{name},{v},,1\n"));
                }
            }
            for (name, s) in SceneMetrics::NAMES.iter().zip(&summary) {
                csv.push_str(&format!("all,{name},{},{},{}\n", s.mean, s.std, s.n));
                println!("{name:<9} {:.4} ± {:.4} (n = {})", s.mean, s.std, s.n);
            }
            if let Some(out) = &a.out {
                fs::write(out, csv)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench(a) => {
            let mut config = BenchConfig::standard(seed);
            config.methods = parse_methods(&a.methods)?;
            config.sigmas = a.sigmas.clone();
            config.draws = a.draws;
            config.method = a.options.config(seed);
            let report = bench(&config)?;
            print!("{}", report.to_table());
            for c in report.ordering_checks().iter().filter(|c| !c.holds) {
                println!(
                    "ordering violated: {} vs {} at σ = {} on {} ({:.4} vs {:.4})",
                    c.better, c.worse, c.sigma, c.metric, c.better_value, c.worse_value
                );
            }
            if let Some(out) = &a.out {
                fs::write(out, report.to_csv(a.timing))?;
            }
            Ok(strict_exit(a.options.strict, report.unconverged()))
        }
        Command::Render(a) => {
            let data: Dataset = read_json(&a.scenes)?;
            let scene = data.scenes.get(a.index).ok_or_else(|| {
                GcmError::InvalidConfig(format!("scene index {} out of range ({} scenes)", a.index, data.scenes.len()))
            })?;
            let results: Option<ResultsFile> = a.results.as_ref().map(read_json).transpose()?;
            let result = match &results {
                Some(r) => Some(r.results.get(a.index).ok_or_else(|| {
                    GcmError::InvalidConfig(format!("no result for scene {}", a.index))
                })?),
                None => None,
            };
            let names: Vec<String> = data.templates.iter().map(|t| t.id.clone()).collect();
            fs::write(&a.out, render_svg(scene, result, &names))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
