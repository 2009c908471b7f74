//! Config-driven experiment runner.
//!
//! An [`ExperimentConfig`] names a test case and a framework and may
//! override any default. [`ExperimentConfig::resolve`] fills in the
//! defaults (full scale, or desk scale on request) and
//! [`run_experiment`] executes the run, writing everything into one
//! output directory:
//!
//! - `manifest.toml`: the fully resolved config, loadable as a config again
//! - `returns.csv`, `returns.svg`: policy return per iteration
//! - `checkpoints/`: agent state after each fidelity and at the end
//! - `eval.csv`, `controls.csv`: held-out evaluation and per-well controls
//! - `de_benchmark.csv`: differential-evolution results
//! - `library/`: the sample library when it was built by this run
//!
//! A run that fails part way leaves an `INCOMPLETE` file next to
//! whatever it managed to write.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline_de::{self, BenchmarkRow, DeConfig};
use crate::environment::{trace_episode, EnvironmentConfig, EpisodeTrace, MultiGridEnv, TestCase};
use crate::error::{Error, Result};
use crate::rl_ppo::{PpoAgent, PpoConfig};
use crate::scheduler::{self, FidelitySchedule, ReturnRecord, RuntimeProfile, TrainingEvent};
use crate::uncertainty::{self, SampleLibrary};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const INCOMPLETE_FILE: &str = "INCOMPLETE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Framework {
    SingleGrid,
    FixedMultigrid,
    AdaptiveMultigrid,
    DeBenchmark,
    BuildLibrary,
    Evaluate,
}

impl Framework {
    pub fn trains(self) -> bool {
        matches!(self, Self::SingleGrid | Self::FixedMultigrid | Self::AdaptiveMultigrid)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySettings {
    pub samples: Option<usize>,
    pub clusters: Option<usize>,
    /// Existing library directory to load instead of building one.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSettings {
    pub checkpoint: Option<PathBuf>,
    pub beta: Option<f64>,
}

/// Experiment description as written by users. Everything except `case`
/// and `framework` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: TestCase,
    pub framework: Framework,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub desk_scale: bool,
    /// Fidelity of a single-grid run.
    pub beta: Option<f64>,
    /// Fine grid `[nx, ny]`; defaults to the case grid, or the desk grid.
    pub grid: Option<[usize; 2]>,
    pub schedule: Option<FidelitySchedule>,
    /// Partial overrides of the PPO defaults.
    #[serde(default)]
    pub ppo: toml::Table,
    /// Partial overrides of the DE defaults.
    #[serde(default)]
    pub de: toml::Table,
    #[serde(default)]
    pub library: LibrarySettings,
    #[serde(default)]
    pub evaluate: EvaluateSettings,
    /// Number of evaluation samples benchmarked by DE.
    pub de_samples: Option<usize>,
    /// Base-policy episodes timed per fidelity for the runtime profile.
    pub runtime_episodes: Option<usize>,
    /// Pinned runtime profile; measured and recorded when absent.
    pub runtime_profile: Option<RuntimeProfile>,
    /// Informational; written into manifests.
    pub code_version: Option<String>,
}

/// Every setting of a run with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub case: TestCase,
    pub framework: Framework,
    pub seed: u64,
    pub output: PathBuf,
    pub desk_scale: bool,
    pub env: EnvironmentConfig,
    pub schedule: FidelitySchedule,
    pub ppo: PpoConfig,
    pub de: DeConfig,
    pub library_samples: usize,
    pub library_clusters: usize,
    pub library_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub eval_beta: f64,
    pub de_samples: Option<usize>,
    pub runtime_episodes: usize,
    pub runtime_profile: Option<RuntimeProfile>,
}

/// Fine grid used at desk scale.
pub fn desk_grid(case: TestCase) -> [usize; 2] {
    match case {
        TestCase::One => [29, 29],
        TestCase::Two => [15, 45],
    }
}

/// Default schedule of `framework` for `case`; full or desk scale.
pub fn default_schedule(case: TestCase, framework: Framework, beta: f64, desk: bool) -> FidelitySchedule {
    let betas = vec![0.25, 0.5, 1.0];
    if desk {
        return match framework {
            Framework::FixedMultigrid => FidelitySchedule::fixed(betas, vec![1300, 2600, 4000]),
            Framework::AdaptiveMultigrid => FidelitySchedule::adaptive(betas, vec![1300, 2600, 4000], 10, 0.002),
            _ => FidelitySchedule::single_grid(beta, 4000),
        };
    }
    let limits = match case {
        TestCase::One => vec![25_000, 50_000, 75_000],
        TestCase::Two => vec![50_000, 100_000, 150_000],
    };
    match framework {
        Framework::FixedMultigrid => FidelitySchedule::fixed(betas, limits),
        Framework::AdaptiveMultigrid => FidelitySchedule::adaptive(betas, limits, 25, 0.2),
        _ => FidelitySchedule::single_grid(beta, limits[2]),
    }
}

fn merge<T: Serialize + for<'de> Deserialize<'de>>(base: T, overrides: &toml::Table, section: &str) -> Result<T> {
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::config(section, e.to_string()))?;
    for (k, v) in overrides {
        if !table.contains_key(k) {
            return Err(Error::config(format!("{section}.{k}"), "unknown setting"));
        }
        table.insert(k.clone(), v.clone());
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(section, e.message().to_string()))
}

impl ExperimentConfig {
    pub fn new(case: TestCase, framework: Framework) -> Self {
        Self {
            case,
            framework,
            seed: 0,
            output: None,
            desk_scale: false,
            beta: None,
            grid: None,
            schedule: None,
            ppo: toml::Table::new(),
            de: toml::Table::new(),
            library: LibrarySettings::default(),
            evaluate: EvaluateSettings::default(),
            de_samples: None,
            runtime_episodes: None,
            runtime_profile: None,
            code_version: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[s].chars().take(40).collect::<String>())
                .unwrap_or_default();
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("manifest", e.to_string()))
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let desk = self.desk_scale;
        let [nx, ny] = self.grid.unwrap_or(if desk {
            desk_grid(self.case)
        } else {
            match self.case {
                TestCase::One => [61, 61],
                TestCase::Two => [31, 91],
            }
        });
        if nx < 3 || ny < 14 && self.case == TestCase::Two {
            return Err(Error::config("grid", "grid too small for the well layout"));
        }
        let env = match self.case {
            TestCase::One => {
                if nx != ny {
                    return Err(Error::config("grid", "test case 1 needs a square grid"));
                }
                EnvironmentConfig::case1_on(nx)
            }
            TestCase::Two => EnvironmentConfig::case2_on(nx, ny),
        };
        env.validate().map_err(|e| Error::config("grid", e.to_string()))?;

        let beta = self.beta.unwrap_or(1.0);
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::config("beta", "must lie in (0, 1]"));
        }
        let schedule = self
            .schedule
            .clone()
            .unwrap_or_else(|| default_schedule(self.case, self.framework, beta, desk));
        schedule.validate()?;

        let ppo_base = match (desk, self.case) {
            (true, TestCase::One) => PpoConfig::desk(),
            (true, TestCase::Two) => PpoConfig {
                hidden: vec![70, 70, 50],
                ..PpoConfig::desk()
            },
            (false, TestCase::One) => PpoConfig::case1(),
            (false, TestCase::Two) => PpoConfig::case2(),
        };
        let ppo = merge(ppo_base, &self.ppo, "ppo")?;
        ppo.validate()?;
        scheduler::episodes_per_iteration(&ppo, &env)?;

        let de_base = match (desk, self.case) {
            (true, _) => DeConfig::desk(),
            (false, TestCase::One) => DeConfig::case1(),
            (false, TestCase::Two) => DeConfig::case2(),
        };
        let mut de = merge(de_base, &self.de, "de")?;
        if !self.de.contains_key("seed") {
            de.seed = self.seed;
        }
        de.validate().map_err(|e| match e {
            Error::Contract(m) => Error::config("de.population", m),
            other => other,
        })?;

        let (n_default, l_default) = if desk { (100, 8) } else { (1000, 16) };
        let library_samples = self.library.samples.unwrap_or(n_default);
        let library_clusters = self.library.clusters.unwrap_or(l_default);
        if library_clusters == 0 || library_clusters > library_samples {
            return Err(Error::config("library.clusters", "must lie in 1..=library.samples"));
        }
        if let Some(p) = &self.library.path {
            if !p.join(uncertainty::MANIFEST_FILE).is_file() {
                return Err(Error::config("library.path", format!("no library at {}", p.display())));
            }
        }
        let eval_beta = self.evaluate.beta.unwrap_or(1.0);
        if self.framework == Framework::Evaluate {
            match &self.evaluate.checkpoint {
                Some(p) if p.is_file() => {}
                Some(p) => return Err(Error::config("evaluate.checkpoint", format!("{} does not exist", p.display()))),
                None => return Err(Error::config("evaluate.checkpoint", "required for framework \"evaluate\"")),
            }
            if self.library.path.is_none() {
                return Err(Error::config("library.path", "required for framework \"evaluate\""));
            }
        }
        let runtime_episodes = self.runtime_episodes.unwrap_or(100);
        if runtime_episodes == 0 {
            return Err(Error::config("runtime_episodes", "must be positive"));
        }
        let output = self.output.clone().unwrap_or_else(|| {
            PathBuf::from(format!(
                "runs/case{}-{}-seed{}",
                u8::from(self.case),
                serde_plain(self.framework),
                self.seed
            ))
        });
        Ok(ResolvedExperiment {
            case: self.case,
            framework: self.framework,
            seed: self.seed,
            output,
            desk_scale: desk,
            env,
            schedule,
            ppo,
            de,
            library_samples,
            library_clusters,
            library_path: self.library.path.clone(),
            checkpoint: self.evaluate.checkpoint.clone(),
            eval_beta,
            de_samples: self.de_samples,
            runtime_episodes,
            runtime_profile: self.runtime_profile.clone(),
        })
    }
}

fn serde_plain(f: Framework) -> String {
    serde_json::to_value(f)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

impl ResolvedExperiment {
    /// Config with every setting spelled out; resolving it yields `self`.
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            case: self.case,
            framework: self.framework,
            seed: self.seed,
            output: Some(self.output.clone()),
            desk_scale: self.desk_scale,
            beta: (self.schedule.betas.len() == 1).then(|| self.schedule.betas[0]),
            grid: Some([self.env.fine_nx, self.env.fine_ny]),
            schedule: Some(self.schedule.clone()),
            ppo: to_table(&self.ppo)?,
            de: to_table(&self.de)?,
            library: LibrarySettings {
                samples: Some(self.library_samples),
                clusters: Some(self.library_clusters),
                path: self.library_path.clone(),
            },
            evaluate: EvaluateSettings {
                checkpoint: self.checkpoint.clone(),
                beta: Some(self.eval_beta),
            },
            de_samples: self.de_samples,
            runtime_episodes: Some(self.runtime_episodes),
            runtime_profile: self.runtime_profile.clone(),
            code_version: Some(env!("CARGO_PKG_VERSION").to_string()),
        })
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| Error::config("manifest", e.to_string()))
}

/// Per-sample outcome of evaluating a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub sample: usize,
    pub recovery: f64,
    pub base_recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationTable {
    pub rows: Vec<EvaluationRow>,
    pub traces: Vec<(usize, EpisodeTrace)>,
}

impl EvaluationTable {
    pub fn mean_recovery(&self) -> f64 {
        self.rows.iter().map(|r| r.recovery).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_base_recovery(&self) -> f64 {
        self.rows.iter().map(|r| r.base_recovery).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn eval_csv(&self) -> String {
        let mut out = String::from("sample,recovery,base_recovery\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.sample, r.recovery, r.base_recovery);
        }
        out
    }

    pub fn controls_csv(&self) -> String {
        controls_csv(&self.traces)
    }
}

fn controls_csv(traces: &[(usize, EpisodeTrace)]) -> String {
    let mut out = String::from("sample,step,well,rate,saturation,pressure,reward\n");
    for (sample, trace) in traces {
        for r in &trace.rows {
            let _ = writeln!(
                out,
                "{sample},{},{},{},{},{},{}",
                r.step, r.well, r.rate, r.saturation, r.pressure, r.reward
            );
        }
    }
    out
}

/// Deterministic rollouts of `agent` on the library's evaluation samples at fidelity `beta`.
pub fn evaluate_agent(agent: &PpoAgent, library: &SampleLibrary, env: &EnvironmentConfig, beta: f64) -> Result<EvaluationTable> {
    if !library.matches(env) {
        return Err(Error::Contract("library does not match the environment grid or case".into()));
    }
    let sizes = agent.network.sizes();
    if sizes[0] != env.observation_len() || sizes[sizes.len() - 1] != env.action_len() {
        return Err(Error::Contract(format!(
            "checkpoint network {:?} does not fit {} observations and {} actions",
            sizes,
            env.observation_len(),
            env.action_len()
        )));
    }
    let cfg = env.with_beta(beta);
    let base = PpoAgent::base_policy(env.observation_len(), env.action_len(), &[1])?;
    let mut table = EvaluationTable::default();
    for id in library.evaluation_ids() {
        let k = &library.fields()[id];
        let mut env = MultiGridEnv::new(cfg.clone())?;
        let mut failure = None;
        let trace = trace_episode(&mut env, k, |obs| match agent.act(obs) {
            Ok(a) => a,
            Err(e) => {
                failure.get_or_insert(e);
                crate::environment::ActionWeights::equal(cfg.action_len())
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let base_recovery = crate::rl_ppo::evaluate_policy_return(&base, &cfg, std::slice::from_ref(k))?;
        table.rows.push(EvaluationRow {
            sample: id,
            recovery: trace.recovery,
            base_recovery,
        });
        table.traces.push((id, trace));
    }
    Ok(table)
}

/// Load a checkpoint and evaluate it on the library's held-out samples.
pub fn evaluate_checkpoint(checkpoint: &Path, library: &SampleLibrary, env: &EnvironmentConfig, beta: f64) -> Result<EvaluationTable> {
    let agent = PpoAgent::load(checkpoint)?;
    evaluate_agent(&agent, library, env, beta)
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentSummary {
    pub output: PathBuf,
    pub history: Vec<ReturnRecord>,
    pub equivalent_episodes: f64,
    pub evaluation: Option<EvaluationTable>,
    pub benchmark: Vec<BenchmarkRow>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn obtain_library(run: &ResolvedExperiment) -> Result<SampleLibrary> {
    if let Some(p) = &run.library_path {
        let lib = SampleLibrary::load(p)?;
        if !lib.matches(&run.env) {
            return Err(Error::config("library.path", "library was built for another case or grid"));
        }
        return Ok(lib);
    }
    log::info!(
        "building library: {} samples, {} clusters",
        run.library_samples,
        run.library_clusters
    );
    let lib = uncertainty::build_sample_library(&run.env, run.library_samples, run.library_clusters, run.seed)?;
    lib.save(&run.output.join("library"))?;
    Ok(lib)
}

/// Execute a resolved experiment. The manifest is written first so that
/// even an interrupted run can be repeated exactly.
pub fn run_experiment(run: &ResolvedExperiment) -> Result<ExperimentSummary> {
    std::fs::create_dir_all(&run.output)?;
    let marker = run.output.join(INCOMPLETE_FILE);
    write(&marker, "run in progress or failed\n")?;
    let mut run = run.clone();
    let result = execute(&mut run);
    if result.is_ok() {
        std::fs::remove_file(&marker)?;
    } else if let Err(e) = &result {
        write(&marker, &format!("{e}\n"))?;
    }
    result
}

fn execute(run: &mut ResolvedExperiment) -> Result<ExperimentSummary> {
    let out = run.output.clone();
    let library = if run.framework == Framework::BuildLibrary {
        let lib = uncertainty::build_sample_library(&run.env, run.library_samples, run.library_clusters, run.seed)?;
        lib.save(&out.join("library"))?;
        lib
    } else {
        obtain_library(run)?
    };
    let training = library.training_fields();

    if run.framework.trains() && run.runtime_profile.is_none() {
        log::info!("timing {} base-policy episodes per fidelity", run.runtime_episodes);
        run.runtime_profile = Some(RuntimeProfile::measure(
            &run.env,
            &training,
            &run.schedule.betas,
            run.runtime_episodes,
        )?);
    }
    write(&out.join(MANIFEST_FILE), &run.to_config()?.to_toml()?)?;

    let mut summary = ExperimentSummary {
        output: out.clone(),
        ..Default::default()
    };
    match run.framework {
        Framework::BuildLibrary => {}
        Framework::Evaluate => {
            let ckpt = run.checkpoint.clone().expect("validated in resolve");
            let table = evaluate_checkpoint(&ckpt, &library, &run.env, run.eval_beta)?;
            write(&out.join("eval.csv"), &table.eval_csv())?;
            write(&out.join("controls.csv"), &table.controls_csv())?;
            summary.evaluation = Some(table);
        }
        Framework::DeBenchmark => {
            let ids = library.evaluation_ids();
            let take = run.de_samples.unwrap_or(ids.len()).min(ids.len());
            let mut traces = Vec::new();
            for &id in &ids[..take] {
                log::info!("differential evolution on sample {id}");
                let k = &library.fields()[id];
                let bench = baseline_de::de_wellcontrol(k, &run.env, &run.de)?;
                summary.benchmark.push(BenchmarkRow {
                    sample: id,
                    best_recovery: bench.best_recovery,
                    evaluations: bench.evaluations,
                    seed: run.de.seed,
                });
                let mut env = MultiGridEnv::new(run.env.clone())?;
                let mut step = 0;
                let trace = trace_episode(&mut env, k, |_| {
                    step += 1;
                    bench.controls[step - 1].clone()
                })?;
                traces.push((id, trace));
                write(&out.join("de_benchmark.csv"), &baseline_de::benchmark_csv(&summary.benchmark))?;
            }
            write(&out.join("controls.csv"), &controls_csv(&traces))?;
        }
        Framework::SingleGrid | Framework::FixedMultigrid | Framework::AdaptiveMultigrid => {
            train(run, &library, &training, &mut summary)?;
        }
    }
    Ok(summary)
}

fn train(
    run: &ResolvedExperiment,
    library: &SampleLibrary,
    training: &[crate::grid::ScalarField],
    summary: &mut ExperimentSummary,
) -> Result<()> {
    let out = &run.output;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let agent = PpoAgent::new(run.env.observation_len(), run.env.action_len(), &run.ppo, run.seed)?;
    let profile = run.runtime_profile.clone().expect("measured before training");
    let returns_path = out.join("returns.csv");
    let mut report = scheduler::run_training(
        &run.schedule,
        &run.ppo,
        &run.env,
        training,
        agent,
        profile,
        run.seed,
        |event| match event {
            TrainingEvent::Iteration(r) => {
                log::info!(
                    "iteration {} beta {} episodes {} equivalent {:.1} return {:.5}",
                    r.iteration,
                    r.beta,
                    r.episodes,
                    r.equivalent_episodes,
                    r.value
                );
                Ok(())
            }
            TrainingEvent::FidelityDone { index, beta, agent } => {
                agent.save(&ckpt_dir.join(format!("fidelity{index}_beta{beta}.ckpt")))
            }
        },
    )?;
    write(&returns_path, &report.returns_csv())?;
    write(&out.join("returns.svg"), &returns_svg(&report.history))?;
    summary.history = report.history.clone();
    summary.equivalent_episodes = report.equivalent_episodes;
    if let Some(e) = report.failure.take() {
        report.agent.save(&ckpt_dir.join("partial.ckpt"))?;
        return Err(e);
    }
    report.agent.save(&ckpt_dir.join("final.ckpt"))?;
    let table = evaluate_agent(&report.agent, library, &run.env, 1.0)?;
    write(&out.join("eval.csv"), &table.eval_csv())?;
    write(&out.join("controls.csv"), &table.controls_csv())?;
    summary.evaluation = Some(table);
    Ok(())
}

/// Line plot of return against episodes, with equivalent fine-grid
/// episodes marked along the top axis.
pub fn returns_svg(history: &[ReturnRecord]) -> String {
    let (w, h, m) = (720.0, 420.0, 60.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    if history.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let x_max = history.last().map(|r| r.episodes as f64).unwrap_or(1.0).max(1.0);
    let lo = history.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let hi = history.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |e: f64| m + (w - 2.0 * m) * e / x_max;
    let py = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / (hi - lo);

    let _ = writeln!(
        svg,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * m,
        h - 2.0 * m
    );
    for k in 0..=4 {
        let e = x_max * k as f64 / 4.0;
        let x = px(e);
        let _ = writeln!(svg, "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{e:.0}</text>", h - m + 16.0);
        // Equivalent episodes at the same position, interpolated from the history.
        let eq = equivalent_at(history, e);
        let _ = writeln!(svg, "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{eq:.0}</text>", m - 8.0);
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.3}</text>", m - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">episodes</text>", w / 2.0, h - 20.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\">equivalent beta = 1 episodes</text>", w / 2.0);

    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
    let mut segment: Vec<&ReturnRecord> = Vec::new();
    let mut color = 0;
    let flush = |seg: &[&ReturnRecord], c: usize, svg: &mut String| {
        let pts: Vec<String> = seg
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.episodes as f64), py(r.value)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            colors[c % colors.len()],
            pts.join(" ")
        );
        if let Some(r) = seg.first() {
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{}\" fill=\"{}\">beta {}</text>",
                px(r.episodes as f64) + 4.0,
                m + 14.0 + 12.0 * c as f64,
                colors[c % colors.len()],
                r.beta
            );
        }
    };
    for r in history {
        if segment.last().is_some_and(|p| p.beta != r.beta) {
            flush(&segment, color, &mut svg);
            color += 1;
            segment.clear();
        }
        segment.push(r);
    }
    flush(&segment, color, &mut svg);
    svg.push_str("</svg>\n");
    svg
}

fn equivalent_at(history: &[ReturnRecord], episodes: f64) -> f64 {
    let mut prev = (0.0, 0.0);
    for r in history {
        let cur = (r.episodes as f64, r.equivalent_episodes);
        if cur.0 >= episodes {
            if cur.0 == prev.0 {
                return cur.1;
            }
            return prev.1 + (cur.1 - prev.1) * (episodes - prev.0) / (cur.0 - prev.0);
        }
        prev = cur;
    }
    prev.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_row_round_trips() {
        let cfg = ExperimentConfig::from_toml("case = 1\nframework = \"adaptive-multigrid\"\n").unwrap();
        let run = cfg.resolve().unwrap();
        assert_eq!(run.schedule.betas, vec![0.25, 0.5, 1.0]);
        assert_eq!(run.schedule.episode_limits, vec![25_000, 50_000, 75_000]);
        assert_eq!(run.schedule.window, scheduler::ConvergenceWindow::Finite(25));
        assert_eq!(run.schedule.tolerance, 0.2);
        let text = run.to_config().unwrap().to_toml().unwrap();
        let again = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert_eq!(again, run);
    }

    #[test]
    fn case2_defaults() {
        let run = ExperimentConfig::new(TestCase::Two, Framework::FixedMultigrid).resolve().unwrap();
        assert_eq!(run.schedule.episode_limits, vec![50_000, 100_000, 150_000]);
        assert_eq!(run.ppo.clip, 0.15);
        assert_eq!(run.ppo.hidden, vec![70, 70, 50]);
        assert_eq!(run.de.population, 105);
        assert_eq!((run.library_samples, run.library_clusters), (1000, 16));
    }

    #[test]
    fn partial_overrides_and_errors() {
        let cfg = ExperimentConfig::from_toml(
            "case = 1\nframework = \"single-grid\"\ndesk_scale = true\n[ppo]\nepochs = 3\n",
        )
        .unwrap();
        let run = cfg.resolve().unwrap();
        assert_eq!(run.ppo.epochs, 3);
        assert_eq!(run.ppo.actors, PpoConfig::desk().actors);
        assert_eq!(run.env.fine_nx, 29);

        let bad = ExperimentConfig::from_toml("case = 1\nframework = \"single-grid\"\n[ppo]\nepochz = 3\n").unwrap();
        assert!(matches!(bad.resolve(), Err(Error::Config { field, .. }) if field == "ppo.epochz"));
        assert!(ExperimentConfig::from_toml("case = 3\nframework = \"single-grid\"\n").is_err());
        let missing = ExperimentConfig::new(TestCase::One, Framework::Evaluate);
        assert!(matches!(missing.resolve(), Err(Error::Config { .. })));
    }

    #[test]
    fn svg_has_one_line_per_fidelity() {
        let rec = |i: usize, beta: f64| ReturnRecord {
            iteration: i,
            beta,
            episodes: 64 * (i as u64 + 1),
            equivalent_episodes: 10.0 * i as f64,
            value: 0.7 + 0.01 * i as f64,
            rollout_return: 0.0,
        };
        let svg = returns_svg(&[rec(0, 0.25), rec(1, 0.25), rec(2, 1.0)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
