use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use metam::bench::{run_synthetic_benchmark, synth_repository, Report, RunRecord, SynthSpec, INPUT_ID};
use metam::discovery::build_join_index;
use metam::pipeline::prepare_with_index;
use metam::repository::{load_repository, load_table, LoadOptions};
use metam::{Error, JoinIndex, PipelineConfig, Prepared, Repository, SearchConfig, Strategy, Table, TaskConfig};
use serde::Serialize;

use crate::args::{BenchArgs, Command, DiscoveryArgs, IndexArgs, ProfileArgs, RunArgs, SynthArgs};
use crate::manifest::{BenchManifest, InstanceInfo, RunManifest, TOOL_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Configuration mistakes are usage errors; anything else is a runtime one.
fn usage(e: Error) -> CliError {
    match e {
        Error::InvalidConfig(m) => CliError::Usage(m),
        other => CliError::Runtime(other),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write(path, text + "\n")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Bench(a) => bench(a),
        Command::Profile(a) => profile(a),
        Command::Index(a) => index(a),
    }
}

fn pipeline_config(d: &DiscoveryArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(c) = d.containment {
        cfg.containment_threshold = c;
    }
    if let Some(h) = d.max_hops {
        cfg.max_hops = h;
    }
    if let Some(p) = &d.profiles {
        cfg.profiles = p.clone();
    }
    cfg.random_profiles = d.random_profiles;
    cfg.validate().map_err(usage)?;
    cfg.registry().map_err(usage)?;
    Ok(cfg)
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    s.parse().map_err(usage)
}

/// Loads a persisted index, or builds one, for `repo`.
fn join_index(repo: &Repository, path: Option<&Path>, signature_size: usize) -> Result<JoinIndex> {
    match path {
        Some(p) => {
            let index = JoinIndex::load(p)?;
            if index.repository_hash != repo.content_hash() {
                return Err(CliError::Runtime(Error::InvalidConfig(format!(
                    "index {} was built for a different repository",
                    p.display()
                ))));
            }
            Ok(index)
        }
        None => Ok(build_join_index(repo, signature_size)),
    }
}

struct Inputs {
    repo: Repository,
    d_in: Table,
}

fn load_inputs(repo: &Path, input: &Path) -> Result<Inputs> {
    let repo = load_repository(repo, &LoadOptions::default())?;
    let d_in = load_table(input)?;
    Ok(Inputs { repo, d_in })
}

fn prepare_inputs(inputs: &Inputs, manifest: &RunManifest, target: Option<&str>) -> Result<Prepared> {
    let index = join_index(&inputs.repo, manifest.index.as_deref(), manifest.pipeline.signature_size)?;
    Ok(prepare_with_index(&inputs.d_in, &inputs.repo, &index, target, &manifest.pipeline)?)
}

fn resolve_run(a: &RunArgs) -> Result<(RunManifest, Inputs)> {
    if let Some(path) = &a.replay {
        let manifest: RunManifest = read_json(path)?;
        let inputs = load_inputs(&manifest.repo, &manifest.input)?;
        if inputs.repo.content_hash() != manifest.repo_hash || inputs.d_in.content_hash() != manifest.input_hash {
            return Err(CliError::Runtime(Error::InvalidConfig(
                "repository or input changed since the manifest was written".into(),
            )));
        }
        return Ok((manifest, inputs));
    }
    let (Some(repo), Some(input), Some(task), Some(theta)) = (&a.repo, &a.input, &a.task, a.theta) else {
        return Err(CliError::Usage("--repo, --input, --task and --theta are required".into()));
    };
    let search = SearchConfig {
        theta,
        tau: a.tau.0,
        epsilon: a.epsilon,
        max_queries: a.max_queries,
        max_seconds: a.max_seconds,
        max_solution_size: a.max_solution_size,
        seed: a.seed,
        group_enabled: !a.no_group,
        ..SearchConfig::default()
    };
    search.validate().map_err(usage)?;
    let strategy = parse_strategy(&a.strategy)?;
    let pipeline = pipeline_config(&a.discovery)?;
    let task_cfg = TaskConfig::load(task).map_err(usage)?;
    task_cfg.build().map_err(usage)?;
    let inputs = load_inputs(repo, input)?;
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        strategy: strategy.name().into(),
        seed: a.seed,
        repo: repo.clone(),
        repo_hash: inputs.repo.content_hash(),
        input: input.clone(),
        input_hash: inputs.d_in.content_hash(),
        task: task_cfg,
        index: a.discovery.index.clone(),
        pipeline,
        search,
    };
    Ok((manifest, inputs))
}

fn run(a: RunArgs) -> Result<()> {
    let (manifest, inputs) = resolve_run(&a)?;
    let strategy = parse_strategy(&manifest.strategy)?;
    let task = manifest.task.build().map_err(usage)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    log::info!("{}", metam::repository::describe(&inputs.d_in));

    let started = Instant::now();
    let prepared = prepare_inputs(&inputs, &manifest, task.target_column())?;
    let oracle = prepared.oracle(&inputs.d_in, task.as_ref());
    let sol = metam::run_strategy(strategy, &prepared.problem(&oracle), prepared.overlap_dim(), &manifest.search)?;
    let wall = started.elapsed().as_secs_f64();

    write(&a.out.join("querylog.jsonl"), sol.query_log_jsonl())?;
    write_json(&a.out.join("solution.json"), &sol)?;
    let record = RunRecord::from_solution(strategy, manifest.seed, manifest.search.theta, &sol, wall);
    let report = Report::from_runs(vec![manifest.seed], vec![record]);
    write(&a.out.join("report.json"), report.to_json()? + "\n")?;
    write(&a.out.join("curves.csv"), report.curves_csv())?;

    println!(
        "{}: utility {:.4} (base {:.4}, theta {}) with {} augmentation(s) after {} queries, stop {:?}",
        sol.strategy,
        sol.utility,
        sol.base_utility,
        sol.theta,
        sol.augmentations.len(),
        sol.queries,
        sol.stop
    );
    for id in &sol.augmentations {
        println!("  {id}");
    }
    if let Some(e) = &sol.error {
        return Err(CliError::Runtime(Error::TaskFailure(e.clone())));
    }
    Ok(())
}

fn load_spec(path: Option<&Path>) -> Result<SynthSpec> {
    let spec = match path {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    spec.validate().map_err(usage)?;
    Ok(spec)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = load_spec(a.spec.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let inst = synth_repository(&spec)?;
    let repo_dir = a.out.join("repo");
    create_dir(&repo_dir)?;
    inst.repo.write_to(&repo_dir)?;
    inst.d_in.write_csv(&a.out.join(INPUT_ID))?;
    write_json(&a.out.join("task.json"), &inst.task)?;
    let info = InstanceInfo {
        spec,
        theta: inst.theta,
        planted_utility: inst.planted_utility,
        ground_truth: inst.ground_truth.clone(),
        repo_hash: inst.repo.content_hash(),
        input_hash: inst.d_in.content_hash(),
    };
    write_json(&a.out.join("instance.json"), &info)?;
    println!(
        "{} tables, theta {:.4}, planted {}",
        inst.repo.len(),
        inst.theta,
        inst.ground_truth.join(" ")
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref())?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let strategies: Vec<Strategy> = a.strategies.iter().map(|s| parse_strategy(s)).collect::<Result<_>>()?;
    let pipeline = PipelineConfig {
        random_profiles: a.random_profiles,
        ..PipelineConfig::default()
    };
    // θ comes from each generated instance; this placeholder only passes validation.
    let search = SearchConfig {
        tau: a.tau.0,
        epsilon: a.epsilon,
        max_queries: a.max_queries,
        ..SearchConfig::default()
    };
    search.validate().map_err(usage)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    create_dir(&a.out)?;
    let manifest = BenchManifest {
        tool_version: TOOL_VERSION.into(),
        spec: spec.clone(),
        strategies: strategies.iter().map(|s| s.name().to_string()).collect(),
        seeds: seeds.clone(),
        pipeline: pipeline.clone(),
        search: search.clone(),
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;

    let report = run_synthetic_benchmark(&spec, &pipeline, &strategies, &search, &seeds)?;
    write(&a.out.join("report.json"), report.to_json()? + "\n")?;
    write(&a.out.join("curves.csv"), report.curves_csv())?;
    for s in &report.summaries {
        println!(
            "{:<16} reached {}/{}  median queries to theta {}  median size {}",
            s.strategy,
            s.reached,
            s.runs,
            s.median_queries_to_theta.map_or("inf".to_string(), |m| m.to_string()),
            s.median_solution_size
        );
    }
    let failed: usize = report.summaries.iter().map(|s| s.failed).sum();
    if failed > 0 {
        return Err(CliError::Runtime(Error::TaskFailure(format!(
            "{failed} run(s) failed; see report.json"
        ))));
    }
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let pipeline = pipeline_config(&a.discovery)?;
    let pipeline = PipelineConfig {
        profile_seed: a.seed,
        ..pipeline
    };
    let inputs = load_inputs(&a.repo, &a.input)?;
    if let Some(t) = &a.target {
        if inputs.d_in.column_index(t).is_none() {
            return Err(CliError::Usage(format!("input has no column {t:?}")));
        }
    }
    let index = join_index(&inputs.repo, a.discovery.index.as_deref(), pipeline.signature_size)?;
    let prepared = prepare_with_index(&inputs.d_in, &inputs.repo, &index, a.target.as_deref(), &pipeline)?;
    create_dir(&a.out)?;
    let mut csv = String::from("id");
    for n in &prepared.profile_names {
        let _ = write!(csv, ",{n}");
    }
    csv.push('\n');
    for (id, p) in prepared.ids.iter().zip(&prepared.profiles) {
        csv.push('"');
        csv.push_str(&id.replace('"', "\"\""));
        csv.push('"');
        for v in p {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write(&a.out.join("profiles.csv"), csv)?;
    println!("{} candidates profiled on {} dimensions", prepared.ids.len(), prepared.profile_names.len());
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    if a.signature_size == 0 {
        return Err(CliError::Usage("--signature-size must be positive".into()));
    }
    let repo = load_repository(&a.repo, &LoadOptions::default())?;
    let index = build_join_index(&repo, a.signature_size);
    create_dir(&a.out)?;
    index.save(&a.out.join("index.json"))?;
    println!("{} tables, {} column sketches", index.tables.len(), index.columns.len());
    Ok(())
}
