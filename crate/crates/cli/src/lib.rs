//! Commands behind the `lpr` binary: demo generation, training runs with a
//! reproducible manifest, evaluation, and ranking inspection.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lpr_core::kinematics::PathSource;
use lpr_core::ranker::RankRecord;
use lpr_core::replay::{replay_demo, save_demo};
use lpr_core::trainer::{evaluate, train, Agent, EvalResult, Mode, TrainConfig};
use lpr_core::world::{generate_demo, Task};
use serde::{Deserialize, Serialize};

/// Content hash of the sources this binary was built from.
pub const CODE_HASH: &str = env!("LPR_CODE_HASH");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const DEMO_DIR: &str = "demos";
pub const OUT_DIR_ENV: &str = "LPR_OUT_DIR";
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or missing inputs; exit code 2.
    Usage(String),
    /// Anything that failed while running; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<lpr_core::Error> for CliError {
    fn from(e: lpr_core::Error) -> Self {
        match e {
            lpr_core::Error::Config { .. } | lpr_core::Error::UnknownTask(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Output root: `LPR_OUT_DIR` if set, else `./runs`.
pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// File names inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLayout {
    pub config: String,
    /// Per-seed subdirectory; `{seed}` is replaced by the seed.
    pub seed_dir: String,
    pub metrics: String,
    pub checkpoint: String,
    pub demos: String,
}

impl Default for RunLayout {
    fn default() -> Self {
        RunLayout {
            config: CONFIG_FILE.into(),
            seed_dir: "seed_{seed}".into(),
            metrics: METRICS_FILE.into(),
            checkpoint: CHECKPOINT_FILE.into(),
            demos: DEMO_DIR.into(),
        }
    }
}

/// Everything needed to re-run a training run exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Full `key = value` config snapshot.
    pub config: String,
    pub code_hash: String,
    pub seeds: Vec<u64>,
    pub layout: RunLayout,
}

impl RunManifest {
    pub fn new(cfg: &TrainConfig) -> Self {
        RunManifest {
            config: cfg.to_kv(),
            code_hash: CODE_HASH.into(),
            seeds: cfg.seeds.clone(),
            layout: RunLayout::default(),
        }
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let mut cfg = TrainConfig::from_kv(&self.config)?;
        cfg.seeds = self.seeds.clone();
        Ok(cfg)
    }

    pub fn seed_dir(&self, run_dir: &Path, seed: u64) -> PathBuf {
        run_dir.join(self.layout.seed_dir.replace("{seed}", &seed.to_string()))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, run_dir: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(run_dir.join(MANIFEST_FILE), json)?;
        fs::write(run_dir.join(&self.layout.config), &self.config)?;
        Ok(())
    }
}

/// Reads a flat config file, or the config snapshot of a run manifest when
/// the file is JSON.
pub fn load_config(path: &Path) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let manifest = RunManifest::read(path)?;
        if manifest.code_hash != CODE_HASH {
            eprintln!("warning: manifest was written by a different code version");
        }
        return manifest.train_config();
    }
    Ok(TrainConfig::from_kv(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoGenSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(u64, String)>,
    /// Files that replay to reward 1.
    pub replayed: usize,
}

/// Writes up to `n` demos for seeds `seed, seed + 1, ...`.
pub fn cmd_demo_gen(task: Task, n: usize, seed: u64, out: &Path, path_len: usize) -> CliResult<DemoGenSummary> {
    fs::create_dir_all(out)?;
    let mut summary = DemoGenSummary {
        written: Vec::new(),
        failed: Vec::new(),
        replayed: 0,
    };
    for i in 0..n as u64 {
        let s = seed + i;
        match generate_demo(task, s, path_len) {
            Ok(demo) => {
                let file = out.join(format!("{}_{s:06}.json", task.name()));
                save_demo(&demo, &file)?;
                if replay_demo(&demo) == 1.0 {
                    summary.replayed += 1;
                }
                summary.written.push(file);
            }
            Err(e) => summary.failed.push((s, e.to_string())),
        }
    }
    if n > 0 && summary.written.is_empty() {
        return Err(CliError::Runtime(format!("every demo failed for {task}")));
    }
    Ok(summary)
}

/// Per-seed outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_success: f64,
    pub dir: PathBuf,
}

/// Trains every configured seed into `run_dir`, writing the manifest first.
pub fn cmd_train(cfg: &TrainConfig, run_dir: &Path) -> CliResult<Vec<SeedResult>> {
    cfg.validate()?;
    fs::create_dir_all(run_dir)?;
    let manifest = RunManifest::new(cfg);
    manifest.write(run_dir)?;
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let dir = manifest.seed_dir(run_dir, seed);
        fs::create_dir_all(&dir)?;
        let out = train(cfg, seed, Some(&dir))?;
        results.push(SeedResult {
            seed,
            final_success: out.final_success(),
            dir,
        });
    }
    Ok(results)
}

/// Default run directory under the output root.
pub fn default_run_dir(cfg: &TrainConfig) -> PathBuf {
    out_root().join(format!("{}_{}", cfg.task, cfg.mode))
}

fn load_agent(checkpoint: Option<&Path>, cfg: &TrainConfig) -> CliResult<Option<Agent>> {
    if !cfg.mode.learns() {
        return Ok(None);
    }
    let path = checkpoint.ok_or_else(|| CliError::Usage(format!("--checkpoint is required in {} mode", cfg.mode)))?;
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(Some(Agent::load(path, cfg)?))
}

pub fn cmd_eval(checkpoint: Option<&Path>, cfg: &TrainConfig, n: usize, seed: u64) -> CliResult<EvalResult> {
    let agent = load_agent(checkpoint, cfg)?;
    Ok(evaluate(cfg, agent.as_ref(), n, seed)?)
}

/// Greedy episodes with every ranked decision recorded.
pub fn cmd_rank_inspect(checkpoint: &Path, cfg: &TrainConfig, n: usize, seed: u64) -> CliResult<Vec<RankRecord>> {
    if cfg.mode == Mode::ShortestPath {
        return Err(CliError::Usage("rank-inspect needs a learned ranker".into()));
    }
    let agent = load_agent(Some(checkpoint), cfg)?;
    let eval = evaluate(cfg, agent.as_ref(), n, seed)?;
    Ok(eval
        .episodes
        .iter()
        .enumerate()
        .flat_map(|(k, e)| e.rank_records(k))
        .collect())
}

const SHOWN_CANDIDATES: usize = 5;

/// One line per decision: chosen and top-ranked sources, then the best
/// candidates with their Q-values; a per-source tally of top ranks follows.
pub fn format_rank_table(records: &[RankRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>7} {:>5} {:>6} {:>8} {:>8} {:>6}  candidates (best first)",
        "episode", "stage", "chosen", "chosen_by", "top", "reward"
    );
    let mut tally = [0usize; 4];
    for r in records {
        let top = r.top_source();
        if let Some(t) = top {
            tally[source_slot(t)] += 1;
        }
        let mut order: Vec<usize> = (0..r.q_values.len()).collect();
        order.sort_by(|&a, &b| r.q_values[b].total_cmp(&r.q_values[a]).then(a.cmp(&b)));
        let shown: Vec<String> = order
            .iter()
            .take(SHOWN_CANDIDATES)
            .map(|&i| format!("{}#{i}:{:.4}", r.sources[i], r.q_values[i]))
            .collect();
        let _ = writeln!(
            s,
            "{:>7} {:>5} {:>6} {:>8} {:>8} {:>6}  {}",
            r.episode,
            r.stage,
            r.chosen,
            r.sources[r.chosen].to_string(),
            top.map(|t| t.to_string()).unwrap_or_default(),
            r.reward,
            shown.join(" ")
        );
    }
    let _ = writeln!(
        s,
        "top-ranked: planner {}, bezier {}, policy {}",
        tally[source_slot(PathSource::Planner)],
        tally[source_slot(PathSource::Bezier)],
        tally[source_slot(PathSource::Policy)]
    );
    s
}

fn source_slot(s: PathSource) -> usize {
    match s {
        PathSource::Planner => 0,
        PathSource::Bezier => 1,
        PathSource::Policy => 2,
        PathSource::Demo => 3,
    }
}
