use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bevcomm::codebook::{self, train_with_report, Codebook, QuantizerConfig};
use bevcomm::grid::{self, AgentId};
use bevcomm::io::{parse_dataset, parse_score_maps};
use bevcomm::selection::{self, oracle_check, Budget, Demand, OracleLimits, RankingRule};
use bevcomm::sim::{
    self, scene_dataset, PerturbationSpec, RoundConfig, Scenario, ScenarioConfig, ScenarioDoc,
    SweepGrid, Transport,
};
use bevcomm::wire::{self, CodeIndexMessage};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INVALID: u8 = 4;
const EXIT_MISMATCH: u8 = 5;

/// Communication-efficient collaborative perception: selection, codebooks,
/// wire messages and trade-off sweeps over synthetic BEV scenes.
///
/// Exit codes: 0 success, 2 usage, 3 I/O, 4 validation, 5 oracle mismatch.
#[derive(Parser)]
#[command(name = "bevcomm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a concrete scene from a generator config and write it as TOML.
    GenScenario(GenScenario),
    /// Train a residual codebook and write it in the binary codebook format.
    TrainCodebook(TrainCodebook),
    /// Solve message selection for score maps given as JSON.
    Select(Select),
    /// Quantize and pack one sender-to-receiver message of a scene.
    Encode(Encode),
    /// Unpack a message and reconstruct its features as JSON.
    Decode(Decode),
    /// Run one exchange round and print its report as JSON.
    Round(Round),
    /// Evaluate a grid of configurations and write the CSV table.
    Sweep(Sweep),
    /// Compare the solver with exhaustive search on random small instances.
    OracleCheck(OracleCheck),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Ranking {
    /// Rank retained candidates by their score.
    #[default]
    Retained,
    /// Rank retained candidates by their capped marginal gain.
    Gain,
}

impl From<Ranking> for RankingRule {
    fn from(r: Ranking) -> Self {
        match r {
            Ranking::Retained => RankingRule::RetainedScore,
            Ranking::Gain => RankingRule::MarginalGain,
        }
    }
}

#[derive(Args)]
struct SceneArgs {
    /// Scenario file: a concrete scene or a generator config (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Seed; draws a generated scene, or replaces a fixed scene's noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PerturbArgs {
    /// Pose translation noise std, cells.
    #[arg(long, default_value_t = 0.0)]
    pose_sigma: f64,
    /// Pose rotation noise std, degrees.
    #[arg(long, default_value_t = 0.0)]
    pose_rot_sigma: f64,
    /// Collaborator latency, frames.
    #[arg(long, default_value_t = 0)]
    latency: usize,
}

#[derive(Args)]
struct GenScenario {
    /// Generator config (TOML); the built-in demo config if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCodebook {
    /// Text dataset: one vector per line.
    #[arg(long, conflicts_with = "from_scenario", required_unless_present = "from_scenario")]
    dataset: Option<PathBuf>,
    /// Train on every non-zero feature vector a scene renders.
    #[arg(long)]
    from_scenario: Option<PathBuf>,
    /// Scene seed for --from-scenario.
    #[arg(long)]
    scene_seed: Option<u64>,
    /// Codebook size (power of two).
    #[arg(long, default_value_t = 256)]
    n_l: usize,
    /// Code quantity.
    #[arg(long, default_value_t = 2)]
    n_r: usize,
    #[arg(long, default_value_t = 25)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Select {
    /// JSON `{"height", "width", "maps"}`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    demand: f64,
    /// Cell budget, or `inf`.
    #[arg(long, value_parser = parse_budget)]
    budget: Budget,
    #[arg(long, value_enum, default_value_t)]
    ranking: Ranking,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Encode {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long)]
    sender: u16,
    #[arg(long)]
    receiver: u16,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long, default_value_t = 1)]
    n_r: usize,
    #[arg(long, default_value_t = 1.0)]
    demand: f64,
    /// Cell budget, or `inf`.
    #[arg(long, value_parser = parse_budget, default_value = "inf")]
    budget: Budget,
    #[arg(long, value_enum, default_value_t)]
    ranking: Ranking,
    /// Packed message output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Decode {
    #[arg(long)]
    message: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Round {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long, default_value_t = 1.0)]
    demand: f64,
    /// Cell budget, or `inf`.
    #[arg(long, value_parser = parse_budget, default_value = "inf")]
    budget: Budget,
    /// Codebook file; raw feature transport if omitted.
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    n_r: usize,
    #[command(flatten)]
    perturb: PerturbArgs,
    /// Fused-score detection threshold.
    #[arg(long, default_value_t = sim::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t)]
    ranking: Ranking,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Sweep {
    /// Scenario file; one scene per seed.
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated cell budgets; `inf` for unlimited.
    #[arg(long, default_value = "0,16,128,1024")]
    budgets: String,
    #[arg(long, default_value = "1.0")]
    demands: String,
    /// Comma-separated `n_LxN_r` pairs.
    #[arg(long, default_value = "256x2")]
    codebooks: String,
    #[arg(long, default_value = "0")]
    pose_sigmas: String,
    #[arg(long, default_value_t = 0.0)]
    pose_rot_sigma: f64,
    #[arg(long, default_value = "0")]
    latencies: String,
    /// Comma-separated seeds, or a half-open range `a..b`.
    #[arg(long, default_value = "0..20")]
    seeds: String,
    /// Frames averaged per row; the whole horizon if omitted.
    #[arg(long)]
    frames: Option<String>,
    /// Training epochs per codebook.
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, value_enum, default_value_t)]
    ranking: Ranking,
    /// Average seeds out, one row per configuration.
    #[arg(long)]
    mean: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleCheck {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    max_agents: usize,
    #[arg(long, default_value_t = 6)]
    max_cells: usize,
    #[arg(long, default_value_t = 5)]
    max_budget: usize,
    #[arg(long, value_enum, default_value_t)]
    ranking: Ranking,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome = Result<(), Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: error.into(),
    }
}

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        error: error.into(),
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    let code = if e.kind() == io::ErrorKind::InvalidData {
        EXIT_INVALID
    } else {
        EXIT_IO
    };
    Failure {
        code,
        error: anyhow!(e).context(format!("{}", path.display())),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| io_failure(path, e))
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Outcome {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_failure(p, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(invalid)?;
    text.push('\n');
    write_out(path, text.as_bytes())
}

fn load_codebook(path: &Path) -> Result<Codebook, Failure> {
    Codebook::load(path).map_err(|e| io_failure(path, e))
}

fn load_doc(path: &Path) -> Result<ScenarioDoc, Failure> {
    ScenarioDoc::from_toml(&read_text(path)?)
        .map_err(|e| invalid(anyhow!(e).context(format!("{}", path.display()))))
}

fn load_scene(args: &SceneArgs) -> Result<Scenario, Failure> {
    load_doc(&args.scenario)?.resolve(args.seed).map_err(invalid)
}

fn demand(u: f64) -> Result<Demand, Failure> {
    Demand::new(u).map_err(invalid)
}

fn parse_budget(s: &str) -> Result<Budget, String> {
    match s.trim() {
        "inf" => Ok(Budget::UNLIMITED),
        t => t
            .parse()
            .map(Budget)
            .map_err(|_| format!("invalid budget {t:?}; expected a cell count or `inf`")),
    }
}

fn parse_list<T>(
    flag: &str,
    s: &str,
    item: impl Fn(&str) -> Result<T, String>,
) -> Result<Vec<T>, Failure> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| item(t).map_err(|e| usage(anyhow!("--{flag}: {e}"))))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(usage(anyhow!("--{flag} needs at least one value")));
    }
    Ok(items)
}

fn parse_num<T: std::str::FromStr>(t: &str) -> Result<T, String> {
    t.parse().map_err(|_| format!("invalid number {t:?}"))
}

fn parse_codebook_spec(t: &str) -> Result<sim::CodebookSpec, String> {
    let (l, r) = t
        .split_once('x')
        .ok_or_else(|| format!("expected n_LxN_r, got {t:?}"))?;
    Ok(sim::CodebookSpec {
        n_l: parse_num(l)?,
        n_r: parse_num(r)?,
    })
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = parse_num(a.trim()).map_err(|e| usage(anyhow!("--seeds: {e}")))?;
        let b: u64 = parse_num(b.trim()).map_err(|e| usage(anyhow!("--seeds: {e}")))?;
        if a >= b {
            return Err(usage(anyhow!("--seeds: empty range {s:?}")));
        }
        return Ok((a..b).collect());
    }
    parse_list("seeds", s, parse_num)
}

fn gen_scenario(a: GenScenario) -> Outcome {
    let config = match &a.config {
        Some(p) => match load_doc(p)? {
            ScenarioDoc::Generated(c) => c,
            ScenarioDoc::Fixed(_) => {
                return Err(invalid(anyhow!(
                    "{} is already a concrete scene, not a generator config",
                    p.display()
                )))
            }
        },
        None => ScenarioConfig::default(),
    };
    let scene = sim::generate(&config, a.seed).map_err(invalid)?;
    let text = scene.to_toml().map_err(invalid)?;
    write_out(a.out.as_deref(), text.as_bytes())
}

fn train_codebook(a: TrainCodebook) -> Outcome {
    let data = match (&a.dataset, &a.from_scenario) {
        (Some(p), _) => parse_dataset(&read_text(p)?)
            .map_err(|e| invalid(anyhow!(e).context(format!("{}", p.display()))))?,
        (None, Some(p)) => {
            let scene = load_doc(p)?.resolve(a.scene_seed).map_err(invalid)?;
            let frames: Vec<usize> = (0..scene.horizon).collect();
            let data = scene_dataset(&scene, &frames).map_err(invalid)?;
            if data.is_empty() {
                return Err(invalid(anyhow!("scene renders no features to train on")));
            }
            data
        }
        (None, None) => return Err(usage(anyhow!("need --dataset or --from-scenario"))),
    };
    let config = QuantizerConfig {
        n_l: a.n_l,
        n_r: a.n_r,
        iterations: a.iterations,
        tolerance: a.tolerance,
        seed: a.seed,
    };
    config.validate().map_err(invalid)?;
    let report = train_with_report(&data, &config).map_err(invalid)?;
    let error =
        codebook::reconstruction_error(&data, &report.codebook, a.n_r).map_err(invalid)?;
    report
        .codebook
        .save(&a.out)
        .map_err(|e| io_failure(&a.out, e))?;
    println!("reconstruction_error {error}");
    Ok(())
}

#[derive(Serialize)]
struct PairOut {
    sender: AgentId,
    receiver: AgentId,
    cells: Vec<[usize; 2]>,
}

#[derive(Serialize)]
struct SelectOut {
    objective: f64,
    total_selected: usize,
    pairs: Vec<PairOut>,
    filled_scores: Vec<Vec<f64>>,
}

fn select(a: Select) -> Outcome {
    let maps = parse_score_maps(&read_text(&a.scores)?)
        .map_err(|e| invalid(anyhow!(e).context(format!("{}", a.scores.display()))))?;
    let r = selection::solve_with(&maps, demand(a.demand)?, a.budget, a.ranking.into())
        .map_err(invalid)?;
    let out = SelectOut {
        objective: r.objective,
        total_selected: r.total_selected(),
        pairs: r
            .matrices
            .iter()
            .filter(|(_, m)| m.count() > 0)
            .map(|(&(sender, receiver), m)| PairOut {
                sender,
                receiver,
                cells: m.cells().map(|(r, c)| [r, c]).collect(),
            })
            .collect(),
        filled_scores: r.filled_scores.iter().map(|m| m.values().to_vec()).collect(),
    };
    write_json(a.out.as_deref(), &out)
}

fn encode(a: Encode) -> Outcome {
    let scene = load_scene(&a.scene)?;
    let cb = load_codebook(&a.codebook)?;
    let n = scene.agent_count();
    let (sender, receiver) = (AgentId(a.sender), AgentId(a.receiver));
    if sender == receiver || sender.index() >= n || receiver.index() >= n {
        return Err(invalid(anyhow!(
            "need two distinct agents below {n}, got {} and {}",
            a.sender,
            a.receiver
        )));
    }
    let table = scene.embedding_table();
    let views = (0..n)
        .map(|i| scene.render_agent_view(&table, AgentId(i as u16), a.frame))
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;
    let maps: Vec<_> = views.iter().map(|v| v.scores.clone()).collect();
    let sel = selection::solve_with(&maps, demand(a.demand)?, a.budget, a.ranking.into())
        .map_err(invalid)?;
    let mask = sel
        .matrices
        .get(&(sender, receiver))
        .cloned()
        .unwrap_or_else(|| grid::SelectionMatrix::zeros(maps[0].dims()));
    let sparse = grid::apply_selection(&views[sender.index()].features, &mask).map_err(invalid)?;
    let msg = CodeIndexMessage::encode_sparse(sender, receiver, &sparse, &cb, a.n_r)
        .map_err(invalid)?;
    let bytes = msg.to_bytes();
    write_out(Some(&a.out), &bytes)?;
    println!("entries {} bytes {}", msg.entries().len(), bytes.len());
    Ok(())
}

#[derive(Serialize)]
struct EntryOut {
    row: u16,
    col: u16,
    indices: Vec<u32>,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct DecodeOut {
    sender: AgentId,
    receiver: AgentId,
    height: usize,
    width: usize,
    codebook_id: String,
    n_l: usize,
    n_r: usize,
    bytes: usize,
    entries: Vec<EntryOut>,
}

fn decode(a: Decode) -> Outcome {
    let bytes = read_bytes(&a.message)?;
    let msg = wire::unpack(&bytes)
        .map_err(|e| invalid(anyhow!(e).context(format!("{}", a.message.display()))))?;
    let cb = load_codebook(&a.codebook)?;
    // checks the codebook binding before anything is reconstructed
    bevcomm::fusion::decode_message(&msg, &cb).map_err(invalid)?;
    let entries = msg
        .entries()
        .iter()
        .map(|e| {
            Ok(EntryOut {
                row: e.row,
                col: e.col,
                indices: e.indices.clone(),
                vector: codebook::decode(&e.indices, &cb)?,
            })
        })
        .collect::<Result<Vec<_>, codebook::CodebookError>>()
        .map_err(invalid)?;
    let out = DecodeOut {
        sender: msg.sender(),
        receiver: msg.receiver(),
        height: msg.height(),
        width: msg.width(),
        codebook_id: format!("{:016x}", msg.codebook_id()),
        n_l: msg.codebook_size(),
        n_r: msg.n_r(),
        bytes: bytes.len(),
        entries,
    };
    write_json(a.out.as_deref(), &out)
}

fn round(a: Round) -> Outcome {
    let scene = load_scene(&a.scene)?;
    let cb = a.codebook.as_deref().map(load_codebook).transpose()?;
    let transport = match &cb {
        Some(codebook) => Transport::Codes {
            codebook,
            n_r: a.n_r,
        },
        None => Transport::Raw,
    };
    let config = RoundConfig {
        threshold: a.threshold,
        ranking: a.ranking.into(),
        ..RoundConfig::new(demand(a.demand)?, a.budget).with_perturbation(PerturbationSpec {
            pose_sigma: a.perturb.pose_sigma,
            pose_rot_sigma: a.perturb.pose_rot_sigma,
            latency_frames: a.perturb.latency,
        })
    };
    let report = sim::run_round(&scene, a.frame, &config, transport).map_err(invalid)?;
    write_json(a.out.as_deref(), &report)
}

fn sweep(a: Sweep) -> Outcome {
    let budgets = parse_list("budgets", &a.budgets, parse_budget)?;
    let demands = parse_list("demands", &a.demands, parse_num)?;
    let codebooks = parse_list("codebooks", &a.codebooks, parse_codebook_spec)?;
    let sigmas: Vec<f64> = parse_list("pose-sigmas", &a.pose_sigmas, parse_num)?;
    let latencies: Vec<usize> = parse_list("latencies", &a.latencies, parse_num)?;
    let seeds = parse_seeds(&a.seeds)?;
    let frames = a
        .frames
        .as_deref()
        .map(|f| parse_list("frames", f, parse_num))
        .transpose()?;
    let perturbations = sigmas
        .iter()
        .flat_map(|&pose_sigma| {
            latencies.iter().map(move |&latency_frames| PerturbationSpec {
                pose_sigma,
                pose_rot_sigma: a.pose_rot_sigma,
                latency_frames,
            })
        })
        .collect();
    let doc = load_doc(&a.scenario)?;
    let grid = SweepGrid {
        budgets,
        demands,
        codebooks,
        perturbations,
        seeds,
        frames,
        train_iterations: a.iterations,
        ranking: a.ranking.into(),
    };
    let mut rows = sim::sweep(&doc, &grid).map_err(invalid)?;
    if a.mean {
        rows = sim::mean_by_config(&rows);
    }
    let mut buf = Vec::new();
    sim::write_csv(&rows, &mut buf).map_err(invalid)?;
    write_out(a.out.as_deref(), &buf)
}

fn oracle(a: OracleCheck) -> Outcome {
    if a.instances == 0 {
        return Err(usage(anyhow!("--instances must be at least 1")));
    }
    let limits = OracleLimits {
        max_agents: a.max_agents,
        max_cells: a.max_cells,
        max_budget: a.max_budget,
        ..OracleLimits::default()
    };
    let summary = oracle_check(a.instances, a.seed, &limits, a.ranking.into()).map_err(invalid)?;
    for m in summary.mismatches.iter().take(5) {
        let maps: Vec<&[f64]> = m.instance.maps.iter().map(|s| s.values()).collect();
        println!(
            "mismatch #{}: u={} b={} maps={:?} solver={} optimum={}",
            m.index,
            m.instance.demand.value(),
            m.instance.budget.cells(),
            maps,
            m.solver,
            m.optimum
        );
    }
    let n = summary.mismatches.len();
    println!(
        "instances {} mismatches {} {}",
        summary.instances,
        n,
        if n == 0 { "PASS" } else { "FAIL" }
    );
    if n == 0 {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_MISMATCH,
            error: anyhow!("{n} of {} instances differ from the optimum", summary.instances),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::GenScenario(a) => gen_scenario(a),
        Command::TrainCodebook(a) => train_codebook(a),
        Command::Select(a) => select(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Round(a) => round(a),
        Command::Sweep(a) => sweep(a),
        Command::OracleCheck(a) => oracle(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
