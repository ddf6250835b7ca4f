use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dsg_core::completion::{completion_win_rates, CompletionMode};
use dsg_core::config::{RewardKind, RunConfig};
use dsg_core::data::{load_checkpoint, load_corpus, load_corpus_with, parse_corpora, save_checkpoint, save_corpus, synth_generate, Preset, SynthSpec};
use dsg_core::denoiser::{train, Checkpoint, ReferenceNetwork};
use dsg_core::graph::{serialize_graph, to_dot, GraphRecord};
use dsg_core::metrics::{evaluate, graph_layout, Metric};
use dsg_core::refine::RefinementPlan;
use dsg_core::reverse::{chain_rng, sample_batch};
use dsg_core::reward::{EmbeddingClient, EmbeddingReward, LexicalReward, Reward};
use dsg_core::smc::{smc_sample, SmcStep};
use dsg_core::{validate, Error, NoiseSchedule, SceneGraphState, Vocabulary};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Core { context: String, source: Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core { source: Error::DivergedLoss(_), .. } => 4,
            CliError::Core { .. } => 3,
        }
    }
}

trait Context<T> {
    fn context(self, what: impl std::fmt::Display) -> Result<T, CliError>;
}

impl<T, E: Into<Error>> Context<T> for Result<T, E> {
    fn context(self, what: impl std::fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Core { context: what.to_string(), source: e.into() })
    }
}

#[derive(Parser)]
#[command(name = "dsg", version, about = "Discrete diffusion over scene graphs")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    LongTailed,
    Deterministic,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    Lexical,
    Embed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Object,
    Relation,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic corpus and write its exact statistics next to it.
    Synth {
        /// Spec file (TOML, or JSON by extension). Falls back to the config's
        /// `synth` block, then to the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "long-tailed")]
        preset: PresetArg,
        #[arg(long, default_value_t = 6)]
        objects: usize,
        #[arg(long, default_value_t = 8)]
        relations: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the reference network; prints one JSON line per epoch.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Unconditional samples as JSONL.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Directory receiving one DOT file per graph.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Node count for every graph instead of the training histogram.
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        no_refine: bool,
        #[arg(long)]
        allow_untrained: bool,
    },
    /// Reward-tilted sampling toward a text prompt.
    Condition {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_enum)]
        reward: Option<RewardArg>,
        /// Use the lexical reward when the embedding service fails.
        #[arg(long)]
        fallback: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        no_refine: bool,
        #[arg(long)]
        allow_untrained: bool,
    },
    /// Single-entity completion win rates.
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "object")]
        mode: ModeArg,
        #[arg(long = "n-list", value_delimiter = ',', default_value = "1,5,10")]
        n_list: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_untrained: bool,
    },
    /// Metric report comparing two corpora.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Comma-separated metric names; defaults to every applicable one.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).context(format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    let seed = cli.seed;
    match cli.command {
        Command::Synth { spec, preset, objects, relations, n, out } => {
            let spec = match spec {
                Some(p) => read_spec(&p)?,
                None => cfg.synth.clone().unwrap_or_else(|| {
                    let preset = match preset {
                        PresetArg::LongTailed => Preset::LongTailed,
                        PresetArg::Deterministic => Preset::Deterministic,
                        PresetArg::Uniform => Preset::Uniform,
                    };
                    SynthSpec::preset(preset, objects, relations)
                }),
            };
            cmd_synth(&spec, n, &out, seed)
        }
        Command::Train { corpus, out, epochs, max_steps } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if max_steps.is_some() {
                cfg.train.max_steps = max_steps;
            }
            cmd_train(&cfg, &corpus, &out, seed)
        }
        Command::Sample { ckpt, n, out, dot, nodes, no_refine, allow_untrained } => {
            let model = Model::load(&ckpt, allow_untrained)?;
            let plan = plan(&cfg, &model, no_refine);
            let counts = node_counts(&model, nodes, n, seed)?;
            let graphs = sample_batch(&model.net, &model.schedule, &counts, seed, plan.as_ref(), &cfg.sampler).context("sampling")?;
            write_graphs(&graphs, &model.vocab, &out, dot.as_deref())
        }
        Command::Condition { ckpt, prompt, particles, beta, reward, fallback, out, dot, nodes, no_refine, allow_untrained } => {
            let model = Model::load(&ckpt, allow_untrained)?;
            let mut smc = cfg.smc.clone();
            smc.particles = particles.unwrap_or(smc.particles);
            smc.beta = beta.unwrap_or(smc.beta);
            let kind = match reward {
                Some(RewardArg::Lexical) => RewardKind::Lexical,
                Some(RewardArg::Embed) => RewardKind::Embed,
                None => cfg.reward.kind,
            };
            let reward = build_reward(&cfg, kind, fallback || cfg.reward.fallback, &prompt, &model.vocab)?;
            let plan = plan(&cfg, &model, no_refine);
            let n_nodes = node_counts(&model, nodes, 1, seed)?[0];
            let result = smc_sample(&model.net, &model.schedule, reward.as_ref(), &smc, n_nodes, plan.as_ref(), &cfg.sampler, &mut chain_rng(seed, 0))
                .context("conditioned sampling")?;
            check_valid(&result.graph, &model.vocab)?;
            #[derive(Serialize)]
            struct Output<'a> {
                graph: GraphRecord,
                text: String,
                reward: f64,
                trace: &'a [SmcStep],
            }
            let output = Output {
                graph: GraphRecord::from_state(&result.graph, &model.vocab).context("encoding graph")?,
                text: serialize_graph(&result.graph, &model.vocab).context("encoding graph")?,
                reward: result.reward,
                trace: &result.trace,
            };
            write_json(&output, Some(&out))?;
            if let Some(dir) = dot {
                write_dot(&[result.graph], &model.vocab, &dir)?;
            }
            Ok(())
        }
        Command::Complete { ckpt, corpus, mode, n_list, out, allow_untrained } => {
            let model = Model::load(&ckpt, allow_untrained)?;
            let graphs = load_corpus_with(&corpus, &model.vocab, cfg.data.symmetric).context(format!("corpus {}", corpus.display()))?;
            let mode = match mode {
                ModeArg::Object => CompletionMode::Object,
                ModeArg::Relation => CompletionMode::Relation,
            };
            if n_list.is_empty() || n_list.contains(&0) {
                return Err(CliError::Usage("--n-list needs positive integers".into()));
            }
            let report = completion_win_rates(&model.net, &model.schedule, &graphs, mode, &n_list, &cfg.sampler, seed).context("completion")?;
            write_json(&report, out.as_deref())
        }
        Command::Eval { generated, reference, metrics, out } => cmd_eval(&cfg, &generated, &reference, metrics, out.as_deref()),
    }
}

fn read_spec(path: &Path) -> Result<SynthSpec, CliError> {
    let text = fs::read_to_string(path).context(format!("spec {}", path.display()))?;
    let spec: SynthSpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).context(format!("spec {}", path.display()))?
    } else {
        toml::from_str(&text).map_err(|e| Error::InconsistentSpec(e.to_string())).context(format!("spec {}", path.display()))?
    };
    Ok(spec)
}

fn stats_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".stats.json");
    PathBuf::from(name)
}

fn cmd_synth(spec: &SynthSpec, n: usize, out: &Path, seed: u64) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (vocab, graphs, stats) = synth_generate(spec, n, &mut rng).context("synthetic spec")?;
    save_corpus(out, &graphs, &vocab).context(format!("writing {}", out.display()))?;
    let stats_file = stats_path(out);
    fs::write(&stats_file, serde_json::to_string_pretty(&stats).context("statistics")? + "\n").context(format!("writing {}", stats_file.display()))?;
    log::info!("wrote {n} graphs to {}", out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, corpus: &Path, out: &Path, seed: u64) -> Result<(), CliError> {
    let (vocab, graphs) = load_corpus(corpus, cfg.data.symmetric).context(format!("corpus {}", corpus.display()))?;
    let schedule = NoiseSchedule::build(&cfg.schedule, &vocab).context("schedule")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ckpt = train(&graphs, &vocab, &schedule, &cfg.train, &cfg.model, &mut rng, |report| {
        println!("{}", serde_json::to_string(report).expect("epoch report serializes"));
    })
    .context("training")?;
    save_checkpoint(&ckpt, out).context(format!("writing {}", out.display()))
}

struct Model {
    ckpt: Checkpoint,
    vocab: Vocabulary,
    schedule: NoiseSchedule,
    net: ReferenceNetwork,
}

impl Model {
    fn load(path: &Path, allow_untrained: bool) -> Result<Self, CliError> {
        let what = format!("checkpoint {}", path.display());
        let ckpt = load_checkpoint(path, None).context(&what)?;
        let vocab = ckpt.header.vocab.clone();
        let schedule = NoiseSchedule::build(&ckpt.header.schedule, &vocab).context(&what)?;
        let net = ckpt.network().context(&what)?.allow_untrained(allow_untrained);
        Ok(Model { ckpt, vocab, schedule, net })
    }
}

fn plan(cfg: &RunConfig, model: &Model, no_refine: bool) -> Option<RefinementPlan> {
    if no_refine {
        return None;
    }
    Some(cfg.refinement.clone().unwrap_or_else(|| RefinementPlan::default_for(model.schedule.steps())))
}

/// Node counts drawn from the training histogram on a stream no sampling
/// chain uses.
fn node_counts(model: &Model, fixed: Option<usize>, n: usize, seed: u64) -> Result<Vec<usize>, CliError> {
    if let Some(k) = fixed {
        if k == 0 {
            return Err(CliError::Usage("--nodes must be at least 1".into()));
        }
        return Ok(vec![k; n]);
    }
    let hist = &model.ckpt.header.node_counts;
    let law = WeightedIndex::new(hist.iter().enumerate().map(|(k, &c)| if k == 0 { 0 } else { c }))
        .map_err(|_| CliError::Usage("checkpoint carries no node-count histogram; pass --nodes".into()))?;
    let mut rng = chain_rng(seed, u64::MAX);
    Ok((0..n).map(|_| law.sample(&mut rng)).collect())
}

fn build_reward(cfg: &RunConfig, kind: RewardKind, fallback: bool, prompt: &str, vocab: &Vocabulary) -> Result<Box<dyn Reward>, CliError> {
    match kind {
        RewardKind::Lexical => Ok(Box::new(LexicalReward::new(prompt, vocab))),
        RewardKind::Embed => {
            let timeout = Duration::from_secs_f64(cfg.reward.timeout_secs);
            let client = match &cfg.reward.url {
                Some(url) => Ok(EmbeddingClient::new(url, timeout)),
                None => EmbeddingClient::from_env(timeout),
            };
            match client {
                Ok(c) => Ok(Box::new(EmbeddingReward::new(c, prompt, vocab, fallback))),
                Err(e) if fallback => {
                    log::warn!("{e}; using lexical reward");
                    Ok(Box::new(LexicalReward::new(prompt, vocab)))
                }
                Err(e) => Err(e).context("embedding reward"),
            }
        }
    }
}

fn check_valid(g: &SceneGraphState, vocab: &Vocabulary) -> Result<(), CliError> {
    let report = validate(g, vocab);
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidState(report)).context("sampled graph")
    }
}

fn write_graphs(graphs: &[SceneGraphState], vocab: &Vocabulary, out: &Path, dot: Option<&Path>) -> Result<(), CliError> {
    for g in graphs {
        check_valid(g, vocab)?;
    }
    save_corpus(out, graphs, vocab).context(format!("writing {}", out.display()))?;
    if let Some(dir) = dot {
        write_dot(graphs, vocab, dir)?;
    }
    Ok(())
}

fn write_dot(graphs: &[SceneGraphState], vocab: &Vocabulary, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).context(format!("creating {}", dir.display()))?;
    for (k, g) in graphs.iter().enumerate() {
        let path = dir.join(format!("graph_{k:05}.dot"));
        fs::write(&path, to_dot(g, vocab)).context(format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context("encoding output")? + "\n";
    match out {
        Some(p) => fs::write(p, text).context(format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(cfg: &RunConfig, generated: &Path, reference: &Path, metrics: Option<Vec<String>>, out: Option<&Path>) -> Result<(), CliError> {
    let metrics = match metrics {
        Some(names) => {
            let mut list = Vec::new();
            for name in names {
                let m = Metric::parse(name.trim()).ok_or_else(|| {
                    let known: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
                    CliError::Usage(format!("unknown metric {name:?}; expected one of {}", known.join(", ")))
                })?;
                if !list.contains(&m) {
                    list.push(m);
                }
            }
            Some(list)
        }
        None => None,
    };
    let read = |p: &Path| fs::read_to_string(p).context(format!("reading {}", p.display()));
    let (gen_text, ref_text) = (read(generated)?, read(reference)?);
    let (vocab, mut sets) = parse_corpora(&[&gen_text, &ref_text], cfg.data.symmetric).context("corpora")?;
    let reference_set = sets.pop().unwrap();
    let generated_set = sets.pop().unwrap();
    let metrics = metrics.unwrap_or_else(|| {
        let boxed = generated_set.iter().chain(&reference_set).all(|g| graph_layout(g).is_some());
        Metric::ALL.into_iter().filter(|m| boxed || !m.name().starts_with("f1_")).collect()
    });
    let report = evaluate(&generated_set, &reference_set, &vocab, &metrics, &cfg.eval).context("evaluation")?;
    write_json(&report, out)
}
