mod config;

use std::fs;
use std::io::{self, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dreamflow::dim::Provenance;
use dreamflow::eval::{metric_row, read_logs, synthetic_logs, write_logs, MetricReport};
use dreamflow::generator::RemoteGenerator;
use dreamflow::imageio::{depth_preview_png, disparity_png, encode_mask_png, label_preview_png};
use dreamflow::pipeline::work::{conditioning_request, segment_seed};
use dreamflow::pipeline::*;
use dreamflow::prompts::{
    parse_prompt_batch, reference_batch, request_prompt_batch, ChatPromptClient, MetaPrompt, OfflinePromptClient,
    PromptClient,
};
use dreamflow::raster::{depth_to_bytes, write_labels};
use dreamflow::scene::{FlatParams, HurdleParams, StairsParams, TerrainKind};
use dreamflow::*;
use nalgebra::Vector3;

use config::{pick, FileConfig};

#[derive(Parser)]
#[command(name = "dreamflow", version, about = "Depth-conditioned frame stacks over procedural terrain")]
struct Cli {
    /// TOML or JSON config file; flags override it.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Depth, label, mask and disparity previews for one camera pose.
    Render(RenderArgs),
    /// One frame stack end to end: render, generate the keyframe, warp.
    Stack(StackArgs),
    /// Prompt pool management.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
    /// Broker, weavers and the offline and on-policy drivers.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Time per-frame generation against keyframe plus warping.
    Bench(BenchArgs),
    /// FGR and x-displacement over rollout logs.
    Eval(EvalArgs),
    /// Print the effective config as TOML.
    Config(TaskArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Terrain {
    Flat,
    Stairs,
    Hurdles,
}

/// Task overrides shared by commands that render.
#[derive(Args, Clone, Default)]
struct TaskArgs {
    /// Replace the configured terrain with this kind at default parameters.
    #[arg(long, value_enum)]
    terrain: Option<Terrain>,
    /// Terrain spec as a JSON file.
    #[arg(long, conflicts_with = "terrain")]
    terrain_file: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use a remote generator at this URL instead of the stub.
    #[arg(long)]
    endpoint: Option<String>,
}

impl TaskArgs {
    fn apply(&self, cfg: &mut TaskConfig) -> Result<()> {
        if let Some(t) = self.terrain {
            let kind = match t {
                Terrain::Flat => TerrainKind::Flat(FlatParams::default()),
                Terrain::Stairs => TerrainKind::Stairs(StairsParams::default()),
                Terrain::Hurdles => TerrainKind::Hurdles(HurdleParams::default()),
            };
            cfg.terrain = TerrainSpec::new(kind);
            cfg.task = cfg.terrain.name().into();
        }
        if let Some(p) = &self.terrain_file {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg.terrain = TerrainSpec::from_json(&text)?;
        }
        if let Some(w) = self.width {
            cfg.camera.width = w;
        }
        if let Some(h) = self.height {
            cfg.camera.height = h;
        }
        if let Some(s) = self.seed {
            cfg.generation.seed = s;
        }
        if let Some(e) = &self.endpoint {
            cfg.generation.generator = GeneratorChoice::Remote;
            cfg.generation.endpoint = Some(e.clone());
        }
        cfg.validate().map_err(|e| anyhow!("invalid config: {e}"))
    }
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Camera position along the lane, meters.
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    #[arg(long, default_value_t = 0.0)]
    y: f64,
    /// Heading, radians.
    #[arg(long, default_value_t = 0.0)]
    yaw: f64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct StackArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    #[arg(long, default_value_t = 0.0)]
    y: f64,
    #[arg(long, default_value_t = 0.0)]
    yaw: f64,
    /// Forward speed, m/s.
    #[arg(long, default_value_t = 0.5)]
    speed: f64,
    /// Turn rate, rad/s.
    #[arg(long, default_value_t = 0.0)]
    yaw_rate: f64,
    /// Prompt pair id from the pool; the first reference pair otherwise.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    pool: Option<PathBuf>,
    /// `mark` or `nearest_valid`.
    #[arg(long)]
    fill: Option<FillStrategy>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Create a pool holding the reference prompt pairs.
    Init {
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Add a batch document to the pool.
    Add {
        #[arg(long)]
        pool: Option<PathBuf>,
        file: PathBuf,
    },
    /// Ask a language model (or the offline stand-in) for a new batch.
    Generate {
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Terrain family named in the meta prompt.
        #[arg(long, default_value = "stairs")]
        site: String,
        /// Use the chat endpoint from the environment.
        #[arg(long)]
        remote: bool,
    },
    /// Print the meta prompt for a site.
    Meta {
        #[arg(long, default_value = "stairs")]
        site: String,
    },
    /// Pool contents and usage counts.
    List {
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Draw pairs with usage balancing and save the counters.
    Sample {
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, short, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone, Default)]
struct PipelineArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Broker address; an in-process broker is used when absent.
    #[arg(long)]
    broker: Option<String>,
    /// Store root directory.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Prompt pool; the reference pairs otherwise.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    weavers: Option<usize>,
    #[arg(long)]
    unroll_workers: Option<usize>,
    #[arg(long)]
    lease_s: Option<f64>,
    /// Write the run report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Serve an in-memory broker over TCP.
    Broker {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
        max_attempts: u32,
    },
    /// Run weave workers (or RPC weavers) against a remote broker.
    Weaver {
        #[command(flatten)]
        args: PipelineArgs,
        /// Serve on-policy RPC requests instead of offline weave jobs.
        #[arg(long)]
        rpc: bool,
    },
    /// One offline iteration: unroll, weave, assemble.
    Offline(PipelineArgs),
    /// On-policy loop with RPC keyframes.
    Onpolicy(PipelineArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    stack_len: Option<usize>,
    /// Injected generation latency, milliseconds.
    #[arg(long)]
    delay_ms: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    terrain: Option<Terrain>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON Lines rollout logs; each file becomes one table row.
    logs: Vec<PathBuf>,
    /// Evaluate this many synthetic logs instead.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the synthetic logs here.
    #[arg(long)]
    write_synthetic: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Render(a) => render(&file, a),
        Command::Stack(a) => stack(&file, a),
        Command::Prompts { command } => prompts(&file, command),
        Command::Pipeline { command } => pipeline(&file, command),
        Command::Bench(a) => bench(&file, a),
        Command::Eval(a) => eval(a),
        Command::Config(a) => {
            let mut out = file.clone();
            a.apply(&mut out.task)?;
            print!("{}", toml::to_string(&out)?);
            Ok(())
        }
    }
}

fn task_config(file: &FileConfig, args: &TaskArgs) -> Result<TaskConfig> {
    let mut cfg = file.task.clone();
    args.apply(&mut cfg)?;
    Ok(cfg)
}

fn make_generator(cfg: &GenerationConfig) -> Result<Arc<dyn Generator>> {
    Ok(match cfg.generator {
        GeneratorChoice::Stub => Arc::new(StubGenerator::default()),
        GeneratorChoice::Remote => match &cfg.endpoint {
            Some(url) => Arc::new(RemoteGenerator::new(url.clone(), None, Duration::from_secs_f64(cfg.timeout_s))),
            None => Arc::new(RemoteGenerator::from_env()?),
        },
    })
}

fn camera_pose(scene: &scene::SceneGeometry, cfg: &TaskConfig, x: f64, y: f64, yaw: f64) -> Pose {
    let ground = scene.height_at(x, y).unwrap_or(0.0);
    Pose::from_euler(Vector3::new(x, y, ground + cfg.camera.mount_height), yaw, cfg.camera.pitch, 0.0)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::write(dir.join(name), bytes).with_context(|| format!("writing {}", dir.join(name).display()))
}

fn render(file: &FileConfig, a: RenderArgs) -> Result<()> {
    let cfg = task_config(file, &a.task)?;
    let scene = build_terrain(&cfg.terrain)?;
    let k = cfg.camera.intrinsics()?;
    let pose = camera_pose(&scene, &cfg, a.x, a.y, a.yaw);
    let (depth, labels) = raycast(&scene, &k, &pose, cfg.clip.render_near, cfg.clip.render_far)?;
    let clipped = clip_depth(&depth, cfg.clip.conditioning_near as f32, cfg.clip.conditioning_far as f32)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out, "depth.png", &depth_preview_png(&depth)?)?;
    write(&a.out, "depth.bin", &depth_to_bytes(&depth, &pose, &k))?;
    write(&a.out, "labels.png", &label_preview_png(&labels)?)?;
    let mut lb = Vec::new();
    write_labels(&mut lb, &labels, cfg.clip.render_near, cfg.clip.render_far, &pose, &k)?;
    write(&a.out, "labels.bin", &lb)?;
    write(&a.out, "disparity.png", &disparity_png(&normalize_disparity(&clipped))?)?;
    for (label, mask) in binary_masks(&labels) {
        write(&a.out, &format!("mask_{label}.png"), &encode_mask_png(&mask)?)?;
    }
    println!("{}x{} render of {} at ({:.2}, {:.2}) written to {}", k.width, k.height, cfg.terrain.name(), a.x, a.y, a.out.display());
    Ok(())
}

fn load_prompts(file: &FileConfig, pool: &Option<PathBuf>) -> Result<Vec<PromptPair>> {
    match pick(pool, &file.paths.pool) {
        Some(dir) => {
            let pool = PromptPool::load(&dir).with_context(|| format!("loading pool {}", dir.display()))?;
            if pool.is_empty() {
                bail!("prompt pool {} is empty", dir.display());
            }
            Ok(pool.pairs().cloned().collect())
        }
        None => Ok(reference_batch().pairs),
    }
}

fn stack(file: &FileConfig, a: StackArgs) -> Result<()> {
    let mut cfg = task_config(file, &a.task)?;
    if let Some(f) = a.fill {
        cfg.fill = f;
    }
    let scene = build_terrain(&cfg.terrain)?;
    let k = cfg.camera.intrinsics()?;
    let prompts = load_prompts(file, &a.pool)?;
    let prompt = match &a.prompt {
        Some(id) => prompts.iter().find(|p| &p.id == id).ok_or_else(|| anyhow!("no prompt pair `{id}`"))?.clone(),
        None => prompts[0].clone(),
    };
    let traj = ScriptedTrajectory {
        id: "cli".into(),
        start: [a.x, a.y],
        yaw: a.yaw,
        speed: a.speed,
        yaw_rate: a.yaw_rate,
        steps: cfg.stack_len,
    };
    let mut renders = Vec::new();
    let mut key_labels = None;
    for pose in traj.poses(&scene, &cfg.camera) {
        let (depth, labels) = raycast(&scene, &k, &pose, cfg.clip.render_near, cfg.clip.render_far)?;
        key_labels.get_or_insert(labels);
        renders.push(FrameRender { depth, pose });
    }
    let seed = segment_seed(cfg.generation.seed, &traj.id, 0);
    let request = conditioning_request(&cfg, &renders[0].depth, key_labels.as_ref().expect("one frame"), &prompt, seed)?;
    let view = ViewContext { terrain: cfg.terrain.clone(), pose: renders[0].pose, intrinsics: k };
    let generator = make_generator(&cfg.generation)?;
    let image = generator.generate(&request, Some(&view))?;
    let provenance = Provenance {
        scene_id: cfg.terrain.name().into(),
        prompt_id: prompt.id.clone(),
        generator_seed: seed,
        trajectory_id: Some(traj.id.clone()),
        segment_index: Some(0),
    };
    let stack = assemble_stack(&image.rgb, &renders, &k, cfg.fill, provenance)?;
    stack.write_dir(&a.out)?;
    println!(
        "{} frames, hole fraction {:.4}, keyframe in {:.1} ms, written to {}",
        stack.len(),
        stack.hole_fraction(),
        image.latency_ms,
        a.out.display()
    );
    Ok(())
}

fn pool_dir(file: &FileConfig, pool: &Option<PathBuf>) -> Result<PathBuf> {
    pick(pool, &file.paths.pool).ok_or_else(|| anyhow!("no prompt pool: pass --pool or set paths.pool"))
}

fn open_pool(dir: &Path) -> Result<PromptPool> {
    if dir.join("batches").exists() {
        Ok(PromptPool::load(dir)?)
    } else {
        Ok(PromptPool::new())
    }
}

fn prompts(file: &FileConfig, cmd: PromptsCommand) -> Result<()> {
    match cmd {
        PromptsCommand::Init { pool } => {
            let dir = pool_dir(file, &pool)?;
            let mut p = open_pool(&dir)?;
            p.add_batch(reference_batch())?;
            p.save(&dir)?;
            println!("{} pairs in {}", p.len(), dir.display());
        }
        PromptsCommand::Add { pool, file: batch_file } => {
            let dir = pool_dir(file, &pool)?;
            let batch = parse_prompt_batch(&fs::read_to_string(&batch_file)?)?;
            let n = batch.len();
            let mut p = open_pool(&dir)?;
            p.add_batch(batch)?;
            p.save(&dir)?;
            println!("added {n} pairs, {} in pool", p.len());
        }
        PromptsCommand::Generate { pool, site, remote } => {
            let dir = pool_dir(file, &pool)?;
            let meta = MetaPrompt::for_site(&site).render();
            let client: Box<dyn PromptClient> =
                if remote { Box::new(ChatPromptClient::from_env()?) } else { Box::new(OfflinePromptClient) };
            let fetched = request_prompt_batch(client.as_ref(), &meta)?;
            for w in &fetched.warnings {
                eprintln!("warning: {w}");
            }
            let n = fetched.batch.len();
            let id = fetched.batch.meta_prompt_id.clone();
            let mut p = open_pool(&dir)?;
            p.add_batch(fetched.batch)?;
            p.save(&dir)?;
            println!("batch {id}: {n} pairs, {} in pool", p.len());
        }
        PromptsCommand::Meta { site } => print!("{}", MetaPrompt::for_site(&site).render()),
        PromptsCommand::List { pool } => {
            let p = PromptPool::load(&pool_dir(file, &pool)?)?;
            let mut out = io::stdout().lock();
            for pair in p.pairs() {
                writeln!(out, "{:>6}  {}  {}", p.usage(&pair.id).unwrap_or(0), pair.id, pair.foreground)?;
            }
        }
        PromptsCommand::Sample { pool, n, seed } => {
            let dir = pool_dir(file, &pool)?;
            let mut p = PromptPool::load(&dir)?;
            for i in 0..n {
                let pair = p.sample(seed.wrapping_add(i as u64))?;
                println!("{}", serde_json::to_string(&pair)?);
            }
            p.save(&dir)?;
        }
    }
    Ok(())
}

fn pipeline_config(file: &FileConfig, a: &PipelineArgs) -> Result<TaskConfig> {
    let mut cfg = file.task.clone();
    if let Some(n) = a.trajectories {
        cfg.trajectories.count = n;
    }
    if let Some(n) = a.steps {
        cfg.trajectories.steps = n;
    }
    if let Some(n) = a.weavers {
        cfg.workers.weavers = n;
    }
    if let Some(n) = a.unroll_workers {
        cfg.workers.unroll_workers = n;
    }
    if let Some(l) = a.lease_s {
        cfg.workers.lease_s = l;
    }
    a.task.apply(&mut cfg)?;
    Ok(cfg)
}

fn connect(file: &FileConfig, a: &PipelineArgs, max_attempts: u32) -> Result<Arc<dyn Broker>> {
    Ok(match pick(&a.broker, &file.paths.broker).or_else(|| std::env::var(ENV_BROKER_ADDR).ok()) {
        Some(addr) => Arc::new(TcpBroker::connect(addr.as_str())?),
        None => Arc::new(MemoryBroker::new(max_attempts)),
    })
}

fn open_store(file: &FileConfig, a: &PipelineArgs) -> Result<Arc<dyn Store>> {
    let root = pick(&a.store, &file.paths.store)
        .or_else(|| std::env::var(ENV_STORE_ROOT).ok().map(PathBuf::from))
        .ok_or_else(|| anyhow!("no store: pass --store, set paths.store or {ENV_STORE_ROOT}"))?;
    Ok(Arc::new(FsStore::open(root)?))
}

fn write_report<T: serde::Serialize>(path: &Option<PathBuf>, report: &T) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, serde_json::to_string_pretty(report)?)?;
    }
    Ok(())
}

fn wait_for_ctrl_c() -> ! {
    loop {
        thread::park();
    }
}

fn pipeline(file: &FileConfig, cmd: PipelineCommand) -> Result<()> {
    match cmd {
        PipelineCommand::Broker { listen, max_attempts } => {
            let server = BrokerServer::bind(listen.as_str(), Arc::new(MemoryBroker::new(max_attempts)))?;
            println!("broker listening on {}", server.local_addr());
            server.join();
            Ok(())
        }
        PipelineCommand::Weaver { args, rpc } => {
            let cfg = pipeline_config(file, &args)?;
            if args.broker.is_none() && file.paths.broker.is_none() && std::env::var(ENV_BROKER_ADDR).is_err() {
                bail!("weavers need a broker: pass --broker, set paths.broker or {ENV_BROKER_ADDR}");
            }
            let broker = connect(file, &args, cfg.workers.max_attempts)?;
            let generator = make_generator(&cfg.generation)?;
            if rpc {
                let _weavers = RpcWeavers::spawn(cfg.workers.weavers, broker, generator);
                println!("{} rpc weavers running", cfg.workers.weavers);
                wait_for_ctrl_c();
            }
            let store = open_store(file, &args)?;
            let mut template = WeaverOptions::new("weaver", Duration::from_secs_f64(cfg.workers.lease_s));
            template.conditioning_clip = (cfg.clip.conditioning_near, cfg.clip.conditioning_far);
            // runs until killed
            let stop = AtomicBool::new(false);
            let stats = WeaverStats::default();
            thread::scope(|s| {
                for i in 0..cfg.workers.weavers.max(1) {
                    let (broker, generator, store, stats, stop) = (&broker, &generator, &store, &stats, &stop);
                    let opts = WeaverOptions { worker_id: format!("weaver-{i}"), ..template.clone() };
                    s.spawn(move || run_weaver(&**broker, &**generator, &**store, &opts, stats, stop));
                }
            });
            Ok(())
        }
        PipelineCommand::Offline(args) => {
            let cfg = pipeline_config(file, &args)?;
            let prompts = load_prompts(file, &args.pool)?;
            let remote = args.broker.is_some() || file.paths.broker.is_some();
            let broker = connect(file, &args, cfg.workers.max_attempts)?;
            let store = open_store(file, &args)?;
            let mut opts = OfflineOptions::with_generator(make_generator(&cfg.generation)?);
            if remote {
                // weavers run elsewhere
                opts.generator = None;
            }
            let report = run_offline_batch(&cfg, &prompts, broker, store, &opts)?;
            println!(
                "{}: {} trajectories, {} weave jobs, {} stacks, mean hole fraction {:.4}, {:.1} s",
                report.task, report.trajectories, report.weave_jobs, report.stacks, report.hole_fraction, report.wall_time_s
            );
            for p in &report.parked {
                eprintln!("parked: {p}");
            }
            for m in &report.missing {
                eprintln!("missing: {m}");
            }
            write_report(&args.report, &report)?;
            if !report.complete() {
                bail!("{} parked jobs, {} missing stacks", report.parked.len(), report.missing.len());
            }
            Ok(())
        }
        PipelineCommand::Onpolicy(args) => {
            let cfg = pipeline_config(file, &args)?;
            let prompts = load_prompts(file, &args.pool)?;
            let remote = args.broker.is_some() || file.paths.broker.is_some();
            let broker = connect(file, &args, cfg.workers.max_attempts)?;
            let store = open_store(file, &args)?;
            let _local = (!remote)
                .then(|| make_generator(&cfg.generation).map(|g| RpcWeavers::spawn(cfg.workers.weavers, broker.clone(), g)))
                .transpose()?;
            let report = run_onpolicy_loop(&cfg, &prompts, broker, store)?;
            println!(
                "{}: {} trajectories, {} rpc calls, {} stacks, {} flagged segments, {:.1} s",
                report.task,
                report.trajectories,
                report.rpc_calls,
                report.stacks,
                report.flagged().count(),
                report.wall_time_s
            );
            for s in report.flagged() {
                eprintln!("{}/{}: {:?}", s.trajectory_id, s.segment, s.status);
            }
            write_report(&args.report, &report)?;
            Ok(())
        }
    }
}

fn bench(file: &FileConfig, a: BenchArgs) -> Result<()> {
    let mut cfg = file.bench.clone();
    if let Some(w) = a.width {
        cfg.width = w;
    }
    if let Some(h) = a.height {
        cfg.height = h;
    }
    if let Some(n) = a.stack_len {
        cfg.stack_len = n;
    }
    if let Some(d) = a.delay_ms {
        cfg.delay_ms = d;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(t) = a.terrain {
        cfg.terrain = match t {
            Terrain::Flat => TerrainSpec::flat(),
            Terrain::Stairs => TerrainSpec::stairs(StairsParams::default()),
            Terrain::Hurdles => TerrainSpec::hurdles(HurdleParams::default()),
        };
    }
    let report = bench_dim(&cfg).map_err(|e| anyhow!(e))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut report = MetricReport::default();
    if let Some(n) = a.synthetic {
        let logs = synthetic_logs(n, a.seed);
        if let Some(p) = &a.write_synthetic {
            fs::write(p, write_logs(&logs))?;
        }
        report.rows.push(metric_row("synthetic", &logs)?);
    }
    for path in &a.logs {
        let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let logs = read_logs(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        report.rows.push(metric_row(&name, &logs)?);
    }
    if report.rows.is_empty() {
        bail!("nothing to evaluate: pass log files or --synthetic N");
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}
