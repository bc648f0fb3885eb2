use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};

use dualstream::bench::run_bench;
use dualstream::composite::{unpack, CompositeFrame, Packer, Quadrant, QuadrantFrames};
use dualstream::config::{self, Config};
use dualstream::depthcodec::{build_lut, decode_depth, decode_depth_metric, encode_depth, ColorizationParams};
use dualstream::geometry::{intrinsics_from_fov, Pose};
use dualstream::pnm;
use dualstream::pointcloud::{export_ply, reconstruct_hologram_metric};
use dualstream::scene::Scene;
use dualstream::session::{parse_events, simulate, MetricsReport, SessionScript};

#[derive(Parser)]
#[command(name = "dualstream", version, about = "Dual RGB-D stream codec, compositor and session simulator")]
struct Cli {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream of a run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for multi-file outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    #[value(name = "self")]
    SelfView,
    Env,
}

#[derive(Subcommand)]
enum Command {
    /// Colorize a 16-bit PGM depth map into a PPM.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Turn a colorized PPM back into a 16-bit PGM depth map (millimeters).
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Pack up to four PPM sub-frames into a composite (.dscf).
    Pack {
        #[arg(long)]
        self_color: Option<PathBuf>,
        #[arg(long)]
        self_depth: Option<PathBuf>,
        #[arg(long)]
        env_color: Option<PathBuf>,
        #[arg(long)]
        env_depth: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        timestamp_us: u64,
        #[arg(long, default_value_t = 0)]
        seq: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Split a composite into PPM files plus a header summary.
    Unpack { input: PathBuf },
    /// Reconstruct the self or environment hologram of a composite as PLY.
    Reconstruct {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "env")]
        which: Which,
        /// Camera pose in the anchor frame: x,y,z or x,y,z,qw,qx,qy,qz.
        #[arg(long, default_value = "0,0,0")]
        pose: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a session script and write its report and artifacts.
    Simulate { script: PathBuf },
    /// Re-derive a simulation report from its events.log and state_digest.txt.
    Report { dir: PathBuf },
    /// Measure pipeline throughput on synthetic frames.
    Bench {
        #[arg(long, default_value = "640x480")]
        resolution: String,
        #[arg(long, default_value_t = 100)]
        iterations: u64,
    },
    /// Render a built-in scene to color.ppm and depth.pgm.
    Synth {
        /// ramp[:near:far], flatwall:<m>, sphere[:radius:distance], step[:near:far]
        scene: String,
        #[arg(long, default_value = "160x120")]
        resolution: String,
        #[arg(long, default_value_t = 60.0)]
        hfov: f64,
        #[arg(long, default_value_t = 45.0)]
        vfov: f64,
    },
}

/// A failure with its exit code: 2 for bad input, 1 for anything else.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn input(self, what: impl Display) -> Result<T, Failure>;
    fn runtime(self, what: impl Display) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into().context(what.to_string()) })
    }

    fn runtime(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into().context(what.to_string()) })
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, Failure> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = fs::read_to_string(p).input(format!("reading {}", p.display()))?;
            text.parse::<Config>().input(format!("parsing {}", p.display()))
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).runtime(format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).runtime(format!("writing {}", path.display()))
}

fn parse_resolution(text: &str) -> Result<(u32, u32), Failure> {
    text.split_once('x')
        .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
        .ok_or_else(|| anyhow!("expected WIDTHxHEIGHT, got {text:?}"))
        .input("resolution")
}

fn parse_pose(text: &str) -> Result<Pose, Failure> {
    if let Some([x, y, z]) = config::parse_floats::<3>(text) {
        return Ok(Pose::from_translation(x, y, z));
    }
    let [x, y, z, qw, qx, qy, qz] = config::parse_floats::<7>(text)
        .ok_or_else(|| anyhow!("expected x,y,z or x,y,z,qw,qx,qy,qz, got {text:?}"))
        .input("pose")?;
    Pose::from_components([x, y, z], [qw, qx, qy, qz]).input("pose")
}

fn read_composite(path: &Path) -> Result<CompositeFrame, Failure> {
    let bytes = fs::read(path).input(format!("reading {}", path.display()))?;
    CompositeFrame::parse(&bytes).input(format!("parsing {}", path.display()))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

/// Session defaults from a config file: `state.*` and `av.*` keys configure
/// the links, `degrade.*` the degradation model, `fps` the capture rate.
/// Keys under `prefix`, with the prefix stripped.
fn section(cfg: &Config, prefix: &str) -> Config {
    let mut sub = Config::default();
    for (k, v) in cfg.iter() {
        if let Some(rest) = k.strip_prefix(prefix) {
            sub.set(rest, v);
        }
    }
    sub
}

/// Colorization of one stream: its profile defaults, overridden by
/// `self.*` or `env.*` keys.
fn stream_params(cfg: &Config, stream: &str) -> Result<ColorizationParams, Failure> {
    let mut sub = section(cfg, &format!("{stream}."));
    sub.set("profile", stream);
    config::colorization_params(&sub).input(format!("{stream} colorization config"))
}

fn session_defaults(cfg: &Config) -> Result<SessionScript, Failure> {
    let mut s = SessionScript::default();
    let section = |prefix: &str| section(cfg, prefix);
    s.state_link = s.state_link.with_config(&section("state.")).input("config")?;
    s.av_link = s.av_link.with_config(&section("av.")).input("config")?;
    let degrade = section("degrade.");
    s.degradation = s.degradation.with_config(&degrade).input("config")?;
    s.degradation_seed = degrade.get_or("seed", s.degradation_seed).input("config")?;
    s.fps = cfg.get_or("fps", s.fps).input("config")?;
    Ok(s)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.config)?;
    match &cli.command {
        Command::Encode { input, output } => {
            let params = config::colorization_params(&cfg).input("colorization config")?;
            let lut = build_lut(&params).input("colorization config")?;
            let depth = pnm::read_pgm(input).input(format!("reading {}", input.display()))?;
            write(output, &pnm::ppm_bytes(&encode_depth(&depth, &lut)))?;
        }
        Command::Decode { input, output } => {
            let params = config::colorization_params(&cfg).input("colorization config")?;
            let lut = build_lut(&params).input("colorization config")?;
            let color = pnm::read_ppm(input).input(format!("reading {}", input.display()))?;
            write(output, &pnm::pgm_bytes(&decode_depth(&color, &lut)))?;
        }
        Command::Pack { self_color, self_depth, env_color, env_depth, timestamp_us, seq, output } => {
            let read = |p: &Option<PathBuf>| -> Result<_, Failure> {
                p.as_ref().map(|p| pnm::read_ppm(p).input(format!("reading {}", p.display()))).transpose()
            };
            let frames = QuadrantFrames {
                self_color: read(self_color)?,
                self_depth: read(self_depth)?,
                env_color: read(env_color)?,
                env_depth: read(env_depth)?,
            };
            let packer = Packer {
                self_depth_digest: stream_params(&cfg, "self")?.digest(),
                env_depth_digest: stream_params(&cfg, "env")?.digest(),
                ..Packer::default()
            };
            let frame = packer.pack(&frames, *timestamp_us, *seq).input("packing")?;
            write(output, &frame.serialize())?;
        }
        Command::Unpack { input } => {
            let frame = read_composite(input)?;
            let parts = unpack(&frame).input("unpacking")?;
            let dir = out_dir(cli);
            let mut header = format!("seq={}\ntimestamp_us={}\n", parts.seq, parts.timestamp_us);
            for q in Quadrant::ALL {
                let info = frame.info(q);
                header += &format!("{}={}\n", q.name(), if info.present { format!("{}x{}", info.width, info.height) } else { "absent".into() });
                if let Some(f) = parts.frames.get(q) {
                    write(&dir.join(format!("{}.ppm", q.name())), &pnm::ppm_bytes(f))?;
                }
            }
            write(&dir.join("header.txt"), header.as_bytes())?;
            print!("{header}");
        }
        Command::Reconstruct { input, which, pose, output } => {
            let frame = read_composite(input)?;
            let parts = unpack(&frame).input("unpacking")?;
            let (cq, dq, profile) = match which {
                Which::SelfView => (Quadrant::SelfColor, Quadrant::SelfDepth, "self"),
                Which::Env => (Quadrant::EnvColor, Quadrant::EnvDepth, "env"),
            };
            let (Some(color), Some(depth)) = (parts.frames.get(cq), parts.frames.get(dq)) else {
                return Err(anyhow!("composite lacks {} or {}", cq.name(), dq.name())).input("reconstructing");
            };
            let params = stream_params(&cfg, profile)?;
            if frame.info(dq).params_digest != params.digest() {
                return Err(anyhow!("{} was encoded with different colorization parameters", dq.name())).input("reconstructing");
            }
            let k = if cfg.contains("width") {
                config::intrinsics(&cfg).input("intrinsics config")?
            } else {
                let hfov = cfg.get_or("hfov_deg", 60.0).input("intrinsics config")?;
                let vfov = cfg.get_or("vfov_deg", 45.0).input("intrinsics config")?;
                intrinsics_from_fov(hfov, vfov, color.width, color.height).input("intrinsics config")?
            };
            let lut = build_lut(&params).input("colorization config")?;
            let metric = decode_depth_metric(depth, &lut);
            let cloud = reconstruct_hologram_metric(color, &metric, &k, &parse_pose(pose)?).input("reconstructing")?;
            write(output, &export_ply(&cloud))?;
            log::info!("{} points written to {}", cloud.len(), output.display());
        }
        Command::Simulate { script } => {
            let text = fs::read_to_string(script).input(format!("reading {}", script.display()))?;
            let parsed = SessionScript::parse_with(&text, session_defaults(&cfg)?).input(script.display())?;
            let base = script.parent().unwrap_or(Path::new("."));
            let outcome = simulate(&parsed, cli.seed, base).runtime("simulation")?;
            let dir = out_dir(cli);
            write(&dir.join("report.txt"), outcome.report.to_string().as_bytes())?;
            write(&dir.join("events.log"), outcome.events_text().as_bytes())?;
            write(&dir.join("state_digest.txt"), outcome.digest_lines.as_bytes())?;
            for (name, bytes) in &outcome.artifacts {
                write(&dir.join(name), bytes)?;
            }
            print!("{}", outcome.report);
        }
        Command::Report { dir } => {
            let events = fs::read_to_string(dir.join("events.log")).input("reading events.log")?;
            let digests = fs::read_to_string(dir.join("state_digest.txt")).input("reading state_digest.txt")?;
            let records = parse_events(&events).map_err(|e| anyhow!(e)).input("parsing events.log")?;
            let report = MetricsReport::from_log(&records, &digests).map_err(|e| anyhow!(e)).input("rebuilding report")?;
            print!("{report}");
        }
        Command::Bench { resolution, iterations } => {
            let (w, h) = parse_resolution(resolution)?;
            let report = run_bench(w, h, *iterations).input("bench")?;
            print!("{report}");
        }
        Command::Synth { scene, resolution, hfov, vfov } => {
            let scene: Scene = scene.parse::<Scene>().map_err(|e| anyhow!(e)).input("scene")?;
            let (w, h) = parse_resolution(resolution)?;
            let k = intrinsics_from_fov(*hfov, *vfov, w, h).input("intrinsics")?;
            let frames = scene.render(&k);
            let dir = out_dir(cli);
            write(&dir.join("color.ppm"), &pnm::ppm_bytes(&frames.color))?;
            write(&dir.join("depth.pgm"), &pnm::pgm_bytes(&frames.depth))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DUALSTREAM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
