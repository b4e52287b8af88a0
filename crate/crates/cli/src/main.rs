//! `circlerg`: command-line access to continued fractions, renormalization,
//! linearization, tongues and hyperbolicity probes.
//!
//! Exit codes: 0 on success, 2 for bad input or domain errors, 3 for
//! numerical failures. JSON output is pretty-printed by serde_json and is
//! byte-identical across runs with the same flags and inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use circlerg::cfrac::{brjuno_phi, brjuno_phi0, expand, Alpha, BrjunoValue, ContinuedFractionJson};
use circlerg::circlemap::{rotation_number, FourierAnnulusMap, MapJson, StripDomain};
use circlerg::config::Config;
use circlerg::families::{arnold, tongue_csv, tongue_curve};
use circlerg::probes::{default_alphas, hyperbolicity, kam_linearize, renormalize_chain, ConvergenceReport};
use circlerg::renorm::RenormTraceJson;
use circlerg::Error;

#[derive(Parser)]
#[command(name = "circlerg", version, about = "Renormalization of analytic circle maps near rotations")]
struct Cli {
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// TOML file overriding the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for grid stages and sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Continued fraction and Brjuno sum of a rotation number.
    Brjuno {
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Iterate the renormalization operator.
    Renormalize {
        #[command(flatten)]
        map: MapArgs,
        /// Rotation number anchoring the return index (defaults to the
        /// rotation angle with --rotation).
        #[arg(long)]
        alpha_hint: Option<String>,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Write the JSON trace chain here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the first quadrilateral boundary as CSV here.
        #[arg(long)]
        quad_csv: Option<PathBuf>,
        /// Hold each map at the rotation number of its class.
        #[arg(long)]
        pin: Option<bool>,
    },
    /// Newton linearization `f o xi = xi o R_alpha`.
    Linearize {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace the Arnold tongue of an irrational rotation number.
    Tongue {
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        a_max: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unstable eigenvalue and contraction on zero-mean fields.
    ProbeHyperbolicity {
        /// Repeatable; defaults to golden, silver and [1, 2, 1, 2, ...].
        #[arg(long)]
        alpha: Vec<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Rotation number of a real circle map.
    RotationNumber {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        iterations: Option<u64>,
    },
}

#[derive(Args)]
struct MapArgs {
    /// Map JSON file.
    #[arg(long, group = "source")]
    map: Option<PathBuf>,
    /// Rigid rotation by this angle.
    #[arg(long, group = "source")]
    rotation: Option<String>,
    /// Arnold map `MU,A`.
    #[arg(long, group = "source", value_delimiter = ',', allow_hyphen_values = true)]
    arnold: Option<Vec<f64>>,
    /// Strip half-width for --rotation and --arnold.
    #[arg(long, default_value_t = 1.0)]
    map_epsilon: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_numerical() { 3 } else { 2 }, message: e.to_string() }
    }
}

fn domain(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn numerical(message: impl Into<String>) -> Failure {
    Failure { code: 3, message: message.into() }
}

type Outcome = std::result::Result<(), Failure>;

fn load_config(path: Option<&Path>) -> std::result::Result<Config, Failure> {
    let Some(path) = path else { return Ok(Config::default()) };
    let text = fs::read_to_string(path).map_err(|e| domain(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn parse_alpha(s: &str) -> std::result::Result<Alpha, Failure> {
    Ok(Alpha::parse(s)?)
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

impl MapArgs {
    /// The map and, for rotations, its exact angle.
    fn load(&self) -> std::result::Result<(FourierAnnulusMap, Option<Alpha>), Failure> {
        if let Some(path) = &self.map {
            let text = fs::read_to_string(path).map_err(|e| domain(format!("{}: {e}", path.display())))?;
            let j: MapJson = serde_json::from_str(&text).map_err(|e| domain(format!("{}: {e}", path.display())))?;
            return Ok((FourierAnnulusMap::from_json(&j)?, None));
        }
        let strip = StripDomain::new(self.map_epsilon)?;
        if let Some(r) = &self.rotation {
            let a = parse_alpha(r)?;
            return Ok((FourierAnnulusMap::rotation(a.to_f64(), strip), Some(a)));
        }
        if let Some(v) = &self.arnold {
            if v.len() != 2 {
                return Err(domain("--arnold takes MU,A"));
            }
            return Ok((arnold(v[0], v[1], self.map_epsilon)?, None));
        }
        Err(domain("one of --map, --rotation or --arnold is required"))
    }
}

#[derive(Serialize)]
struct BrjunoOut {
    continued_fraction: ContinuedFractionJson,
    rational: bool,
    depth: usize,
    brjuno: Option<BrjunoValue>,
    phi0: Option<f64>,
    notice: Option<String>,
}

fn brjuno(cli: &Cli, cfg: &Config, alpha: &str, depth: Option<usize>) -> Outcome {
    let a = parse_alpha(alpha)?;
    let depth = depth.unwrap_or(cfg.depth.0);
    if depth == 0 {
        return Err(domain("--depth must be positive"));
    }
    let cf = expand(&a, depth + 1)?;
    let out = if cf.terminated && cf.partials.len() <= depth {
        BrjunoOut {
            continued_fraction: cf.to_json_value(),
            rational: true,
            depth,
            brjuno: None,
            phi0: None,
            notice: Some(format!(
                "alpha is rational: the expansion terminates after {} partial quotients and the Brjuno sum is not defined",
                cf.partials.len()
            )),
        }
    } else {
        BrjunoOut {
            continued_fraction: cf.to_json_value(),
            rational: false,
            depth,
            brjuno: Some(brjuno_phi(&cf, depth)?),
            phi0: Some(brjuno_phi0(&cf, depth)?),
            notice: None,
        }
    };
    if cli.json {
        print!("{}", to_json(&out));
    } else {
        println!("alpha    = {}", out.continued_fraction.alpha_decimal);
        println!("partials = {:?}", out.continued_fraction.partials);
        match (&out.brjuno, out.phi0, &out.notice) {
            (Some(b), Some(p0), _) => {
                println!("Phi      = {:.15} (depth {depth}, last term {:.3e})", b.partial_sum, b.last_term());
                println!("Phi_0    = {p0:.15}");
            }
            (_, _, Some(n)) => println!("{n}"),
            _ => {}
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ChainOut {
    alpha_hint: f64,
    steps_requested: usize,
    steps: Vec<RenormTraceJson>,
    convergence: ConvergenceReport,
    output: MapJson,
    error: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn renormalize_cmd(
    cli: &Cli,
    cfg: &Config,
    map: &MapArgs,
    hint: Option<&str>,
    steps: usize,
    epsilon: Option<f64>,
    out: Option<&Path>,
    quad_csv: Option<&Path>,
    pin: Option<bool>,
) -> Outcome {
    let (f, angle) = map.load()?;
    let alpha = match (hint, angle) {
        (Some(h), _) => parse_alpha(h)?,
        (None, Some(a)) => a,
        (None, None) => return Err(domain("--alpha-hint is required with --map or --arnold")),
    };
    let mut rcfg = cfg.renorm.clone();
    if let Some(e) = epsilon {
        rcfg = rcfg.with_epsilon(e);
    }
    let mut conv = cfg.convergence.clone();
    if let Some(p) = pin {
        conv.pin_rotation = p;
    }
    let chain = renormalize_chain(&f, &alpha, steps, &rcfg, &conv, None);
    let report = ChainOut {
        alpha_hint: alpha.to_f64(),
        steps_requested: steps,
        steps: chain.traces.iter().map(|t| t.to_json()).collect(),
        output: if steps == 0 { f.to_json() } else { chain.last.to_json() },
        error: chain.report.failure.clone(),
        convergence: chain.report.clone(),
    };
    let text = to_json(&report);
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    if let (Some(path), Some(t)) = (quad_csv, chain.traces.first()) {
        write_file(path, &t.chart.quad.csv())?;
    }
    if cli.json {
        print!("{text}");
    } else {
        println!("alpha hint {:.16}, {} of {steps} steps", report.alpha_hint, chain.traces.len());
        for (k, t) in chain.traces.iter().enumerate() {
            println!(
                "step {}: n = {}, rotation = {:.15}, tail = {:.2e}, conjugacy residual = {:.2e}, distance = {:.3e}",
                k + 1,
                t.chart.n,
                t.rotation(),
                t.tail_energy,
                t.chart.residual_conj,
                chain.report.distances[k + 1]
            );
        }
        if steps == 0 {
            println!("{}", serde_json::to_string(&report.output).expect("serializable"));
        }
    }
    match &chain.report.failure {
        Some(e) => Err(numerical(e.clone())),
        None => Ok(()),
    }
}

fn linearize(cli: &Cli, cfg: &Config, map: &MapArgs, alpha: &str, max_steps: Option<usize>, out: Option<&Path>) -> Outcome {
    let (f, _) = map.load()?;
    let a = parse_alpha(alpha)?.to_f64();
    let mut kcfg = cfg.kam.clone();
    if let Some(m) = max_steps {
        kcfg.max_steps = m;
    }
    let r = kam_linearize(&f, a, &kcfg)?;
    let text = to_json(&r.to_json());
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    if cli.json {
        print!("{text}");
    } else {
        println!("converged: {} after {} steps", r.converged, r.steps());
        for (k, e) in r.errors.iter().enumerate() {
            println!("step {k}: error {e:.3e}");
        }
    }
    if r.converged {
        Ok(())
    } else {
        Err(numerical(format!("linearization did not converge, last error {:.3e}", r.final_error())))
    }
}

fn tongue(cli: &Cli, cfg: &Config, alpha: &str, a_max: Option<f64>, grid: Option<usize>, out: Option<&Path>) -> Outcome {
    let a = parse_alpha(alpha)?;
    let mut tcfg = cfg.tongue.clone();
    if let Some(m) = a_max {
        tcfg.a_max = m;
    }
    if let Some(g) = grid {
        tcfg.grid = g;
    }
    let curve = tongue_curve(&a, &tcfg.a_grid(), &tcfg)?;
    let text = if cli.json { to_json(&curve) } else { tongue_csv(&curve) };
    match out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn probe_hyperbolicity(cfg: &Config, alphas: &[String], epsilon: Option<f64>, samples: Option<usize>) -> Outcome {
    let named = if alphas.is_empty() {
        default_alphas()
    } else {
        alphas
            .iter()
            .map(|s| Ok((s.clone(), parse_alpha(s)?.to_f64())))
            .collect::<std::result::Result<Vec<_>, Failure>>()?
    };
    let mut rcfg = cfg.renorm.clone();
    if let Some(e) = epsilon {
        rcfg = rcfg.with_epsilon(e);
    }
    let mut pcfg = cfg.probe.clone();
    if let Some(n) = samples {
        pcfg.samples = n;
    }
    let report = hyperbolicity(&named, &rcfg, &pcfg)?;
    print!("{}", to_json(&report));
    Ok(())
}

fn rotation_cmd(cli: &Cli, cfg: &Config, map: &MapArgs, iterations: Option<u64>) -> Outcome {
    let (f, _) = map.load()?;
    let r = rotation_number(&f, iterations.unwrap_or(cfg.rotation.iterations))?;
    if cli.json {
        print!("{}", to_json(&r));
    } else {
        println!("{}", r.value);
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    let cfg = load_config(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(domain("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| domain(e.to_string()))?;
    }
    match &cli.command {
        Command::Brjuno { alpha, depth } => brjuno(cli, &cfg, alpha, *depth),
        Command::Renormalize { map, alpha_hint, steps, epsilon, out, quad_csv, pin } => renormalize_cmd(
            cli,
            &cfg,
            map,
            alpha_hint.as_deref(),
            *steps,
            *epsilon,
            out.as_deref(),
            quad_csv.as_deref(),
            *pin,
        ),
        Command::Linearize { map, alpha, max_steps, out } => {
            linearize(cli, &cfg, map, alpha, *max_steps, out.as_deref())
        }
        Command::Tongue { alpha, a_max, grid, out } => tongue(cli, &cfg, alpha, *a_max, *grid, out.as_deref()),
        Command::ProbeHyperbolicity { alpha, epsilon, samples } => {
            probe_hyperbolicity(&cfg, alpha, *epsilon, *samples)
        }
        Command::RotationNumber { map, iterations } => rotation_cmd(cli, &cfg, map, *iterations),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
