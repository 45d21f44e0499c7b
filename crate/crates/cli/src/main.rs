use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hypersample::composed::{build_ladder, ComposedSampler, LadderConfig};
use hypersample::eval::{
    dominance_check, estimate_marginals, estimate_stretch, scaling_csv, stretch_scaling_experiment, CoverageFunction,
    Sampler, SamplerKind,
};
use hypersample::paging::{parse_fractional_trace, simulate_paging_seeds, PagingTrace};
use hypersample::{MasterSeed, SeedContext, SparseVector};

#[derive(Parser)]
#[command(name = "hypersample", version, about = "Correlated sampling over the hypersimplex")]
struct Cli {
    /// Master seed, 32 hex characters.
    #[arg(long, global = true, env = "HYPERSAMPLE_SEED", default_value = "00000000000000000000000000000000")]
    seed: MasterSeed,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Round one vector and print the chosen indices.
    Sample(SampleArgs),
    /// Per-coordinate inclusion frequencies against the input values.
    MarginalsEval(MarginalsArgs),
    /// Mean symmetric difference over l1 distance for a pair of vectors.
    StretchEval(StretchArgs),
    /// Tree vs composed stretch as n grows with k fixed.
    Scaling(ScalingArgs),
    /// E[f(X)] against the multilinear extension for a random coverage function.
    DominanceEval(DominanceArgs),
    /// Round a fractional paging cache step by step.
    PagingSim(PagingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Clock,
    Subunit,
    Tree,
    Composed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Bin,
}

#[derive(Args)]
struct LadderArgs {
    /// Fixed bucket count for every composed level.
    #[arg(long)]
    m_override: Option<u64>,
    /// Exact number of composed levels.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    c_rec: f64,
    /// Check bucket hash collisions only among buckets holding small mass.
    #[arg(long)]
    skip_empty_bucket_collisions: bool,
}

impl LadderArgs {
    fn config(&self) -> LadderConfig {
        LadderConfig {
            c_rec: self.c_rec,
            m_override: self.m_override,
            depth: self.depth,
            skip_empty_bucket_collisions: self.skip_empty_bucket_collisions,
        }
    }
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, value_enum, default_value = "composed")]
    algo: Algo,
    /// Use the dense postorder traversal for the tree sampler.
    #[arg(long)]
    dense: bool,
    /// Start the composed sampler at this level instead of the top.
    #[arg(long)]
    level: Option<usize>,
    #[command(flatten)]
    ladder: LadderArgs,
}

impl SamplerArgs {
    fn kind(&self) -> Result<SamplerKind> {
        if self.dense && !matches!(self.algo, Algo::Tree) {
            bail!("--dense applies to --algo tree only");
        }
        Ok(match self.algo {
            Algo::Clock => SamplerKind::Clock,
            Algo::Subunit => SamplerKind::Subunit,
            Algo::Tree if self.dense => SamplerKind::TreeDense,
            Algo::Tree => SamplerKind::TreeSparse,
            Algo::Composed => SamplerKind::Composed { config: self.ladder.config(), level: self.level },
        })
    }
}

#[derive(Args)]
struct InputArgs {
    /// Vector file, `-` for stdin.
    #[arg(long, default_value = "-")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Override the dimension from the file header.
    #[arg(long)]
    n: Option<u64>,
    /// Override the budget from the file header.
    #[arg(long)]
    k: Option<u64>,
}

impl InputArgs {
    fn load(&self) -> Result<SparseVector> {
        load_vector(&self.input, self.format, self.n, self.k)
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Write the JSON stats here instead of stderr.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct MarginalsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// CSV destination, stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StretchArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, default_value_t = 4)]
    k: u64,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', default_value = "256,4096,65536")]
    n_list: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    #[arg(long, default_value_t = 50_000)]
    trials: u64,
    #[command(flatten)]
    ladder: LadderArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DominanceArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Ground set size of the random coverage function.
    #[arg(long, default_value_t = 20)]
    universe: u32,
    /// Probability that an item covers a given ground element.
    #[arg(long, default_value_t = 0.15)]
    density: f64,
    #[arg(long, default_value_t = 20_000)]
    trials: u64,
}

#[derive(Args)]
struct PagingArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Fractional caches to round instead of the built-in rule.
    #[arg(long)]
    frac_trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    ladder: LadderArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn load_vector(path: &Path, format: Format, n: Option<u64>, k: Option<u64>) -> Result<SparseVector> {
    let bytes = read_input(path)?;
    let x = match format {
        Format::Text => SparseVector::parse_text(std::str::from_utf8(&bytes).context("vector file is not UTF-8")?)?,
        Format::Bin => SparseVector::from_bytes(&bytes)?,
    };
    if n.is_none() && k.is_none() {
        return Ok(x);
    }
    Ok(SparseVector::validate(x.entries().iter().copied(), n.unwrap_or(x.n()), k.unwrap_or(x.k()))?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn sample(seed: MasterSeed, args: &SampleArgs) -> Result<()> {
    let x = args.input.load()?;
    let kind = args.sampler.kind()?;
    let start = Instant::now();
    let (set, level_used, fallbacks) = match &kind {
        SamplerKind::Composed { config, level } => {
            let plan = build_ladder(x.n(), x.k(), config)?;
            let level = level.unwrap_or(plan.depth());
            let outcome = ComposedSampler::new(plan, SeedContext::new(seed))?.sample_detailed(level, &x)?;
            (outcome.set, Some(outcome.level_used), outcome.fallbacks)
        }
        _ => (Sampler::new(kind.clone(), x.n(), x.k())?.sample(seed, &x)?, None, Vec::new()),
    };
    let elapsed = start.elapsed();
    let mut out = String::new();
    for i in set.iter() {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    io::stdout().write_all(out.as_bytes())?;
    let stats = json!({
        "algo": kind.name(),
        "seed": seed.to_hex(),
        "n": x.n(),
        "k": x.k(),
        "nnz": x.nnz(),
        "size": set.len(),
        "level_used": level_used,
        "fallbacks": fallbacks.iter().map(|(l, r)| json!({"level": l, "reason": r})).collect::<Vec<_>>(),
        "wall_time_us": elapsed.as_secs_f64() * 1e6,
    });
    let stats = serde_json::to_string_pretty(&stats)? + "\n";
    match &args.stats {
        Some(p) => fs::write(p, stats).with_context(|| format!("writing {}", p.display()))?,
        None => io::stderr().write_all(stats.as_bytes())?,
    }
    Ok(())
}

fn marginals(seed: MasterSeed, args: &MarginalsArgs) -> Result<()> {
    let x = args.input.load()?;
    let sampler = Sampler::new(args.sampler.kind()?, x.n(), x.k())?;
    let r = estimate_marginals(&sampler, &x, args.trials, seed)?;
    let mut csv = String::from("index,target,frequency,band,pass\n");
    for c in &r.coordinates {
        csv.push_str(&format!("{},{},{:.6},{:.6},{}\n", c.index, c.target, c.frequency, c.band, c.pass));
    }
    emit(args.out.as_deref(), &csv)?;
    let summary = json!({
        "trials": r.trials,
        "coordinates": r.coordinates.len(),
        "outside_band": r.outside_band(),
        "off_support_hits": r.off_support_hits,
        "cardinality_violations": r.cardinality_violations,
        "pass": r.pass,
    });
    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn stretch(seed: MasterSeed, args: &StretchArgs) -> Result<()> {
    let x = load_vector(&args.x, args.format, None, None)?;
    let y = load_vector(&args.y, args.format, None, None)?;
    let sampler = Sampler::new(args.sampler.kind()?, x.n(), x.k().max(y.k()))?;
    let e = estimate_stretch(&sampler, &x, &y, args.trials, seed)?;
    println!("{}", serde_json::to_string_pretty(&e)?);
    Ok(())
}

fn scaling(seed: MasterSeed, args: &ScalingArgs) -> Result<()> {
    let rows = stretch_scaling_experiment(args.k, &args.n_list, args.pairs, args.trials, &args.ladder.config(), seed)?;
    emit(args.out.as_deref(), &scaling_csv(&rows))
}

fn dominance(seed: MasterSeed, args: &DominanceArgs) -> Result<()> {
    let x = args.input.load()?;
    let items = x.n() as usize;
    let f = CoverageFunction::random(&SeedContext::new(seed).child("coverage", 0), items, args.universe, args.density)?;
    let sampler = Sampler::new(args.sampler.kind()?, x.n(), x.k())?;
    let r = dominance_check(&sampler, &f, &x, args.trials, seed)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn paging(seed: MasterSeed, args: &PagingArgs) -> Result<()> {
    let text = String::from_utf8(read_input(&args.trace)?).context("trace is not UTF-8")?;
    let trace = PagingTrace::parse_text(&text)?;
    let external = match &args.frac_trace {
        Some(p) => {
            let text = String::from_utf8(read_input(p)?).context("fractional trace is not UTF-8")?;
            Some(parse_fractional_trace(&text, trace.n, trace.k)?)
        }
        None => None,
    };
    let summary = simulate_paging_seeds(&trace, args.seeds, seed, external.as_deref(), &args.ladder.config())?;
    let report = serde_json::to_string_pretty(&summary)? + "\n";
    emit(args.out.as_deref(), &report)?;
    if summary.total_violations > 0 {
        bail!("{} feasibility violations", summary.total_violations);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Sample(a) => sample(cli.seed, a),
        Command::MarginalsEval(a) => marginals(cli.seed, a),
        Command::StretchEval(a) => stretch(cli.seed, a),
        Command::Scaling(a) => scaling(cli.seed, a),
        Command::DominanceEval(a) => dominance(cli.seed, a),
        Command::PagingSim(a) => paging(cli.seed, a),
    }
}
