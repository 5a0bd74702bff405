use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rfecv::data::{synth_gaussian, synth_null, Layout, SyntheticSpec};
use rfecv::runner::{marker_frequency, parse_kv, RunConfig, RunReport, CONFIG_KEYS};
use rfecv::{run_experiment, select_best_size, Protocol};

#[derive(Parser)]
#[command(name = "rfecv", version, about = "Selection-bias-aware error rates for SVM gene selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Execute an error-rate protocol.
    Run(RunArgs),
    /// Re-render tables from a saved report.json.
    Report(ReportArgs),
    /// List the keys accepted by `run --config`.
    Keys,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Null,
    Gaussian,
}

impl SynthKind {
    fn as_str(self) -> &'static str {
        match self {
            SynthKind::Null => "null",
            SynthKind::Gaussian => "gaussian",
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic population.
    #[arg(long, value_enum)]
    synth: Option<SynthKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated class sizes summing to n.
    #[arg(long)]
    class_sizes: Option<String>,
    /// Distance between the two class means (gaussian).
    #[arg(long)]
    separation: Option<f64>,
    /// Axes carrying the separation (gaussian).
    #[arg(long)]
    informative: Option<usize>,
    #[arg(long)]
    variance: Option<f64>,
}

impl SynthArgs {
    fn pairs(&self, map: &mut BTreeMap<String, String>) {
        put(map, "synth", self.synth.map(|s| s.as_str()));
        put(map, "n", self.n);
        put(map, "p", self.p);
        put(map, "class_sizes", self.class_sizes.as_ref());
        put(map, "separation", self.separation);
        put(map, "informative", self.informative);
        put(map, "variance", self.variance);
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination file; `.tsv` is tab-delimited, anything else comma.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value = "rows-are-samples")]
    layout: Layout,
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Delimited dataset with a `class` column.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    layout: Option<Layout>,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Fold count K.
    #[arg(long)]
    folds: Option<usize>,
    /// Retained subset size d.
    #[arg(long)]
    size: Option<usize>,
    /// Prescreen size G.
    #[arg(long)]
    screen: Option<usize>,
    /// Repetitions R.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long)]
    schedule_floor: Option<usize>,
    /// SVM cost C.
    #[arg(long)]
    cost: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_passes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "RFECV_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by `run`.
    report: PathBuf,
    /// Marker counts at this size instead of the best one.
    #[arg(long)]
    size: Option<usize>,
    /// Show at most this many markers.
    #[arg(long, default_value_t = 20)]
    top: usize,
}

fn put(map: &mut BTreeMap<String, String>, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        map.insert(key.to_string(), v.to_string());
    }
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let s = &args.synth;
    let (Some(kind), Some(n), Some(p)) = (s.synth, s.n, s.p) else {
        bail!("generate needs --synth, --n and --p");
    };
    let sizes: Vec<usize> = match &s.class_sizes {
        Some(text) => text.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().context("--class-sizes")?,
        None => vec![n / 2, n - n / 2],
    };
    if sizes.iter().sum::<usize>() != n {
        bail!("class sizes sum to {}, not n = {n}", sizes.iter().sum::<usize>());
    }
    let data = match kind {
        SynthKind::Null => synth_null(n, p, &sizes, args.seed)?,
        SynthKind::Gaussian => {
            let [a, b] = sizes[..] else { bail!("gaussian data has two classes") };
            let spec = SyntheticSpec::two_class(
                p,
                s.informative.unwrap_or(1),
                s.separation.unwrap_or(2.0),
                s.variance.unwrap_or(1.0),
                [a, b],
                args.seed,
            );
            synth_gaussian(&spec)?
        }
    };
    let mut file = fs::File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let delim = if args.output.extension().is_some_and(|e| e == "tsv") { '\t' } else { ',' };
    data.write_to(&mut file, args.layout, delim)?;
    eprintln!("wrote {} ({} samples, {} features)", args.output.display(), data.n_samples(), data.n_features());
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let mut map = match &args.config {
        Some(path) => parse_kv(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => BTreeMap::new(),
    };
    if args.input.is_some() || args.synth.synth.is_some() {
        map.remove("input");
        map.remove("synth");
    }
    put(&mut map, "input", args.input.as_ref().map(|p| p.display()));
    put(&mut map, "layout", args.layout.map(layout_name));
    args.synth.pairs(&mut map);
    put(&mut map, "protocol", args.protocol);
    put(&mut map, "folds", args.folds);
    put(&mut map, "size", args.size);
    put(&mut map, "screen", args.screen);
    put(&mut map, "reps", args.reps);
    put(&mut map, "holdout_fraction", args.holdout_fraction);
    put(&mut map, "schedule_floor", args.schedule_floor);
    put(&mut map, "cost", args.cost);
    put(&mut map, "tolerance", args.tolerance);
    put(&mut map, "max_passes", args.max_passes);
    put(&mut map, "seed", args.seed);
    put(&mut map, "out", args.out.as_ref().map(|p| p.display()));

    let config = RunConfig::from_pairs(&map)?;
    let report = run_experiment(&config)?;
    print!("{}", render(&report, None, 10));
    eprintln!("outputs in {} ({:.2} s)", config.out_dir.display(), report.duration_secs);
    Ok(())
}

fn layout_name(layout: Layout) -> &'static str {
    match layout {
        Layout::RowsAreSamples => "rows-are-samples",
        Layout::RowsAreFeatures => "rows-are-features",
    }
}

fn render(report: &RunReport, size: Option<usize>, top: usize) -> String {
    let mut out = String::new();
    if !report.tables.is_empty() {
        out.push_str(&report.tables_tsv());
        for t in &report.tables {
            if let Some(d) = select_best_size(t) {
                out.push_str(&format!("# best {}: d = {d}, rate = {:.4}\n", t.protocol, t.rate(d).unwrap_or(f64::NAN)));
            }
        }
    }
    if let Some(d) = &report.double_cv {
        out.push_str(&format!("double-cv\tK={}\tseed={}\testimate={:.4}\n", d.k, d.seed, d.estimate));
        let sizes: Vec<String> = d.inner_choices.iter().map(usize::to_string).collect();
        out.push_str(&format!("# inner choices: {}\n", sizes.join(",")));
    }
    if let Some(h) = &report.holdout {
        out.push_str(&format!(
            "leaky-holdout\tn_test={}\tleaky={:.4}\tclean={:.4}\n",
            h.n_test, h.leaky_rate, h.clean_rate
        ));
    }
    let d = size.or_else(|| report.tables.first().and_then(select_best_size));
    if let Some(Ok(mut counts)) = d.map(|d| marker_frequency(report, d)) {
        counts.retain(|c| c.count > 0);
        counts.sort_by(|a, b| b.count.cmp(&a.count).then(a.feature.cmp(&b.feature)));
        out.push_str(&format!("# markers at d = {}\n", d.unwrap()));
        for c in counts.iter().take(top) {
            out.push_str(&format!("{}\t{}\n", c.name, c.count));
        }
    }
    out
}

fn report(args: &ReportArgs) -> Result<()> {
    let report = RunReport::load(&args.report).with_context(|| format!("loading {}", args.report.display()))?;
    if let Some(d) = args.size {
        marker_frequency(&report, d)?;
    }
    print!("{}", render(&report, args.size, args.top));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Keys => {
            for (k, doc) in CONFIG_KEYS {
                println!("{k:<18}{doc}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
