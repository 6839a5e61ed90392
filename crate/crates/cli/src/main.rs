use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use stylecodec::bitstream::{
    decode, encode, measure_rates, rates_from_entries, truncate_to_layer, EncodeOutput, LayerRates,
    ScalableBitstream, StreamHeader,
};
use stylecodec::params::WeightInit;
use stylecodec::rdeval::{
    self, fwiou, layer_objective, mos, nme, scalable_objective, DistortionBundle,
    DistortionRegistry, LandmarkSet, NmeConvention, ObjectiveWeights, SegmentationCounts,
};
use stylecodec::style::LayerId;
use stylecodec::stylefile::StyleFile;
use stylecodec::weights::{CodecConfig, Weights, DEFAULT_PIXEL_COUNT};

#[derive(Parser)]
#[command(
    name = "stylecodec",
    version,
    about = "Scalable entropy codec for 18×D style vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic, seeded weight file.
    GenWeights(GenWeightsArgs),
    /// Encode every style set of a style file into concatenated streams.
    Encode(EncodeArgs),
    /// Decode streams into a style file, keeping layers up to --layers.
    Decode(DecodeArgs),
    /// Drop layers above --layers from every stream.
    Truncate(TruncateArgs),
    /// Print stream headers without decoding.
    Inspect(InspectArgs),
    /// Evaluate metrics and objectives on plain-text fixtures.
    Metrics {
        #[command(subcommand)]
        metric: Metric,
    },
    /// Model-estimated and measured bits per layer, without writing a stream.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct WeightsArg {
    /// Weight file.
    #[arg(long, env = "STYLECODEC_WEIGHTS")]
    weights: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    ZeroResidual,
    Random,
}

#[derive(Args)]
struct GenWeightsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Style vector width. Stage widths default to 128,48 for 512 and 40,24
    /// for 64, otherwise D/4 and 3D/32 rounded up to multiples of 4.
    #[arg(long, default_value_t = 512)]
    style_dim: usize,
    /// Intermediate hyper-transformer widths, e.g. 128,48.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    stages: Option<Vec<usize>>,
    #[arg(long, default_value_t = 18)]
    precision_bits: u32,
    #[arg(long, default_value_t = DEFAULT_PIXEL_COUNT)]
    pixel_count: u64,
    #[arg(long, value_enum, default_value_t = InitArg::ZeroResidual)]
    init: InitArg,
}

fn layer_arg(s: &str) -> Result<LayerId, String> {
    let v: u8 = s
        .parse()
        .map_err(|_| format!("{s:?} is not a layer number"))?;
    LayerId::new(v).map_err(|_| format!("layer must be 1, 2 or 3, got {v}"))
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    weights: WeightsArg,
    #[arg(long)]
    styles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rate-distortion trade-off; recorded in the report only.
    #[arg(long, default_value_t = 15.0)]
    lambda: f64,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    weights: WeightsArg,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = layer_arg, default_value = "3")]
    layers: LayerId,
}

#[derive(Args)]
struct TruncateArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = layer_arg)]
    layers: LayerId,
}

#[derive(Args)]
struct InspectArgs {
    stream: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PIXEL_COUNT)]
    pixel_count: u64,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    weights: WeightsArg,
    #[arg(long)]
    styles: PathBuf,
}

#[derive(Subcommand)]
enum Metric {
    /// Normalized mean error between two landmark files (`x y` per line).
    Nme {
        reference: PathBuf,
        test: PathBuf,
        /// Normalizing distance.
        #[arg(long)]
        d: f64,
        /// Use ‖p − p̂‖ instead of ‖p − p̂‖².
        #[arg(long)]
        nme_euclidean: bool,
    },
    /// Frequency-weighted IoU of a square confusion matrix (rows = truth).
    Fwiou { confusion: PathBuf },
    /// Mean opinion score of integer ratings 1-5.
    Mos { ratings: PathBuf },
    /// Layer or scalable rate-distortion objective.
    Objective(ObjectiveArgs),
    /// A named distortion between two feature files (one vector per line).
    Distortion {
        #[arg(long)]
        kind: String,
        reference: PathBuf,
        test: PathBuf,
    },
}

#[derive(Args)]
struct ObjectiveArgs {
    #[arg(long)]
    lambda: f64,
    /// 1, 2 or 3; omit for the sum over all layers.
    #[arg(long, value_parser = layer_arg)]
    layer: Option<LayerId>,
    /// Bits per layer, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "stream",
        required_unless_present = "stream"
    )]
    bits: Option<Vec<f64>>,
    /// Take per-layer bits from the first stream in this file.
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    lm: f64,
    #[arg(long, default_value_t = 0.0)]
    sg: f64,
    #[arg(long, default_value_t = 0.0)]
    id: f64,
    #[arg(long, default_value_t = 0.0)]
    mse: f64,
    #[arg(long, default_value_t = 0.0)]
    lpips: f64,
    #[arg(long)]
    adv: Option<f64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::GenWeights(a) => gen_weights(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Truncate(a) => cmd_truncate(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Metrics { metric } => cmd_metrics(metric),
        Command::Estimate(a) => cmd_estimate(a),
    }
}

fn load_weights(path: &Path) -> Result<Weights> {
    Weights::load(path).with_context(|| format!("loading weights {}", path.display()))
}

fn load_styles(path: &Path, weights: &Weights) -> Result<StyleFile> {
    let f = StyleFile::load(path).with_context(|| format!("loading styles {}", path.display()))?;
    if f.dim != weights.config.style_dim {
        bail!(
            "style file has dimension {}, weights expect {}",
            f.dim,
            weights.config.style_dim
        );
    }
    Ok(f)
}

fn load_streams(path: &Path) -> Result<Vec<ScalableBitstream>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ScalableBitstream::parse_all(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn gen_weights(a: GenWeightsArgs) -> Result<String> {
    let mut cfg = CodecConfig::for_dim(a.style_dim);
    if let Some(s) = a.stages {
        cfg.stages = [s[0], s[1]];
    }
    cfg.precision_bits = a.precision_bits;
    cfg.pixel_count = a.pixel_count;
    let init = match a.init {
        InitArg::ZeroResidual => WeightInit::ZeroResidual,
        InitArg::Random => WeightInit::Random,
    };
    let w = Weights::generate(cfg, a.seed, init)?;
    write(&a.out, &w.to_bytes())?;
    Ok(format!(
        "weights={} style_dim={} stages={},{} digest={}\n",
        a.out.display(),
        w.config.style_dim,
        w.config.stages[0],
        w.config.stages[1],
        hex(&w.digest())
    ))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn rate_lines(out: &mut String, set: usize, rates: &LayerRates) {
    for l in &rates.layers {
        let _ = writeln!(
            out,
            "set={set} layer={} hyper_bits={} style_bits={} total_bits={} bpp={}",
            l.layer,
            l.hyper_bits,
            l.style_bits,
            l.total_bits(),
            rates.bpp(l.total_bits())
        );
    }
}

fn encode_all(weights: &Weights, styles: &StyleFile) -> Result<Vec<EncodeOutput>> {
    let outputs: Vec<EncodeOutput> = styles
        .sets
        .par_iter()
        .map(|s| encode(s, weights))
        .collect::<stylecodec::Result<_>>()?;
    for (i, o) in outputs.iter().enumerate() {
        if o.escape_flood() {
            log::warn!(
                "set {i}: {} of {} symbols escaped; the model is badly scaled for this input",
                o.escapes,
                o.rates.symbols()
            );
        }
    }
    Ok(outputs)
}

fn cmd_encode(a: EncodeArgs) -> Result<String> {
    let w = load_weights(&a.weights.weights)?;
    let styles = load_styles(&a.styles, &w)?;
    let outputs = encode_all(&w, &styles)?;
    let mut bytes = Vec::new();
    let mut text = String::new();
    for (i, o) in outputs.iter().enumerate() {
        bytes.extend_from_slice(&o.stream.to_bytes());
        rate_lines(&mut text, i, &o.rates);
        let total = o.rates.total_bits();
        let _ = writeln!(
            text,
            "set={i} total_bits={total} bpp={} lambda={} escapes={}",
            o.rates.bpp(total),
            a.lambda,
            o.escapes
        );
    }
    write(&a.out, &bytes)?;
    Ok(text)
}

fn cmd_decode(a: DecodeArgs) -> Result<String> {
    let w = load_weights(&a.weights.weights)?;
    let streams = load_streams(&a.stream)?;
    let sets = streams
        .par_iter()
        .map(|s| decode(s, &w, a.layers).map(|d| d.styles))
        .collect::<stylecodec::Result<Vec<_>>>()?;
    let n = sets.len();
    StyleFile::new(w.config.style_dim, sets)?.save(&a.out)?;
    Ok(format!("sets={n} layers={}\n", a.layers))
}

fn cmd_truncate(a: TruncateArgs) -> Result<String> {
    let streams = load_streams(&a.stream)?;
    let mut bytes = Vec::new();
    for s in &streams {
        bytes.extend_from_slice(&truncate_to_layer(s, a.layers).to_bytes());
    }
    write(&a.out, &bytes)?;
    Ok(format!("streams={} layers={}\n", streams.len(), a.layers))
}

fn cmd_inspect(a: InspectArgs) -> Result<String> {
    let bytes = fs::read(&a.stream).with_context(|| format!("reading {}", a.stream.display()))?;
    let mut rest = bytes.as_slice();
    let mut text = String::new();
    let mut i = 0;
    while !rest.is_empty() {
        let h = StreamHeader::parse(rest).with_context(|| format!("stream {i}"))?;
        if rest.len() < h.stream_len() {
            bail!(
                "stream {i} is truncated: header announces {} bytes",
                h.stream_len()
            );
        }
        let _ = writeln!(
            text,
            "stream={i} version={} digest={} segments={} bytes={}",
            h.version,
            hex(&h.digest),
            h.layer_count(),
            h.stream_len()
        );
        let rates = rates_from_entries(&h.entries, a.pixel_count);
        for (e, l) in h.entries.iter().zip(&rates.layers) {
            let _ = writeln!(
                text,
                "stream={i} layer={} hyper_len={} style_len={} crc32={:08x} hyper_bits={} style_bits={} total_bits={} bpp={}",
                l.layer,
                e.hyper_len,
                e.style_len,
                e.crc32,
                l.hyper_bits,
                l.style_bits,
                l.total_bits(),
                rates.bpp(l.total_bits())
            );
        }
        rest = &rest[h.stream_len()..];
        i += 1;
    }
    Ok(text)
}

fn cmd_estimate(a: EstimateArgs) -> Result<String> {
    let w = load_weights(&a.weights.weights)?;
    let styles = load_styles(&a.styles, &w)?;
    let outputs = encode_all(&w, &styles)?;
    let mut text = String::new();
    for (i, o) in outputs.iter().enumerate() {
        let measured = measure_rates(&o.stream, w.config.pixel_count);
        for (l, m) in o.rates.layers.iter().zip(&measured.layers) {
            let _ = writeln!(
                text,
                "set={i} layer={} estimated_hyper_bits={:.3} estimated_style_bits={:.3} hyper_bits={} style_bits={} total_bits={} bpp={}",
                l.layer,
                l.estimated_hyper_bits.unwrap_or(f64::NAN),
                l.estimated_style_bits.unwrap_or(f64::NAN),
                m.hyper_bits,
                m.style_bits,
                m.total_bits(),
                measured.bpp(m.total_bits())
            );
        }
    }
    Ok(text)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_metrics(metric: Metric) -> Result<String> {
    let value = match metric {
        Metric::Nme {
            reference,
            test,
            d,
            nme_euclidean,
        } => {
            let r = LandmarkSet::new(rdeval::parse_landmarks(&read_text(&reference)?)?, d)?;
            let t = LandmarkSet::new(rdeval::parse_landmarks(&read_text(&test)?)?, d)?;
            let conv = if nme_euclidean {
                NmeConvention::Euclidean
            } else {
                NmeConvention::Squared
            };
            format!("nme={}", nme(&r, &t, conv)?)
        }
        Metric::Fwiou { confusion } => {
            let m = rdeval::parse_confusion(&read_text(&confusion)?)?;
            format!("fwiou={}", fwiou(&SegmentationCounts::from_confusion(&m)?)?)
        }
        Metric::Mos { ratings } => {
            format!(
                "mos={}",
                mos(&rdeval::parse_ratings(&read_text(&ratings)?)?)?
            )
        }
        Metric::Objective(a) => objective(a)?,
        Metric::Distortion {
            kind,
            reference,
            test,
        } => {
            let registry = DistortionRegistry::default();
            let d = registry.get(&kind)?;
            let r = rdeval::parse_vectors(&read_text(&reference)?)?;
            let t = rdeval::parse_vectors(&read_text(&test)?)?;
            format!("{}={}", d.name(), d.evaluate(&r, &t)?)
        }
    };
    Ok(value + "\n")
}

fn objective(a: ObjectiveArgs) -> Result<String> {
    let bits = match (&a.bits, &a.stream) {
        (Some(b), _) => b.clone(),
        (None, Some(p)) => {
            let s = load_streams(p)?;
            let first = s.first().context("stream file is empty")?;
            rdeval::layer_bits(&measure_rates(first, DEFAULT_PIXEL_COUNT))
        }
        (None, None) => bail!("give --bits or --stream"),
    };
    let w = ObjectiveWeights::new(a.lambda)?;
    let d = DistortionBundle {
        lm: Some(a.lm),
        sg: Some(a.sg),
        id: Some(a.id),
        mse: Some(a.mse),
        lpips: Some(a.lpips),
        adv: a.adv,
    };
    Ok(match a.layer {
        Some(layer) => format!(
            "layer={layer} lambda={} objective={}",
            a.lambda,
            layer_objective(layer, &bits, &d, &w)?
        ),
        None => format!(
            "layer=all lambda={} objective={}",
            a.lambda,
            scalable_objective(&bits, &[d; 3], &w)?
        ),
    })
}
