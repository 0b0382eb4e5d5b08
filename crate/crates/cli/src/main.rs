use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spikekit::energy::{energy_report, report_from_totals, EnergyLedger};
use spikekit::reconstruct::{tfi_reconstruct, TfiConfig};
use spikekit::stream::{slice_clips, subsample_temporal, write_dat_with_meta, ClipWindowSpec};
use spikekit_cli::config::{EncodeConfig, PipelineConfig};
use spikekit_cli::embeddings::{read_embeddings, write_embeddings};
use spikekit_cli::exit::{exit_code, precondition, SUCCESS};
use spikekit_cli::fewshot::{evaluate, train_head, HeadFile, TrainSettings};
use spikekit_cli::frames::{to_u8, write_frames};
use spikekit_cli::model::{FeatureModel, FeatureModelConfig, SpikingModel};
use spikekit_cli::pipeline::{
    encode_clip, featurize, load_stream, read_stream_index, run_pipeline, snn_forward, StreamInput,
};
use spikekit_cli::provenance::{read_json, write_json, Provenance};
use spikekit_cli::synth::{read_prompts, synth_dataset, Archetype, SyntheticDatasetSpec};

#[derive(Parser)]
#[command(name = "spikekit", version, about = "Spike-stream encoding, feature extraction and few-shot evaluation")]
struct Cli {
    /// Seed for every random draw the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Stream metadata sidecar, overriding `<input>.meta.json`.
    #[arg(long, global = true)]
    meta: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a directory of frames into a `.dat` spike stream.
    Encode(EncodeArgs),
    /// Write every time step of a stream as a 0/255 PGM frame.
    Decode { input: PathBuf },
    /// Reconstruct grayscale frames from inter-spike intervals.
    Reconstruct(ReconstructArgs),
    /// Cut a stream into overlapping fixed-length clips.
    Slice(SliceArgs),
    /// Uniformly subsample a stream's time steps.
    Subsample {
        input: PathBuf,
        #[arg(long)]
        frames: usize,
    },
    /// Embed streams with the feature model.
    Featurize(ModelArgs),
    /// Run the spiking encoder and write its operation ledger.
    SnnForward(ModelArgs),
    /// Energy report from a ledger or from two joule totals.
    Energy(EnergyArgs),
    /// Fit an alignment head on few-shot support embeddings.
    TrainHead(TrainArgs),
    /// Top-k accuracy of a head on labelled embeddings.
    Eval(EvalArgs),
    /// Render the synthetic action dataset.
    Synth(SynthArgs),
    /// Full pipeline: synth, encode, featurize, train-head, eval, snn-forward, energy.
    Run,
}

#[derive(Args)]
struct EncodeArgs {
    /// Directory of PGM/PNG frames.
    input: PathBuf,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    upsample: Option<usize>,
}

#[derive(Args)]
struct ReconstructArgs {
    input: PathBuf,
    /// Reconstruct every `stride`-th step.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Single time step to reconstruct instead of a sequence.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 32)]
    dt_max: usize,
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Args)]
struct SliceArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 800)]
    window: usize,
    #[arg(long, default_value_t = 200)]
    stride: usize,
}

#[derive(Args)]
struct ModelArgs {
    /// Weight directory; generated from `--seed` when empty.
    #[arg(long)]
    weights: PathBuf,
    /// `streams.json` index, used instead of explicit inputs.
    #[arg(long)]
    index: Option<PathBuf>,
    /// `.dat` streams.
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    /// Ledger JSON written by `snn-forward`.
    ledger: Option<PathBuf>,
    /// Dense-baseline ledger; defaults to the ledger's own `max_sops`.
    #[arg(long)]
    ann: Option<PathBuf>,
    /// Published totals `E_SNN E_ANN` in joules.
    #[arg(long, num_args = 2, value_names = ["E_SNN", "E_ANN"], conflicts_with_all = ["ledger", "ann"])]
    totals: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Support embeddings.
    #[arg(long)]
    support: PathBuf,
    /// `class<TAB>prompt` lines.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    shots: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    text_seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    head: PathBuf,
    /// Labelled embeddings to classify.
    embeddings: PathBuf,
    #[arg(long = "k", default_values_t = [1])]
    k: Vec<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long, default_value_t = 12)]
    clips: usize,
    #[arg(long, default_value_t = 26)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

fn need<T>(v: Option<T>, what: &str) -> Result<T> {
    match v {
        Some(v) => Ok(v),
        None => precondition(format!("{what} is required")),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

impl Cli {
    fn pipeline_config(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(p) => PipelineConfig::load(p),
            None => Ok(PipelineConfig::default()),
        }
    }

    fn out(&self) -> Result<&Path> {
        need(self.out.as_deref(), "--out")
    }
}

fn stream_inputs(args: &ModelArgs) -> Result<Vec<StreamInput>> {
    let mut inputs = Vec::new();
    if let Some(index) = &args.index {
        for (e, path) in read_stream_index(index)? {
            inputs.push(StreamInput {
                id: e.id,
                label: Some(e.label),
                path,
            });
        }
    }
    for p in &args.inputs {
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        inputs.push(StreamInput {
            id,
            label: None,
            path: p.clone(),
        });
    }
    if inputs.is_empty() {
        return precondition("no input streams: pass .dat files or --index");
    }
    Ok(inputs)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Encode(a) => {
            let base = cli.pipeline_config()?.encode;
            let enc = EncodeConfig {
                theta: a.theta.unwrap_or(base.theta),
                noise: a.noise.unwrap_or(base.noise),
                upsample: a.upsample.unwrap_or(1),
            };
            let seed = match cli.seed {
                Some(s) => s,
                None if enc.noise == 0.0 => 0,
                None => return precondition("--seed is required when --noise is non-zero"),
            };
            let out = cli.out()?;
            let (stream, meta) = encode_clip(&a.input, &enc, seed)?;
            write_dat_with_meta(&stream, &meta, out)?;
            Provenance::new("encode", cli.seed, to_value(&enc)?)
                .input(&a.input)?
                .write_for(out)?;
            eprintln!("{} steps, {} spikes -> {}", stream.t_len(), stream.count_spikes(), out.display());
        }
        Command::Decode { input } => {
            let out = cli.out()?;
            let stream = load_stream(input, cli.meta.as_deref())?;
            let frames: Vec<_> = (0..stream.t_len()).map(|t| stream.frame(t).mapv(|b| b * 255)).collect();
            write_frames(out, &frames)?;
            Provenance::new("decode", None, serde_json::Value::Null)
                .input(input)?
                .write_for(out)?;
        }
        Command::Reconstruct(a) => {
            let out = cli.out()?;
            let stream = load_stream(&a.input, cli.meta.as_deref())?;
            let theta = match a.theta {
                Some(t) => t,
                None => read_theta(cli, &a.input)?,
            };
            let cfg = TfiConfig {
                delta_t_max: a.dt_max,
                theta,
                ..TfiConfig::default()
            };
            let steps: Vec<usize> = match a.t {
                Some(t) => vec![t],
                None => {
                    if a.stride == 0 {
                        return precondition("--stride must be at least 1");
                    }
                    (0..stream.t_len()).step_by(a.stride).collect()
                }
            };
            let frames = steps
                .iter()
                .map(|&t| tfi_reconstruct(&stream, t, &cfg).map(|f| to_u8(&f)))
                .collect::<spikekit::Result<Vec<_>>>()?;
            write_frames(out, &frames)?;
            Provenance::new("reconstruct", None, to_value(&cfg)?)
                .input(&a.input)?
                .write_for(out)?;
        }
        Command::Slice(a) => {
            let out = cli.out()?;
            let stream = load_stream(&a.input, cli.meta.as_deref())?;
            let spec = ClipWindowSpec {
                window_len: a.window,
                stride: a.stride,
            };
            let theta = read_theta(cli, &a.input)?;
            let clips = slice_clips(&stream, &spec)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            for (k, c) in clips.iter().enumerate() {
                let path = out.join(format!("clip_{k:05}.dat"));
                write_dat_with_meta(c, &c.meta(theta), &path)?;
                Provenance::new("slice", None, to_value(&spec)?)
                    .input(&a.input)?
                    .write_for(&path)?;
            }
            eprintln!("{} clips -> {}", clips.len(), out.display());
        }
        Command::Subsample { input, frames } => {
            let out = cli.out()?;
            let stream = load_stream(input, cli.meta.as_deref())?;
            let theta = read_theta(cli, input)?;
            let sub = subsample_temporal(&stream, *frames)?;
            write_dat_with_meta(&sub, &sub.meta(theta), out)?;
            Provenance::new("subsample", None, serde_json::json!({ "frames": frames }))
                .input(input)?
                .write_for(out)?;
        }
        Command::Featurize(a) => {
            let out = cli.out()?;
            let inputs = stream_inputs(a)?;
            let pc = cli.pipeline_config()?;
            let first = load_stream(&inputs[0].path, cli.meta.as_deref())?;
            let cfg = FeatureModelConfig::for_input(pc.hsfe, &pc.star, first.height(), first.width());
            let model = FeatureModel::load_or_init(&a.weights, cfg, cli.seed)?;
            let records = featurize(&model, &inputs, cli.meta.as_deref())?;
            write_embeddings(out, &records)?;
            Provenance::new("featurize", model.seed, to_value(&model.config)?)
                .input(&a.weights)?
                .inputs(inputs.iter().map(|i| i.path.as_path()))?
                .write_for(out)?;
        }
        Command::SnnForward(a) => {
            let out = cli.out()?;
            let inputs = stream_inputs(a)?;
            let pc = cli.pipeline_config()?;
            let model = SpikingModel::load_or_init(&a.weights, pc.snn.fsve, cli.seed)?;
            let ledger = snn_forward(&model, &inputs, cli.meta.as_deref())?;
            write_json(out, &ledger)?;
            Provenance::new("snn-forward", cli.seed, to_value(&model.config)?)
                .input(&a.weights)?
                .inputs(inputs.iter().map(|i| i.path.as_path()))?
                .write_for(out)?;
        }
        Command::Energy(a) => {
            let (report, prov) = match (&a.totals, &a.ledger) {
                (Some(t), _) => (
                    report_from_totals(t[0], t[1])?,
                    Provenance::new("energy", None, serde_json::json!({ "totals": t })),
                ),
                (None, Some(path)) => {
                    let snn: EnergyLedger = read_json(path)?;
                    let ann: EnergyLedger = match &a.ann {
                        Some(p) => read_json(p)?,
                        None => snn.clone(),
                    };
                    let mut prov = Provenance::new("energy", None, serde_json::Value::Null).input(path)?;
                    if let Some(p) = &a.ann {
                        prov = prov.input(p)?;
                    }
                    (energy_report(&snn, &ann)?, prov)
                }
                (None, None) => return precondition("pass a ledger file or --totals E_SNN E_ANN"),
            };
            println!("{report}");
            if let Some(out) = &cli.out {
                write_json(out, &report)?;
                prov.write_for(out)?;
            }
        }
        Command::TrainHead(a) => {
            let out = cli.out()?;
            let seed = need(cli.seed, "--seed")?;
            let fs = cli.pipeline_config()?.fewshot;
            let settings = TrainSettings {
                shots: a.shots,
                seed,
                epochs: a.epochs.unwrap_or(fs.epochs),
                lr: a.lr.unwrap_or(fs.lr),
                text_seed: a.text_seed.unwrap_or(fs.text_seed),
            };
            let support = read_embeddings(&a.support)?;
            let classes = read_prompts(&a.prompts)?;
            let head = train_head(&support, &classes, &settings)?;
            write_json(out, &head)?;
            Provenance::new("train-head", Some(seed), to_value(&settings)?)
                .input(&a.support)?
                .input(&a.prompts)?
                .write_for(out)?;
            if let (Some(first), Some(last)) = (head.loss_trace.first(), head.loss_trace.last()) {
                eprintln!("loss {first:.6} -> {last:.6}");
            }
        }
        Command::Eval(a) => {
            let head: HeadFile = read_json(&a.head)?;
            let records = read_embeddings(&a.embeddings)?;
            let metrics = evaluate(&head, &records, &a.k)?;
            println!("{}", serde_json::to_string(&metrics)?);
            if let Some(out) = &cli.out {
                write_json(out, &metrics)?;
                Provenance::new("eval", None, serde_json::json!({ "k": a.k }))
                    .input(&a.head)?
                    .input(&a.embeddings)?
                    .write_for(out)?;
            }
        }
        Command::Synth(a) => {
            let out = cli.out()?;
            let seed = need(cli.seed, "--seed")?;
            let classes = match &a.classes {
                None => Archetype::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|n| match Archetype::ALL.iter().find(|c| c.name() == n) {
                        Some(&c) => Ok(c),
                        None => precondition(format!("unknown class `{n}`")),
                    })
                    .collect::<Result<_>>()?,
            };
            let spec = SyntheticDatasetSpec {
                classes,
                clips_per_class: a.clips,
                frames: a.frames,
                size: a.size,
                seed,
            };
            let index = synth_dataset(&spec, out)?;
            Provenance::new("synth", Some(seed), to_value(&spec)?)
                .write_for(&out.join(spikekit_cli::synth::INDEX_FILE))?;
            eprintln!("{} clips -> {}", index.clips.len(), out.display());
        }
        Command::Run => {
            let mut cfg = cli.pipeline_config()?;
            if cli.seed.is_some() {
                cfg.seed = cli.seed;
            }
            let out = match (&cli.out, &cfg.out) {
                (Some(o), _) => o.clone(),
                (None, Some(o)) => PathBuf::from(o),
                (None, None) => return precondition("--out is required"),
            };
            let res = run_pipeline(&cfg, &out)?;
            for s in &res.metrics.summary {
                let acc: Vec<String> = s.mean.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
                println!("{} shots: {}", s.shots, acc.join(", "));
            }
            println!("{}", res.energy);
        }
    }
    Ok(())
}

fn read_theta(cli: &Cli, input: &Path) -> Result<f64> {
    let path = cli
        .meta
        .clone()
        .unwrap_or_else(|| spikekit::stream::meta_sidecar_path(input));
    Ok(spikekit::stream::read_meta(&path)?.threshold_theta)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
