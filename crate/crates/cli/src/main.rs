//! `anymodal` -- command-line surface over the toolkit: structure codecs,
//! shape audits, mask generation, packing benchmarks, sample construction,
//! gradient checks, and preset printing.
//!
//! Every command takes `--seed` and produces byte-identical output for
//! identical invocations. Exit codes: 0 success, 1 validation failures,
//! 2 I/O or config errors.

mod config;

use std::io::{BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use anymodal::denoiser::{dynamic_decoder_mask, sparse_pattern, SparseKind};
use anymodal::kernels::{check_attention, AttentionKind, FD_TOLERANCE};
use anymodal::packer::{
    build_masks, pack, stream_pack, utilization, Emission, ExampleLens, MemberTokens,
};
use anymodal::pipeline::{construct_sample, mixture_rng, model_presets, ExampleRecord, SamplerConfig};
use anymodal::rle::encode_runs;
use anymodal::token_space::schema::{
    decode_entity, encode_entity, parse_entity, parse_token_record, write_entity,
    write_token_record,
};
use anymodal::token_space::{ByteTokenizer, TokenRange, TokenSpace};

use config::Resolved;

#[derive(Parser)]
#[command(name = "anymodal", version, about = "Multimodal training-infrastructure toolkit")]
struct Cli {
    /// RNG seed; identical invocations with the same seed are byte-identical.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Config file (JSON); defaults to $ANYMODAL_CONFIG, then built-ins.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode/decode geometric entity records through the token codec.
    Codec {
        #[command(subcommand)]
        dir: CodecDir,
    },
    /// Print the resolved modality shape table and budget check.
    Shapes,
    /// Emit attention masks as run-length JSON.
    Maskgen(MaskgenArgs),
    /// Sequence packing tools.
    Pack {
        #[command(subcommand)]
        cmd: PackCmd,
    },
    /// Sample-construction tools.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
    /// Validate attention backward passes against finite differences.
    Gradcheck(GradcheckArgs),
    /// Preset registries.
    Presets {
        #[command(subcommand)]
        cmd: PresetsCmd,
    },
}

#[derive(Subcommand)]
enum CodecDir {
    /// Entity JSONL in, token JSONL out.
    Encode(IoArgs),
    /// Token JSONL in, entity JSONL out.
    Decode(IoArgs),
}

#[derive(Args)]
struct IoArgs {
    /// Input path; stdin when omitted.
    input: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskKind {
    Dynamic,
    Row,
    Column,
    Conv,
    Packing,
}

#[derive(Args)]
struct MaskgenArgs {
    #[arg(long, value_enum)]
    kind: MaskKind,
    /// Target length for dynamic masks.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Comma-separated masked positions for dynamic masks.
    #[arg(long, value_delimiter = ',')]
    masked: Vec<usize>,
    /// Grid rows for sparse patterns.
    #[arg(long, default_value_t = 4)]
    rows: usize,
    /// Grid cols for sparse patterns.
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Neighborhood bound for conv patterns.
    #[arg(long, default_value_t = 2)]
    window: usize,
    /// First member (enc_len, dec_len) for packing masks.
    #[arg(long, default_value_t = 6)]
    enc_a: u32,
    #[arg(long, default_value_t = 4)]
    dec_a: u32,
    /// Second member; omit both for a solo batch.
    #[arg(long)]
    enc_b: Option<u32>,
    #[arg(long)]
    dec_b: Option<u32>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PackCmd {
    /// Run the streaming heuristic over a workload and print utilization.
    Bench {
        /// Workload JSONL of {"id","enc_len","dec_len"}; bundled synthetic
        /// short-heavy workload when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Bundled workload size.
        #[arg(long, default_value_t = 4000)]
        examples: usize,
        /// Write emissions JSONL here.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Construct training samples from record JSONL.
    Sample {
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep probability for non-target modalities.
        #[arg(long, default_value_t = 0.5)]
        keep_probability: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GradKind {
    QkNorm,
    Cosine,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    kind: GradKind,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    seq: usize,
    #[arg(long, default_value_t = 16)]
    head_dim: usize,
    /// Number of seeds to run, starting at --seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Test-harness hook: corrupt one analytic gradient entry.
    #[arg(long, hide = true)]
    sabotage: bool,
}

#[derive(Subcommand)]
enum PresetsCmd {
    /// Print every registry: decoding presets, vocabulary layout, budgets,
    /// model sizes, mixtures.
    Print,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = match config::load(cli.config.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(cli, &resolved) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli, cfg: &Resolved) -> Result<u8> {
    match cli.cmd {
        Cmd::Codec { dir } => match dir {
            CodecDir::Encode(io) => cmd_codec(cfg, &io, true),
            CodecDir::Decode(io) => cmd_codec(cfg, &io, false),
        },
        Cmd::Shapes => cmd_shapes(cfg),
        Cmd::Maskgen(args) => cmd_maskgen(cfg, &args),
        Cmd::Pack { cmd } => match cmd {
            PackCmd::Bench {
                input,
                examples,
                emit,
            } => cmd_pack_bench(cfg, cli.seed, input.as_deref(), examples, emit.as_deref()),
        },
        Cmd::Pipeline { cmd } => match cmd {
            PipelineCmd::Sample {
                input,
                output,
                keep_probability,
            } => cmd_pipeline_sample(cfg, cli.seed, input.as_deref(), output.as_deref(), keep_probability),
        },
        Cmd::Gradcheck(args) => cmd_gradcheck(cli.seed, &args),
        Cmd::Presets { cmd } => match cmd {
            PresetsCmd::Print => cmd_presets_print(cfg),
        },
    }
}

fn open_input(path: Option<&std::path::Path>) -> Result<Box<dyn BufRead>> {
    match path {
        Some(p) => {
            let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(Box::new(std::io::BufReader::new(f)))
        }
        None => Ok(Box::new(std::io::BufReader::new(std::io::stdin()))),
    }
}

fn open_output(path: Option<&std::path::Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(std::io::stdout()))),
    }
}

// Streaming 1:1 record transform; malformed records go to stderr with line
// numbers and flip the exit code to 1.
fn cmd_codec(cfg: &Resolved, io: &IoArgs, encode: bool) -> Result<u8> {
    let reader = open_input(io.input.as_deref())?;
    let mut writer = open_output(io.output.as_deref())?;
    let tok = ByteTokenizer;
    let mut bad = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.context("reading input")?;
        if line.trim().is_empty() {
            continue;
        }
        let result = if encode {
            parse_entity(&line)
                .and_then(|e| encode_entity(&e, &cfg.codec, &tok))
                .map(|r| write_token_record(&r))
        } else {
            parse_token_record(&line)
                .and_then(|r| decode_entity(&r, &cfg.codec, &tok))
                .map(|e| write_entity(&e))
        };
        match result {
            Ok(out) => writeln!(writer, "{out}")?,
            Err(e) => {
                bad += 1;
                eprintln!("line {}: {e}", idx + 1);
            }
        }
    }
    writer.flush()?;
    Ok(if bad > 0 { 1 } else { 0 })
}

fn cmd_shapes(cfg: &Resolved) -> Result<u8> {
    let m = &cfg.modality;
    let b = &cfg.budgets;
    let img = m.image_in()?;
    let aud = m.audio_in()?;
    let hist = m.image_history_frame()?;
    let seg = m.segment()?;

    println!(
        "image_in         {}x{} patch {:>2} -> {}x{} = {} tokens",
        m.image_size.0, m.image_size.1, m.image_patch_size, img.rows, img.cols, img.token_count()
    );
    println!(
        "audio_in         {}x{} patch {:>2} -> {}x{} = {} tokens",
        m.mel_bins, m.subsegment_hops, m.audio_patch_size, aud.rows, aud.cols, aud.token_count()
    );
    println!(
        "image_history    {}x{} patch {:>2} -> {}x{} = {} tokens/frame, {} latents -> {} tokens max",
        m.history_image_size.0,
        m.history_image_size.1,
        m.image_patch_size,
        hist.rows,
        hist.cols,
        hist.token_count(),
        m.image_latents,
        m.max_history_frames * m.image_latents
    );
    println!(
        "audio_history    {} latents -> {} tokens max",
        m.audio_latents,
        m.max_history_frames * m.audio_latents
    );
    println!("text             {} tokens", m.text_seq_length);
    println!(
        "image_vq_target  {}x{} compression {} -> {} tokens",
        m.image_vq_size.0,
        m.image_vq_size.1,
        m.image_vq_compression,
        m.image_vq_tokens()?
    );
    println!(
        "audio_vq_target  {}x{} patch {} -> {} tokens",
        m.audio_vq_size.0,
        m.audio_vq_size.1,
        m.audio_vq_patch,
        m.audio_vq_tokens()?
    );
    println!(
        "audio_segment    {} hops x {} samples = {} samples = {} s",
        m.subsegment_hops, m.fft_hop_length, seg.samples, seg.seconds
    );
    println!(
        "budgets          encoder {} (packed {}), decoder {} (packed {})",
        b.encoder_max, b.packed_encoder, b.decoder_max, b.packed_decoder
    );
    m.validate(b)?;
    println!("budget_check     ok");
    Ok(0)
}

fn write_mask_rows(
    writer: &mut dyn Write,
    matrix: &str,
    mask: &[bool],
    rows: usize,
    cols: usize,
) -> Result<()> {
    for i in 0..rows {
        let runs = encode_runs(&mask[i * cols..(i + 1) * cols]);
        let runs: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
        writeln!(
            writer,
            r#"{{"matrix":"{matrix}","row":{i},"runs":[{}]}}"#,
            runs.join(",")
        )?;
    }
    Ok(())
}

fn cmd_maskgen(cfg: &Resolved, args: &MaskgenArgs) -> Result<u8> {
    let mut writer = open_output(args.output.as_deref())?;
    match args.kind {
        MaskKind::Dynamic => {
            let mask = dynamic_decoder_mask(args.n, &args.masked)?;
            let masked: Vec<String> = mask.masked.iter().map(|m| m.to_string()).collect();
            writeln!(
                writer,
                r#"{{"kind":"dynamic","n":{},"masked":[{}]}}"#,
                mask.n,
                masked.join(",")
            )?;
            write_mask_rows(&mut writer, "decoder", &mask.allowed, mask.n, mask.n)?;
        }
        MaskKind::Row | MaskKind::Column | MaskKind::Conv => {
            let kind = match args.kind {
                MaskKind::Row => SparseKind::Row,
                MaskKind::Column => SparseKind::Column,
                _ => SparseKind::Conv,
            };
            let n = args.rows * args.cols;
            let mask = sparse_pattern(args.rows, args.cols, kind, args.window)?;
            writeln!(
                writer,
                r#"{{"kind":"{}","rows":{},"cols":{},"window":{}}}"#,
                kind.name(),
                args.rows,
                args.cols,
                args.window
            )?;
            write_mask_rows(&mut writer, "decoder", &mask, n, n)?;
        }
        MaskKind::Packing => {
            let mut members = vec![MemberTokens {
                id: 0,
                enc: vec![1; args.enc_a as usize],
                dec: vec![1; args.dec_a as usize],
            }];
            if let (Some(eb), Some(db)) = (args.enc_b, args.dec_b) {
                members.push(MemberTokens {
                    id: 1,
                    enc: vec![2; eb as usize],
                    dec: vec![2; db as usize],
                });
            }
            let batch = pack(&members, &cfg.budgets)?;
            let dec_masks: Vec<_> = members
                .iter()
                .map(|m| dynamic_decoder_mask(m.dec.len(), &[]))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&_> = dec_masks.iter().collect();
            let masks = build_masks(&batch.enc_segments, &batch.dec_segments, &refs)?;
            let le = batch.enc_tokens.len();
            let ld = batch.dec_tokens.len();
            writeln!(
                writer,
                r#"{{"kind":"packing","members":{},"enc_len":{le},"dec_len":{ld}}}"#,
                members.len()
            )?;
            write_mask_rows(&mut writer, "encoder", &masks.encoder, le, le)?;
            write_mask_rows(&mut writer, "decoder_self", &masks.decoder_self, ld, ld)?;
            write_mask_rows(&mut writer, "cross", &masks.cross, ld, le)?;
        }
    }
    writer.flush()?;
    Ok(0)
}

#[derive(serde::Deserialize)]
struct WorkloadRow {
    id: u64,
    enc_len: u32,
    dec_len: u32,
}

fn cmd_pack_bench(
    cfg: &Resolved,
    seed: u64,
    input: Option<&std::path::Path>,
    examples: usize,
    emit: Option<&std::path::Path>,
) -> Result<u8> {
    let workload: Vec<ExampleLens> = match input {
        Some(path) => {
            let reader = open_input(Some(path))?;
            let mut rows = Vec::new();
            for (idx, line) in reader.lines().enumerate() {
                let line = line.context("reading workload")?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: WorkloadRow = serde_json::from_str(&line)
                    .with_context(|| format!("workload line {}", idx + 1))?;
                rows.push(ExampleLens {
                    id: row.id,
                    enc_len: row.enc_len,
                    dec_len: row.dec_len,
                });
            }
            rows
        }
        None => anymodal::packer::short_heavy_workload(examples, seed),
    };

    let (emissions, stats) = stream_pack(workload, &cfg.budgets)?;
    if let Some(path) = emit {
        let mut w = open_output(Some(path))?;
        for e in &emissions {
            match e {
                Emission::Pair { first, second } => writeln!(
                    w,
                    r#"{{"kind":"pair","first":{},"second":{}}}"#,
                    first.id, second.id
                )?,
                Emission::Solo { example, oversized } => writeln!(
                    w,
                    r#"{{"kind":"solo","id":{},"oversized":{oversized}}}"#,
                    example.id
                )?,
            }
        }
        writeln!(
            w,
            r#"{{"kind":"stats","examples":{},"emissions":{},"pairs":{},"solos":{},"oversized_solos":{}}}"#,
            stats.examples, stats.emissions, stats.pairs, stats.solos, stats.oversized_solos
        )?;
        w.flush()?;
    }

    let u = utilization(&stats, &cfg.budgets)?;
    println!("examples          {}", stats.examples);
    println!("emissions         {}", stats.emissions);
    println!("pairs             {}", stats.pairs);
    println!("solos             {}", stats.solos);
    println!("oversized_solos   {}", stats.oversized_solos);
    println!("max_pool          {}", stats.max_pool);
    println!("slot_utilization  {:.6}", u.slot_utilization);
    println!("density_gain      {:.6}", u.density_gain);
    println!("solo_rate         {:.6}", u.solo_rate);
    Ok(0)
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordRow {
    #[serde(default)]
    text: Option<Vec<u32>>,
    #[serde(default)]
    image: Option<(usize, usize)>,
    #[serde(default)]
    audio: Option<(usize, usize)>,
    #[serde(default)]
    image_history: Option<usize>,
    #[serde(default)]
    audio_history: Option<usize>,
}

fn cmd_pipeline_sample(
    cfg: &Resolved,
    seed: u64,
    input: Option<&std::path::Path>,
    output: Option<&std::path::Path>,
    keep_probability: f64,
) -> Result<u8> {
    if !(0.0..=1.0).contains(&keep_probability) {
        bail!("keep probability {keep_probability} outside [0, 1]");
    }
    let space = TokenSpace::paper();
    let sampler = SamplerConfig {
        keep_probability,
        budgets: cfg.budgets,
        ..SamplerConfig::default()
    };
    let reader = open_input(input)?;
    let mut writer = open_output(output)?;
    let mut bad = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.context("reading records")?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<RecordRow, _> = serde_json::from_str(&line);
        let spec = parsed
            .map_err(|e| anymodal::Error::Schema(e.to_string()))
            .and_then(|row| {
                let record = ExampleRecord {
                    text: row.text,
                    image: row.image,
                    audio: row.audio,
                    image_history: row.image_history,
                    audio_history: row.audio_history,
                };
                // Each record draws from its own RNG stream, so outputs do
                // not depend on how work is sharded.
                let mut rng = mixture_rng(seed, idx as u64);
                construct_sample(&record, &sampler, &space, &mut rng)
            });
        match spec {
            Ok(s) => writeln!(writer, "{}", s.to_jsonl())?,
            Err(e) => {
                bad += 1;
                eprintln!("line {}: {e}", idx + 1);
            }
        }
    }
    writer.flush()?;
    Ok(if bad > 0 { 1 } else { 0 })
}

fn cmd_gradcheck(seed: u64, args: &GradcheckArgs) -> Result<u8> {
    if args.seq > 32 {
        bail!(
            "sequence length {} too large for finite differences; use --seq <= 32",
            args.seq
        );
    }
    if args.heads == 0 || args.seq == 0 || args.head_dim == 0 || args.head_dim % 2 != 0 {
        bail!("heads/seq must be positive and head_dim positive and even");
    }
    let kind = match args.kind {
        GradKind::QkNorm => AttentionKind::QkNorm,
        GradKind::Cosine => AttentionKind::Cosine,
    };
    let kind_name = match kind {
        AttentionKind::QkNorm => "qk_norm",
        AttentionKind::Cosine => "cosine",
    };
    let mut failures = 0u64;
    for s in seed..seed + args.seeds {
        let report = check_attention(kind, args.heads, args.seq, args.head_dim, s, args.sabotage)?;
        let verdict = if report.pass() { "PASS" } else { "FAIL" };
        let detail: Vec<String> = report
            .per_param
            .iter()
            .map(|p| format!("{}={:.3e}", p.name, p.max_rel_err))
            .collect();
        println!(
            "{kind_name} seed {s}: {} max={:.3e} {verdict}",
            detail.join(" "),
            report.max_rel_err()
        );
        if !report.pass() {
            failures += 1;
            let worst = report
                .per_param
                .iter()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                .unwrap();
            println!(
                "  worst entry {}[{}] rel err {:.3e} over threshold {:.0e}",
                worst.name, worst.worst_index, worst.max_rel_err, report.threshold
            );
        }
    }
    println!(
        "gradcheck {kind_name}: {}/{} seeds passed (threshold {FD_TOLERANCE:.0e})",
        args.seeds - failures,
        args.seeds
    );
    Ok(if failures > 0 { 1 } else { 0 })
}

fn cmd_presets_print(cfg: &Resolved) -> Result<u8> {
    println!("# decoding");
    for p in &cfg.decode_presets {
        println!("{}", p.to_jsonl());
    }

    println!("# vocabulary");
    let space = TokenSpace::paper();
    for range in TokenRange::ALL {
        println!(
            r#"{{"range":"{range:?}","offset":{},"count":{}}}"#,
            space.offset(range),
            space.count(range)
        );
    }
    println!(r#"{{"total_vocab":{}}}"#, space.total_vocab());

    println!("# budgets");
    let b = &cfg.budgets;
    println!(
        r#"{{"encoder_max":{},"decoder_max":{},"packed_encoder":{},"packed_decoder":{}}}"#,
        b.encoder_max, b.decoder_max, b.packed_encoder, b.packed_decoder
    );

    println!("# model_sizes");
    for m in model_presets() {
        println!(
            r#"{{"name":"{}","model_dims":{},"mlp_dims":{},"encoder_layers":{},"decoder_layers":{},"heads":{},"params_billions":{:.1},"image_latents":{},"audio_latents":{}}}"#,
            m.name,
            m.model_dims,
            m.mlp_dims,
            m.encoder_layers,
            m.decoder_layers,
            m.heads,
            m.params_billions,
            m.image_resampler.latents,
            m.audio_resampler.latents
        );
    }

    println!("# mixtures");
    for mixture in &cfg.mixtures {
        for c in &mixture.corpora {
            println!(
                r#"{{"mixture":"{}","corpus":"{}","rate":{:.2}}}"#,
                mixture.name, c.name, c.rate
            );
        }
    }
    Ok(0)
}
