//! Subcommand implementations. Every command builds its whole report in
//! memory before anything is written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use alti_core::aggregation::SourceContribution;
use alti_core::evaluation::{
    corpus_aer, detect_hallucination, eos_residual_correlation, extract_alignments, parse_gold_alignments,
    EosResidualCorrelation, HallucinationThresholds, WordPair,
};
use alti_core::model::{decode_model, encode_model, Positional};
use alti_core::tokens::parse_corpus;
use alti_core::{
    Attributor, CorpusLine, DegenerateRows, ForwardTrace, Matrix, ModelConfig, Scalar, Site, TokenSequence,
    Transformer, TransformerWeights, WordMap,
};
use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{emit, join_f64, join_ids, render, write_atomic, ModelId, Render};
use crate::{
    AttributeArgs, Cli, Command, EosArgs, EvaluateArgs, HallucinationArgs, InspectArgs, Method, Precision, ToyArgs,
};

pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

pub fn run(cli: &Cli) -> Outcome<()> {
    if let Command::ToyModel(args) = &cli.command {
        return toy_model(cli, args);
    }
    let path = cli
        .model
        .as_deref()
        .ok_or_else(|| Failure::Usage("--model <PATH> is required for this command".into()))?;
    let bytes = std::fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    let id = ModelId::new(path, &bytes);
    match cli.precision {
        Precision::F32 => dispatch::<f32>(cli, &bytes, id),
        Precision::F64 => dispatch::<f64>(cli, &bytes, id),
    }
}

fn dispatch<S: Scalar>(cli: &Cli, bytes: &[u8], model_id: ModelId) -> Outcome<()> {
    let (config, weights) = decode_model::<S>(bytes).context("loading model")?;
    let model = Transformer::new(config, weights)?;
    let ctx = Session {
        cli,
        model: &model,
        model_id,
    };
    match &cli.command {
        Command::Attribute(a) => attribute(&ctx, a),
        Command::EvaluateAer(a) => evaluate_aer(&ctx, a),
        Command::AnalyzeEos(a) => analyze_eos(&ctx, a),
        Command::DetectHallucination(a) => hallucination(&ctx, a),
        Command::InspectEncoder(a) => inspect_encoder(&ctx, a),
        Command::ToyModel(_) => unreachable!("handled before loading a model"),
    }
}

struct Session<'a, S> {
    cli: &'a Cli,
    model: &'a Transformer<S>,
    model_id: ModelId,
}

impl<S: Scalar> Session<'_, S> {
    fn eos(&self) -> u32 {
        self.model.config().eos_id
    }

    fn finish<R: Render>(&self, report: &R) -> Outcome<()> {
        let text = render(report, self.cli.json)?;
        emit(self.cli.out.as_deref(), &text)?;
        Ok(())
    }

    /// 0-based decoder layer: `--layer` or the penultimate layer.
    fn decoder_layer(&self) -> anyhow::Result<usize> {
        let n = self.model.config().num_decoder_layers;
        resolve_layer(self.cli.layer, n, n.saturating_sub(2), "decoder")
    }
}

fn resolve_layer(flag: Option<usize>, count: usize, default: usize, what: &str) -> anyhow::Result<usize> {
    match flag {
        None => Ok(default),
        Some(l) if (1..=count).contains(&l) => Ok(l - 1),
        Some(l) => bail!("--layer {l} is outside 1..={count} ({what} layers)"),
    }
}

fn read_corpus(path: &Path) -> anyhow::Result<Vec<CorpusLine>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_corpus(&text).with_context(|| format!("parsing {}", path.display()))
}

fn same_length(a: (&Path, usize), b: (&Path, usize)) -> anyhow::Result<()> {
    if a.1 != b.1 {
        bail!(
            "{} has {} sentences but {} has {}",
            a.0.display(),
            a.1,
            b.0.display(),
            b.1
        );
    }
    Ok(())
}

/// Maps `f` over `items` on a pool of `threads` workers. Results keep corpus
/// order, and the first failing sentence in that order is reported.
fn par_map<T, R, F>(threads: usize, items: &[T], f: F) -> anyhow::Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> anyhow::Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let results: Vec<anyhow::Result<R>> = pool.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| f(i, item).with_context(|| format!("sentence {}", i + 1)))
            .collect()
    });
    results.into_iter().collect()
}

/// Prefix fed to the decoder and the tokens predicted from each row.
struct Decoding {
    forced: bool,
    source: TokenSequence,
    prefix: TokenSequence,
    predicted: Vec<u32>,
}

fn decode<S: Scalar>(
    model: &Transformer<S>,
    source: &CorpusLine,
    target: Option<&CorpusLine>,
    max_len: usize,
) -> anyhow::Result<Decoding> {
    let eos = model.config().eos_id;
    let src = source.to_source(eos)?;
    match target {
        Some(t) => {
            let (prefix, _) = t.to_forced_target(eos)?;
            let mut predicted = prefix.ids[1..].to_vec();
            predicted.push(eos);
            Ok(Decoding {
                forced: true,
                source: src,
                prefix,
                predicted,
            })
        }
        None => {
            let generated = model.greedy_decode(&src, max_len)?.ids;
            let mut prefix = vec![eos];
            prefix.extend_from_slice(&generated[..generated.len() - 1]);
            Ok(Decoding {
                forced: false,
                source: src,
                prefix: TokenSequence::target_prefix(prefix, eos)?,
                predicted: generated,
            })
        }
    }
}

fn optional_targets(path: Option<&PathBuf>, sources: (&Path, usize)) -> anyhow::Result<Option<Vec<CorpusLine>>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let t = read_corpus(p)?;
            same_length(sources, (p, t.len()))?;
            Ok(Some(t))
        }
    }
}

// ---------------------------------------------------------------------------
// attribute

#[derive(Serialize)]
struct AttributionReport {
    schema: &'static str,
    model: ModelId,
    precision: &'static str,
    sentences: Vec<SentenceAttribution>,
}

#[derive(Serialize)]
struct SentenceAttribution {
    index: usize,
    mode: &'static str,
    source_tokens: Vec<u32>,
    prefix_tokens: Vec<u32>,
    predicted_tokens: Vec<u32>,
    /// One row per predicted token, one column per source token.
    source_relevance: Matrix<f64>,
    /// One row per predicted token, one column per prefix token.
    target_relevance: Matrix<f64>,
    source_share: SourceContribution,
    /// Layers are 1-based here.
    degenerate_rows: Vec<DegenerateRows>,
    #[serde(skip)]
    csv: String,
}

impl Render for AttributionReport {
    fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {} (crc32 {}), {}",
            self.model.file, self.model.crc32, self.precision
        );
        for sent in &self.sentences {
            let _ = writeln!(
                s,
                "\nsentence {} ({}): source [{}] prefix [{}], mean source share {:.4}",
                sent.index + 1,
                sent.mode,
                join_ids(&sent.source_tokens),
                join_ids(&sent.prefix_tokens),
                sent.source_share.mean
            );
            for (p, tok) in sent.predicted_tokens.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "  -> {tok:<5} source {} | prefix {}",
                    join_f64(sent.source_relevance.row(p)),
                    join_f64(&sent.target_relevance.row(p)[..=p])
                );
            }
            for d in &sent.degenerate_rows {
                let _ = writeln!(
                    s,
                    "  warning: {} layer {} rows {:?} fell back to uniform",
                    d.site, d.layer, d.rows
                );
            }
        }
        s
    }
}

fn labels(prefix: &str, ids: &[u32], offset: usize) -> Vec<String> {
    ids.iter()
        .enumerate()
        .map(|(k, id)| format!("{prefix}{}={id}", k + offset))
        .collect()
}

fn attribute<S: Scalar>(ctx: &Session<'_, S>, args: &AttributeArgs) -> Outcome<()> {
    let sources = read_corpus(&args.source)?;
    let targets = optional_targets(args.target.as_ref(), (&args.source, sources.len()))?;
    let model = ctx.model;
    let sentences = par_map(ctx.cli.threads, &sources, |i, src| {
        let d = decode(model, src, targets.as_ref().map(|t| &t[i]), args.max_len)?;
        let (_, trace) = model.forward_with_trace(&d.source, &d.prefix)?;
        let (rel, mut degenerate_rows) = Attributor::new(model, &trace).relevance_with_diagnostics()?;
        degenerate_rows.iter_mut().for_each(|d| d.layer += 1);
        let csv = rel.heatmap_csv(
            &labels("x", &d.source.ids, 1),
            &labels("y", &d.prefix.ids, 0),
            &labels("y", &d.predicted, 1),
        )?;
        Ok(SentenceAttribution {
            index: i,
            mode: if d.forced { "forced" } else { "greedy" },
            source_share: rel.total_source_contribution(),
            source_tokens: d.source.ids,
            prefix_tokens: d.prefix.ids,
            predicted_tokens: d.predicted,
            source_relevance: rel.source_relevance,
            target_relevance: rel.target_relevance,
            degenerate_rows,
            csv,
        })
    })?;
    let report = AttributionReport {
        schema: "alti.attribution/1",
        model: ctx.model_id.clone(),
        precision: S::NAME,
        sentences,
    };
    let text = render(&report, ctx.cli.json)?;
    if let Some(dir) = &args.csv_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for s in &report.sentences {
            write_atomic(&dir.join(format!("sentence_{:04}.csv", s.index + 1)), s.csv.as_bytes())?;
        }
    }
    emit(ctx.cli.out.as_deref(), &text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate-aer

#[derive(Serialize)]
struct AerReport {
    schema: &'static str,
    model: ModelId,
    precision: &'static str,
    method: &'static str,
    /// 1-based decoder layer.
    layer: usize,
    sentences: Vec<SentenceAer>,
    mean_aer: f64,
    pooled_aer: f64,
}

#[derive(Serialize)]
struct SentenceAer {
    index: usize,
    aer: f64,
    /// Extracted links in gold-file notation.
    alignment: String,
}

impl Render for AerReport {
    fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {} (crc32 {}), {}, method {}, decoder layer {}",
            self.model.file, self.model.crc32, self.precision, self.method, self.layer
        );
        for sent in &self.sentences {
            let _ = writeln!(
                s,
                "sentence {:>4}  AER {:.4}  {}",
                sent.index + 1,
                sent.aer,
                sent.alignment
            );
        }
        let _ = writeln!(s, "mean AER {:.4}  pooled AER {:.4}", self.mean_aer, self.pooled_aer);
        s
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Alti => "alti",
        Method::Attention => "attention",
        Method::NormF => "norm-f",
        Method::NormT => "norm-t",
    }
}

/// `T x J` source-side scores of one decoder layer for the chosen method.
fn alignment_scores<S: Scalar>(
    attr: &Attributor<'_, S>,
    layer: usize,
    method: Method,
) -> alti_core::Result<Matrix<f64>> {
    let j = attr.trace().source_len();
    let full = match method {
        Method::Alti => return Ok(attr.decoder_layer_matrices(layer)?.cross_part),
        Method::Attention => return Ok(attr.attention_matrix_baseline(layer, Site::DecoderCross)?.values),
        Method::NormF => return Ok(attr.vector_norm_baselines(layer, Site::DecoderCross)?.0.values),
        Method::NormT => attr.vector_norm_baselines(layer, Site::DecoderCross)?.1.values,
    };
    let rows: Vec<Vec<f64>> = (0..full.rows()).map(|r| full.row(r)[..j].to_vec()).collect();
    Matrix::from_rows(&rows)
}

fn format_links(links: &std::collections::BTreeSet<WordPair>) -> String {
    let mut sorted: Vec<&WordPair> = links.iter().collect();
    sorted.sort_by_key(|(s, t)| (*t, *s));
    sorted
        .iter()
        .map(|(s, t)| format!("{}-{}", s + 1, t + 1))
        .collect::<Vec<_>>()
        .join(" ")
}

fn evaluate_aer<S: Scalar>(ctx: &Session<'_, S>, args: &EvaluateArgs) -> Outcome<()> {
    let sources = read_corpus(&args.source)?;
    let targets = read_corpus(&args.target)?;
    let gold_text = std::fs::read_to_string(&args.gold).with_context(|| format!("reading {}", args.gold.display()))?;
    let gold = parse_gold_alignments(&gold_text).with_context(|| format!("parsing {}", args.gold.display()))?;
    same_length((&args.source, sources.len()), (&args.target, targets.len()))?;
    same_length((&args.source, sources.len()), (&args.gold, gold.len()))?;
    let layer = ctx.decoder_layer()?;
    let (model, eos) = (ctx.model, ctx.eos());
    let hyps = par_map(ctx.cli.threads, &sources, |i, src_line| {
        let src = src_line.to_source(eos)?;
        let (prefix, predicted_words) = targets[i].to_forced_target(eos)?;
        let (_, trace) = model.forward_with_trace(&src, &prefix)?;
        let scores = alignment_scores(&Attributor::new(model, &trace), layer, args.method)?;
        let src_words: &WordMap = src.words.as_ref().ok_or_else(|| anyhow!("source word map missing"))?;
        gold[i].check_bounds(src_words.num_words(), predicted_words.num_words())?;
        Ok(extract_alignments(&scores, src_words, &predicted_words)?)
    })?;
    let corpus = corpus_aer(&hyps, &gold)?;
    let sentences = hyps
        .iter()
        .zip(&corpus.per_sentence)
        .enumerate()
        .map(|(index, (h, &aer))| SentenceAer {
            index,
            aer,
            alignment: format_links(h),
        })
        .collect();
    ctx.finish(&AerReport {
        schema: "alti.aer/1",
        model: ctx.model_id.clone(),
        precision: S::NAME,
        method: method_name(args.method),
        layer: layer + 1,
        sentences,
        mean_aer: corpus.mean,
        pooled_aer: corpus.pooled,
    })
}

// ---------------------------------------------------------------------------
// analyze-eos

#[derive(Serialize)]
struct EosReport {
    schema: &'static str,
    model: ModelId,
    precision: &'static str,
    sentences: usize,
    /// Layers are 1-based here.
    layers: Vec<EosResidualCorrelation>,
}

impl Render for EosReport {
    fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {} (crc32 {}), {}, {} sentences",
            self.model.file, self.model.crc32, self.precision, self.sentences
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "decoder layer {}: pearson r = {:.4} over {} steps",
                l.layer, l.pearson, l.points
            );
        }
        s
    }
}

fn analyze_eos<S: Scalar>(ctx: &Session<'_, S>, args: &EosArgs) -> Outcome<()> {
    let sources = read_corpus(&args.source)?;
    let targets = optional_targets(args.target.as_ref(), (&args.source, sources.len()))?;
    let model = ctx.model;
    let traces: Vec<ForwardTrace<S>> = par_map(ctx.cli.threads, &sources, |i, src| {
        let d = decode(model, src, targets.as_ref().map(|t| &t[i]), args.max_len)?;
        Ok(model.forward_with_trace(&d.source, &d.prefix)?.1)
    })?;
    let n = model.config().num_decoder_layers;
    let layers: Vec<usize> = match ctx.cli.layer {
        Some(_) => vec![ctx.decoder_layer()?],
        None => (0..n).collect(),
    };
    let layers = layers
        .into_iter()
        .map(|l| {
            let mut c =
                eos_residual_correlation(model, &traces, l).with_context(|| format!("decoder layer {}", l + 1))?;
            c.layer += 1;
            Ok(c)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    ctx.finish(&EosReport {
        schema: "alti.eos/1",
        model: ctx.model_id.clone(),
        precision: S::NAME,
        sentences: traces.len(),
        layers,
    })
}

// ---------------------------------------------------------------------------
// detect-hallucination

#[derive(Serialize)]
struct HallucinationReport {
    schema: &'static str,
    model: ModelId,
    precision: &'static str,
    thresholds: HallucinationThresholds,
    sentences: Vec<SentenceHallucination>,
    flagged: usize,
}

#[derive(Serialize)]
struct SentenceHallucination {
    index: usize,
    original: Vec<u32>,
    perturbed: Vec<u32>,
    original_bleu: f64,
    perturbed_bleu: f64,
    is_hallucination: bool,
}

impl Render for HallucinationReport {
    fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {} (crc32 {}), {}, thresholds: original >= {}, perturbed <= {}",
            self.model.file, self.model.crc32, self.precision, self.thresholds.min_bleu, self.thresholds.max_bleu
        );
        for h in &self.sentences {
            let _ = writeln!(
                s,
                "sentence {:>4}  BLEU {:6.2} -> {:6.2}{}",
                h.index + 1,
                h.original_bleu,
                h.perturbed_bleu,
                if h.is_hallucination { "  HALLUCINATION" } else { "" }
            );
        }
        let _ = writeln!(s, "{} of {} flagged", self.flagged, self.sentences.len());
        s
    }
}

fn hallucination<S: Scalar>(ctx: &Session<'_, S>, args: &HallucinationArgs) -> Outcome<()> {
    let sources = read_corpus(&args.source)?;
    let references = read_corpus(&args.reference)?;
    same_length((&args.source, sources.len()), (&args.reference, references.len()))?;
    let thresholds = HallucinationThresholds {
        min_bleu: args.min_bleu,
        max_bleu: args.max_bleu,
    };
    let (model, eos) = (ctx.model, ctx.eos());
    let sentences = par_map(ctx.cli.threads, &sources, |i, src| {
        let mut reference = references[i].ids.clone();
        if reference.last() == Some(&eos) {
            reference.pop();
        }
        let r = detect_hallucination(model, &src.to_source(eos)?, &reference, thresholds, args.max_len)?;
        Ok(SentenceHallucination {
            index: i,
            original: r.original,
            perturbed: r.perturbed,
            original_bleu: r.verdict.original_bleu,
            perturbed_bleu: r.verdict.perturbed_bleu,
            is_hallucination: r.verdict.is_hallucination,
        })
    })?;
    let flagged = sentences.iter().filter(|s| s.is_hallucination).count();
    ctx.finish(&HallucinationReport {
        schema: "alti.hallucination/1",
        model: ctx.model_id.clone(),
        precision: S::NAME,
        thresholds,
        sentences,
        flagged,
    })
}

// ---------------------------------------------------------------------------
// inspect-encoder

#[derive(Serialize)]
struct EncoderReport {
    schema: &'static str,
    model: ModelId,
    precision: &'static str,
    /// Number of encoder layers rolled out.
    layers: usize,
    sentences: Vec<SentenceDiagonal>,
    /// Over every source token of the corpus.
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct SentenceDiagonal {
    index: usize,
    diagonal: Vec<f64>,
    mean: f64,
    std: f64,
}

impl Render for EncoderReport {
    fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {} (crc32 {}), {}, encoder layers 1..={}",
            self.model.file, self.model.crc32, self.precision, self.layers
        );
        for d in &self.sentences {
            let _ = writeln!(
                s,
                "sentence {:>4}  mean {:.4} std {:.4}  [{}]",
                d.index + 1,
                d.mean,
                d.std,
                join_f64(&d.diagonal)
            );
        }
        let _ = writeln!(s, "corpus mean {:.4} std {:.4}", self.mean, self.std);
        s
    }
}

fn inspect_encoder<S: Scalar>(ctx: &Session<'_, S>, args: &InspectArgs) -> Outcome<()> {
    let sources = read_corpus(&args.source)?;
    let n = ctx.model.config().num_encoder_layers;
    let up_to = resolve_layer(ctx.cli.layer, n, n - 1, "encoder")? + 1;
    let (model, eos) = (ctx.model, ctx.eos());
    let sentences = par_map(ctx.cli.threads, &sources, |i, src| {
        let src = src.to_source(eos)?;
        let prefix = TokenSequence::target_prefix(vec![eos], eos)?;
        let (_, trace) = model.forward_with_trace(&src, &prefix)?;
        let layers = Attributor::new(model, &trace).encoder_matrices()?;
        let share = alti_core::aggregation::encoder_diagonal_share(&layers, up_to)?;
        Ok(SentenceDiagonal {
            index: i,
            diagonal: share.diagonal,
            mean: share.mean,
            std: share.std,
        })
    })?;
    let all: Vec<f64> = sentences.iter().flat_map(|s| s.diagonal.iter().copied()).collect();
    if all.is_empty() {
        return Err(anyhow!("{} has no sentences", args.source.display()).into());
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    ctx.finish(&EncoderReport {
        schema: "alti.encoder/1",
        model: ctx.model_id.clone(),
        precision: S::NAME,
        layers: up_to,
        sentences,
        mean,
        std,
    })
}

// ---------------------------------------------------------------------------
// toy-model

fn toy_model(cli: &Cli, args: &ToyArgs) -> Outcome<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Failure::Usage("toy-model needs --out <PATH> for the model file".into()))?;
    let mut config = ModelConfig::toy(args.layers, args.heads, args.head_dim);
    config.vocab_size_src = args.vocab;
    config.vocab_size_tgt = args.vocab;
    if args.learned_positions {
        config.positional = Positional::Learned;
    }
    config.validate()?;
    let weights = TransformerWeights::<f32>::random(&config, args.seed)?;
    let bytes = encode_model(&config, &weights)?;
    write_atomic(out, &bytes)?;
    println!(
        "wrote {} ({} layers, {} heads, d={}, vocab {}, seed {}, crc32 {:08x})",
        out.display(),
        args.layers,
        args.heads,
        config.model_dim,
        args.vocab,
        args.seed,
        crc32fast::hash(&bytes)
    );
    Ok(())
}
