use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use logenc_core::analytics::{self, IncidentRecord, PatternMode};
use logenc_core::corpus::{self, Split};
use logenc_core::encoder::{load_checkpoint, save_checkpoint};
use logenc_core::io::{self, EmbeddingRow};
use logenc_core::metrics::{self, DatasetTag, RankedResult};
use logenc_core::synth::{self, Family};
use logenc_core::templates;
use logenc_core::tokenizer::{train_bpe, BpeTrainConfig};
use logenc_core::trainer::{self, finetune_probe, ProbeSet, Trainer};
use logenc_core::{Embedding, EncoderModel, LogRecord, TokenizerModel};
use serde::{Deserialize, Serialize};

use crate::config::{config_error, PipelineConfig};
use crate::manifest::{sibling_manifest, ManifestBuilder};
use crate::{
    Cmd, DedupArgs, DetectArgs, EmbedArgs, EvalCmd, ModelArgs, PipelineArgs, PretrainArgs, ProbeArgs, RetrieveArgs,
    SubsampleArgs, SynthArgs, TemplatesArgs, TokenizerCmd, TriageArgs,
};

pub fn dispatch(cmd: Cmd, config: PipelineConfig, manifest: Option<PathBuf>) -> anyhow::Result<()> {
    let ctx = Ctx { config, manifest };
    match cmd {
        Cmd::Synth(a) => synth(&ctx, a),
        Cmd::Dedup(a) => dedup(&ctx, a),
        Cmd::Tokenizer(a) => tokenizer(&ctx, a),
        Cmd::Pretrain(a) => pretrain(&ctx, a),
        Cmd::Embed(a) => embed(&ctx, a),
        Cmd::Templates(a) => templates(&ctx, a),
        Cmd::Eval(a) => eval(&ctx, a),
        Cmd::Subsample(a) => subsample(&ctx, a),
        Cmd::Detect(a) => detect(&ctx, a),
        Cmd::Triage(a) => triage(&ctx, a),
        Cmd::Retrieve(a) => retrieve(&ctx, a),
        Cmd::Probe(a) => probe(&ctx, a),
        Cmd::Pipeline(a) => pipeline(&ctx, a),
    }
}

struct Ctx {
    config: PipelineConfig,
    manifest: Option<PathBuf>,
}

impl Ctx {
    /// Write the manifest to `--manifest`, else next to `primary`. Commands
    /// that only print to stdout write one only when asked.
    fn finish(&self, builder: &ManifestBuilder, primary: Option<&Path>) -> anyhow::Result<()> {
        let dest = match (&self.manifest, primary) {
            (Some(m), _) => m.clone(),
            (None, Some(p)) => sibling_manifest(p),
            (None, None) => return Ok(()),
        };
        ensure_parent(&dest)?;
        builder.write(&self.config, &dest)
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json_out<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    ensure_parent(path)?;
    io::write_json(path, value)?;
    Ok(())
}

fn write_jsonl_out<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    ensure_parent(path)?;
    io::write_jsonl(path, rows)?;
    Ok(())
}

/// Write to `out` when given, else pretty-print to stdout.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match out {
        Some(path) => write_json_out(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn read_records(path: &Path) -> anyhow::Result<Vec<LogRecord>> {
    Ok(io::read_jsonl(path)?)
}

fn require(path: Option<&PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    path.cloned()
        .ok_or_else(|| config_error(format!("no {what} given on the command line or in config paths")))
}

struct LoadedModel {
    model: EncoderModel,
    tokenizer: TokenizerModel,
    model_dir: PathBuf,
    tokenizer_path: PathBuf,
}

fn load_model(ctx: &Ctx, args: &ModelArgs) -> anyhow::Result<LoadedModel> {
    let model_dir = require(args.model.as_ref().or(ctx.config.paths.checkpoint.as_ref()), "--model")?;
    let tokenizer_path = match (&args.tokenizer, &ctx.config.paths.tokenizer) {
        (Some(t), _) => t.clone(),
        (None, _) if model_dir.join("tokenizer.json").exists() => model_dir.join("tokenizer.json"),
        (None, Some(t)) => t.clone(),
        (None, None) => model_dir.join("tokenizer.json"),
    };
    let model = load_checkpoint(&model_dir)
        .with_context(|| format!("loading checkpoint {}", model_dir.display()))?
        .model;
    let tokenizer = TokenizerModel::load(&tokenizer_path)
        .with_context(|| format!("loading tokenizer {}", tokenizer_path.display()))?;
    if tokenizer.vocab_size() > model.config.vocab_size {
        anyhow::bail!(
            "tokenizer vocabulary ({}) exceeds the model's ({})",
            tokenizer.vocab_size(),
            model.config.vocab_size
        );
    }
    Ok(LoadedModel {
        model,
        tokenizer,
        model_dir,
        tokenizer_path,
    })
}

impl LoadedModel {
    fn record(&self, builder: &mut ManifestBuilder) {
        builder.input(&self.model_dir).input(&self.tokenizer_path);
    }
}

fn to_embeddings(rows: Vec<EmbeddingRow>) -> Vec<Embedding> {
    rows.into_iter()
        .map(|r| Embedding {
            source_id: r.id,
            vector: r.vector,
        })
        .collect()
}

fn synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let c = &ctx.config.synth;
    let family = a.family.unwrap_or_else(|| c.family.clone());
    let n = a.n.unwrap_or(c.n);
    let rate = a.anomaly_rate.unwrap_or(c.anomaly_rate);
    let seed = ctx.config.module_seed("synth");
    if family == "incidents" {
        let rows = synth::generate_incidents(n, seed);
        write_jsonl_out(&a.out, &rows)?;
    } else {
        let fam = Family::by_name(&family).map_err(|e| config_error(e.to_string()))?;
        let rows = synth::generate(&fam, n, seed, rate).context("synth")?;
        write_jsonl_out(&a.out, &rows)?;
    }
    let mut m = ManifestBuilder::new("synth");
    m.seed("synth", seed).output(&a.out);
    ctx.finish(&m, Some(&a.out))
}

fn dedup(ctx: &Ctx, a: DedupArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.config.dedup.clone();
    if let Some(t) = a.threshold {
        cfg.jaccard_threshold = t;
    }
    if let Some(p) = a.perms {
        cfg.num_permutations = p;
    }
    if let Some(b) = a.bands {
        cfg.bands = b;
    }
    if a.perms.is_some() || a.bands.is_some() {
        cfg.rows_per_band = cfg.num_permutations / cfg.bands.max(1);
    }
    if let Some(s) = a.shingle {
        cfg.shingle_width = s;
    }
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    let records = read_records(&a.input)?;
    let (kept, report) = corpus::dedup_pipeline(records, &cfg).context("dedup")?;
    log::info!(
        "dedup: {} in, {} exact and {} near duplicates removed, {} out",
        report.input_count,
        report.exact_removed,
        report.approx_removed,
        report.output_count
    );
    write_jsonl_out(&a.out, &kept)?;
    write_json_out(&a.report, &report)?;
    let mut m = ManifestBuilder::new("dedup");
    m.seed("dedup", cfg.seed).input(&a.input).output(&a.out).output(&a.report);
    ctx.finish(&m, Some(&a.out))
}

fn train_tokenizer(config: &PipelineConfig, records: &[LogRecord], vocab_size: usize) -> anyhow::Result<TokenizerModel> {
    let cfg = BpeTrainConfig {
        vocab_size,
        source_weights: config.tokenizer.source_weights.clone(),
        seed: config.module_seed("tokenizer"),
    };
    let mut tok = train_bpe(records, &cfg).context("tokenizer")?;
    tok.classify_delimiters(&config.tokenizer.delimiters);
    Ok(tok)
}

fn tokenizer(ctx: &Ctx, cmd: TokenizerCmd) -> anyhow::Result<()> {
    match cmd {
        TokenizerCmd::Train { input, vocab_size, out } => {
            let records = read_records(&input)?;
            let tok = train_tokenizer(&ctx.config, &records, vocab_size.unwrap_or(ctx.config.tokenizer.vocab_size))?;
            ensure_parent(&out)?;
            tok.save(&out).context("tokenizer")?;
            let mut m = ManifestBuilder::new("tokenizer train");
            m.seed("tokenizer", ctx.config.module_seed("tokenizer")).input(&input).output(&out);
            ctx.finish(&m, Some(&out))
        }
        TokenizerCmd::Encode { model, text } => {
            let tok = TokenizerModel::load(&model).context("tokenizer")?;
            println!("{}", tok.render_tokens(&tok.encode(text.as_bytes())));
            let mut m = ManifestBuilder::new("tokenizer encode");
            m.input(&model);
            ctx.finish(&m, None)
        }
    }
}

/// Train (or resume) and leave `out` holding the checkpoint, the tokenizer
/// and `loss_curve.csv`.
fn run_pretrain(
    config: &PipelineConfig,
    records: &[LogRecord],
    tok: &TokenizerModel,
    out: &Path,
    resume: bool,
) -> anyhow::Result<()> {
    let train: Vec<LogRecord> = if records.iter().any(|r| r.split == Split::Train) {
        records.iter().filter(|r| r.split == Split::Train).cloned().collect()
    } else {
        records.to_vec()
    };
    let mut enc = config.encoder.clone();
    enc.vocab_size = tok.vocab_size();
    let data = trainer::prepare_examples(tok, &train, enc.max_seq_len);
    let mut t = if resume {
        let ck = load_checkpoint(out).with_context(|| format!("resuming from {}", out.display()))?;
        if ck.model.config.vocab_size != enc.vocab_size {
            anyhow::bail!("checkpoint vocabulary does not match the tokenizer");
        }
        Trainer::resume(ck, config.train.clone(), &data).context("pretrain")?
    } else {
        let model = EncoderModel::new(enc, config.module_seed("init")).context("pretrain")?;
        Trainer::new(model, config.train.clone(), &data).context("pretrain")?
    };
    log::info!(
        "pretraining {} parameters on {} sequences from step {}",
        t.model.num_parameters(),
        data.sequences.len(),
        t.step
    );
    t.run(config.train.max_steps, Some(out)).context("pretrain")?;
    save_checkpoint(out, &t.checkpoint()).context("saving checkpoint")?;
    tok.save(&out.join("tokenizer.json")).context("saving tokenizer")?;
    trainer::write_loss_curve(&out.join("loss_curve.csv"), &t.curve).context("saving loss curve")?;
    Ok(())
}

fn pretrain(ctx: &Ctx, a: PretrainArgs) -> anyhow::Result<()> {
    let p = &ctx.config.paths;
    let corpus = require(a.corpus.as_ref().or(p.corpus.as_ref()), "--corpus")?;
    let tok_path = require(a.tokenizer.as_ref().or(p.tokenizer.as_ref()), "--tokenizer")?;
    let out = require(a.out.as_ref().or(p.checkpoint.as_ref()), "--out")?;
    let mut config = ctx.config.clone();
    if let Some(s) = a.steps {
        config.train.max_steps = s;
        config.train.warmup_steps = config.train.warmup_steps.min(s);
    }
    let records = read_records(&corpus)?;
    let tok = TokenizerModel::load(&tok_path).context("tokenizer")?;
    run_pretrain(&config, &records, &tok, &out, a.resume)?;
    let mut m = ManifestBuilder::new("pretrain");
    m.seed("init", config.module_seed("init"))
        .seed("pretrain", config.train.seed)
        .input(&corpus)
        .input(&tok_path)
        .output(&out);
    ctx.finish(&m, Some(&out))
}

fn embed(ctx: &Ctx, a: EmbedArgs) -> anyhow::Result<()> {
    let lm = load_model(ctx, &a.model)?;
    let records = read_records(&a.input)?;
    let rows: Vec<EmbeddingRow> = analytics::embed_records(&lm.model, &lm.tokenizer, &records)
        .context("embed")?
        .into_iter()
        .map(|e| EmbeddingRow {
            id: e.source_id,
            vector: e.vector,
        })
        .collect();
    write_jsonl_out(&a.out, &rows)?;
    let mut m = ManifestBuilder::new("embed");
    lm.record(&mut m);
    m.input(&a.input).output(&a.out);
    ctx.finish(&m, Some(&a.out))
}

fn templates(ctx: &Ctx, a: TemplatesArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.config.drain.clone();
    if let Some(d) = a.depth {
        cfg.depth = d;
    }
    if let Some(s) = a.similarity_threshold {
        cfg.similarity_threshold = s;
    }
    if let Some(c) = a.max_children {
        cfg.max_children = c;
    }
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    let records = read_records(&a.input)?;
    let index = templates::drain_parse(&records, &cfg).context("templates")?;
    log::info!("{} templates over {} logs", index.templates.len(), index.assignments.len());
    write_json_out(&a.out, &index)?;
    let mut m = ManifestBuilder::new("templates");
    m.input(&a.input).output(&a.out);
    ctx.finish(&m, Some(&a.out))
}

#[derive(Serialize)]
struct SearchReport {
    mrr: f64,
    map: f64,
    k: usize,
    query_count: usize,
    reference_count: usize,
    /// "ground_truth" when every record carries a template id, else "drain".
    relevance: &'static str,
    results: Vec<RankedResult>,
}

/// Template id per record: the generator's label when every record has
/// one, else the Drain template mined over all records together.
fn template_ids(config: &PipelineConfig, records: &[LogRecord]) -> anyhow::Result<(Vec<String>, &'static str)> {
    if let Some(ids) = records.iter().map(|r| r.template.clone()).collect::<Option<Vec<_>>>() {
        return Ok((ids, "ground_truth"));
    }
    let index = templates::drain_parse(records, &config.drain).context("templates")?;
    let map = index.assignment_map();
    let ids = records
        .iter()
        .map(|r| {
            map.get(r.id.as_str())
                .map(|t| t.to_string())
                .ok_or_else(|| anyhow::anyhow!("log {} has no template", r.id))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((ids, "drain"))
}

fn eval(ctx: &Ctx, cmd: EvalCmd) -> anyhow::Result<()> {
    match cmd {
        EvalCmd::Intrinsic { model, data, tag, out } => {
            let tag: DatasetTag = tag.parse().map_err(config_error)?;
            let lm = load_model(ctx, &model)?;
            let records = read_records(&data)?;
            let seed = ctx.config.module_seed("eval");
            let report = metrics::intrinsic_eval(&lm.model, &lm.tokenizer, &records, seed, tag).context("eval")?;
            emit(out.as_deref(), &report)?;
            let mut m = ManifestBuilder::new("eval intrinsic");
            lm.record(&mut m);
            m.seed("eval", seed).input(&data);
            if let Some(o) = &out {
                m.output(o);
            }
            ctx.finish(&m, out.as_deref())
        }
        EvalCmd::Similarity { model, data, out } => {
            let lm = load_model(ctx, &model)?;
            let records = read_records(&data)?;
            let index = templates::drain_parse(&records, &ctx.config.drain).context("templates")?;
            let seed = ctx.config.module_seed("similarity");
            let s = &ctx.config.similarity;
            let pairs = templates::make_similarity_pairs(&index, s.positive_pairs, s.negative_pairs, seed)
                .context("similarity pairs")?;
            let emb: HashMap<String, Vec<f64>> = analytics::embed_records(&lm.model, &lm.tokenizer, &records)
                .context("embed")?
                .into_iter()
                .map(|e| (e.source_id, e.vector))
                .collect();
            let report = analytics::similarity_diff(&emb, &pairs.positive, &pairs.negative).context("similarity")?;
            emit(out.as_deref(), &report)?;
            let mut m = ManifestBuilder::new("eval similarity");
            lm.record(&mut m);
            m.seed("similarity", seed).input(&data);
            if let Some(o) = &out {
                m.output(o);
            }
            ctx.finish(&m, out.as_deref())
        }
        EvalCmd::Search {
            model,
            queries,
            references,
            k,
            out,
        } => {
            let lm = load_model(ctx, &model)?;
            let q = read_records(&queries)?;
            let r = read_records(&references)?;
            let all: Vec<LogRecord> = q.iter().chain(&r).cloned().collect();
            let (ids, relevance) = template_ids(&ctx.config, &all)?;
            let (qt, rt) = ids.split_at(q.len());
            let qe = analytics::embed_records(&lm.model, &lm.tokenizer, &q).context("embed")?;
            let re = analytics::embed_records(&lm.model, &lm.tokenizer, &r).context("embed")?;
            let results = analytics::log_search(&qe, qt, &re, rt, k).context("search")?;
            let report = SearchReport {
                mrr: metrics::mrr(&results),
                map: metrics::map(&results),
                k,
                query_count: q.len(),
                reference_count: r.len(),
                relevance,
                results,
            };
            emit(out.as_deref(), &report)?;
            let mut m = ManifestBuilder::new("eval search");
            lm.record(&mut m);
            m.input(&queries).input(&references);
            if let Some(o) = &out {
                m.output(o);
            }
            ctx.finish(&m, out.as_deref())
        }
    }
}

#[derive(Serialize)]
struct SubsampleReport {
    selected: Vec<String>,
    score: analytics::SubsampleScore,
}

fn subsample(ctx: &Ctx, a: SubsampleArgs) -> anyhow::Result<()> {
    let emb = to_embeddings(io::read_jsonl(&a.embeddings)?);
    let selected = analytics::subsample_maxmin(&emb, a.n).context("subsample")?;
    let records = read_records(&a.logs)?;
    let by_id: HashMap<&str, &LogRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let chosen = selected
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| anyhow::anyhow!("embedding {id} has no log"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = SubsampleReport {
        score: analytics::subsample_score(&chosen),
        selected,
    };
    emit(a.out.as_deref(), &report)?;
    let mut m = ManifestBuilder::new("subsample");
    m.input(&a.embeddings).input(&a.logs);
    if let Some(o) = &a.out {
        m.output(o);
    }
    ctx.finish(&m, a.out.as_deref())
}

fn detect(ctx: &Ctx, a: DetectArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.config.detect.clone();
    if let Some(mode) = &a.mode {
        cfg.mode = mode.parse().map_err(config_error)?;
    }
    if let Some(t) = a.top {
        cfg.top_k = t;
    }
    if let Some(cols) = a.columns.clone() {
        cfg.structured_columns = cols;
    }
    let records = read_records(&a.logs)?;
    let mut m = ManifestBuilder::new("detect");
    m.seed("detect", cfg.seed).input(&a.logs);
    let features: Vec<Vec<f64>> = match cfg.mode {
        PatternMode::Embedding => {
            let emb = match &a.embeddings {
                Some(path) => {
                    m.input(path);
                    let by_id: HashMap<String, Vec<f64>> =
                        io::read_jsonl::<EmbeddingRow>(path)?.into_iter().map(|r| (r.id, r.vector)).collect();
                    records
                        .iter()
                        .map(|r| {
                            by_id
                                .get(&r.id)
                                .cloned()
                                .ok_or_else(|| anyhow::anyhow!("log {} has no embedding", r.id))
                        })
                        .collect::<anyhow::Result<Vec<_>>>()?
                }
                None => {
                    let lm = load_model(ctx, &a.model)?;
                    lm.record(&mut m);
                    analytics::embed_records(&lm.model, &lm.tokenizer, &records)
                        .context("embed")?
                        .into_iter()
                        .map(|e| e.vector)
                        .collect()
                }
            };
            emb
        }
        PatternMode::Hybrid => {
            if cfg.structured_columns.is_empty() {
                return Err(config_error("hybrid mode needs --columns or detect.structured_columns"));
            }
            let texts: Vec<Option<String>> = records
                .iter()
                .map(|r| analytics::unstructured_text(r, &cfg.structured_columns))
                .collect();
            let unstructured = if texts.iter().any(Option::is_some) {
                let lm = load_model(ctx, &a.model)?;
                lm.record(&mut m);
                let items: Vec<(String, String)> = records
                    .iter()
                    .zip(&texts)
                    .map(|(r, t)| (r.id.clone(), t.clone().unwrap_or_default()))
                    .collect();
                Some(
                    analytics::embed_texts(&lm.model, &lm.tokenizer, &items)
                        .context("embed")?
                        .into_iter()
                        .map(|e| e.vector)
                        .collect::<Vec<_>>(),
                )
            } else {
                None
            };
            analytics::hybrid_features(&records, &cfg.structured_columns, unstructured.as_deref()).context("detect")?
        }
    };
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let labels: Option<Vec<bool>> = records.iter().map(|r| r.anomaly).collect();
    let report = analytics::pattern_detect(&ids, &features, labels.as_deref(), &cfg).context("detect")?;
    emit(a.out.as_deref(), &report)?;
    if let Some(o) = &a.out {
        m.output(o);
    }
    ctx.finish(&m, a.out.as_deref())
}

#[derive(Serialize)]
struct TriageOutput {
    #[serde(flatten)]
    report: analytics::TriageReport,
    table: std::collections::BTreeMap<String, usize>,
}

fn triage(ctx: &Ctx, a: TriageArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.config.triage.clone();
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(t) = a.tp_threshold {
        cfg.tp_threshold = t;
    }
    if let Some(t) = a.bpfp_threshold {
        cfg.bpfp_threshold = t;
    }
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    let lm = load_model(ctx, &a.model)?;
    let train: Vec<IncidentRecord> = io::read_jsonl(&a.train)?;
    let test: Vec<IncidentRecord> = io::read_jsonl(&a.test)?;
    let vectors = |rows: &[IncidentRecord]| -> anyhow::Result<Vec<Vec<f64>>> {
        let items: Vec<(String, String)> = rows.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
        Ok(analytics::embed_texts(&lm.model, &lm.tokenizer, &items)
            .context("embed")?
            .into_iter()
            .map(|e| e.vector)
            .collect())
    };
    let model = analytics::triage_fit(&train, &vectors(&train)?, &cfg).context("triage")?;
    let report = analytics::triage_apply(&model, &test, &vectors(&test)?).context("triage")?;
    let out = TriageOutput {
        table: analytics::decision_table(&report.decisions, &test),
        report,
    };
    emit(a.out.as_deref(), &out)?;
    let mut m = ManifestBuilder::new("triage");
    lm.record(&mut m);
    m.input(&a.train).input(&a.test);
    if let Some(o) = &a.out {
        m.output(o);
    }
    ctx.finish(&m, a.out.as_deref())
}

#[derive(Serialize)]
struct Hit {
    id: String,
    score: f64,
}

fn retrieve(ctx: &Ctx, a: RetrieveArgs) -> anyhow::Result<()> {
    let lm = load_model(ctx, &a.model)?;
    let docs = to_embeddings(io::read_jsonl(&a.docs)?);
    let query = analytics::embed_texts(&lm.model, &lm.tokenizer, &[("query".into(), a.query.clone())])
        .context("embed")?
        .remove(0);
    let hits: Vec<Hit> = analytics::retrieve_topk(&query.vector, &docs, a.k)
        .context("retrieve")?
        .into_iter()
        .map(|(id, score)| Hit { id, score })
        .collect();
    emit(a.out.as_deref(), &hits)?;
    let mut m = ManifestBuilder::new("retrieve");
    lm.record(&mut m);
    m.input(&a.docs);
    if let Some(o) = &a.out {
        m.output(o);
    }
    ctx.finish(&m, a.out.as_deref())
}

#[derive(Deserialize)]
struct RawSet {
    logs: Vec<String>,
    label: String,
}

#[derive(Serialize)]
struct ProbeReport {
    train_accuracy: f64,
    test_accuracy: f64,
    train_sets: usize,
    test_sets: usize,
}

fn probe(ctx: &Ctx, a: ProbeArgs) -> anyhow::Result<()> {
    let mut cfg = ctx.config.probe.clone();
    if let Some(s) = a.set_size {
        cfg.set_size = s;
    }
    if let Some(s) = a.steps {
        cfg.train.max_steps = s;
        cfg.train.warmup_steps = cfg.train.warmup_steps.min(s);
    }
    let lm = load_model(ctx, &a.model)?;
    let max_len = lm.model.config.max_seq_len;
    let load = |path: &Path| -> anyhow::Result<Vec<ProbeSet>> {
        Ok(io::read_jsonl::<RawSet>(path)?
            .into_iter()
            .map(|s| ProbeSet {
                logs: s
                    .logs
                    .iter()
                    .map(|l| lm.tokenizer.encode_for_model(l.as_bytes(), max_len).ids)
                    .collect(),
                label: s.label,
            })
            .collect())
    };
    let train = load(&a.train)?;
    let test = load(&a.test)?;
    let (tuned, head) = finetune_probe(&lm.model, &train, &cfg).context("probe")?;
    let report = ProbeReport {
        train_accuracy: head.accuracy(&tuned, &train).context("probe")?,
        test_accuracy: head.accuracy(&tuned, &test).context("probe")?,
        train_sets: train.len(),
        test_sets: test.len(),
    };
    emit(a.out.as_deref(), &report)?;
    let mut m = ManifestBuilder::new("probe");
    lm.record(&mut m);
    m.seed("probe", cfg.train.seed).input(&a.train).input(&a.test);
    if let Some(o) = &a.out {
        m.output(o);
    }
    ctx.finish(&m, a.out.as_deref())
}

/// Synthetic corpus to evaluation reports in one directory:
/// `corpus.jsonl`, `dedup_report.json`, `tokenizer.json`, `checkpoint/`,
/// `eval_idts.json`, `eval_odts.json` and `manifest.json`.
fn pipeline(ctx: &Ctx, a: PipelineArgs) -> anyhow::Result<()> {
    let config = &ctx.config;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let s = &config.synth;
    let synth_seed = config.module_seed("synth");
    let family = Family::by_name(&s.family).map_err(|e| config_error(e.to_string()))?;
    let ood_family = Family::by_name(&s.ood_family).map_err(|e| config_error(e.to_string()))?;
    let main = synth::generate(&family, s.n, synth_seed, s.anomaly_rate).context("synth")?;
    let ood = synth::generate(&ood_family, s.ood_n, synth_seed, 0.0).context("synth")?;

    let (main, report) = corpus::dedup_pipeline(main, &config.dedup).context("dedup")?;
    let (ood, _) = corpus::dedup_pipeline(ood, &config.dedup).context("dedup")?;
    let split_seed = config.module_seed("split");
    let records =
        corpus::split_corpus(main, (config.split.train, config.split.id_test), ood, split_seed).context("split")?;
    let corpus_path = dir.join("corpus.jsonl");
    let report_path = dir.join("dedup_report.json");
    io::write_jsonl(&corpus_path, &records)?;
    io::write_json(&report_path, &report)?;

    let of = |split: Split| -> Vec<LogRecord> { records.iter().filter(|r| r.split == split).cloned().collect() };
    let train = of(Split::Train);
    let tok = train_tokenizer(config, &train, config.tokenizer.vocab_size)?;
    let tok_path = dir.join("tokenizer.json");
    tok.save(&tok_path).context("tokenizer")?;

    let ck = dir.join("checkpoint");
    run_pretrain(config, &train, &tok, &ck, false)?;
    let model = load_checkpoint(&ck).context("loading checkpoint")?.model;

    let eval_seed = config.module_seed("eval");
    let mut m = ManifestBuilder::new("pipeline");
    m.seed("synth", synth_seed)
        .seed("dedup", config.dedup.seed)
        .seed("split", split_seed)
        .seed("tokenizer", config.module_seed("tokenizer"))
        .seed("init", config.module_seed("init"))
        .seed("pretrain", config.train.seed)
        .seed("eval", eval_seed)
        .output(&corpus_path)
        .output(&report_path)
        .output(&tok_path)
        .output(&ck);
    for (tag, split, name) in [
        (DatasetTag::Idts, Split::IdTest, "eval_idts.json"),
        (DatasetTag::Odts, Split::OodTest, "eval_odts.json"),
    ] {
        let report = metrics::intrinsic_eval(&model, &tok, &of(split), eval_seed, tag).context("eval")?;
        log::info!("{tag:?}: perplexity {:.3} accuracy {:.3}", report.perplexity, report.accuracy);
        let path = dir.join(name);
        io::write_json(&path, &report)?;
        m.output(path);
    }
    let dest = ctx.manifest.clone().unwrap_or_else(|| dir.join("manifest.json"));
    ensure_parent(&dest)?;
    m.write(config, &dest)
}
