use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use vrag::engine::{Engine, QueryOptions};
use vrag::features::{read_features, CorpusManifest, LabeledCorpus, RegionFeatureTensor};
use vrag::model::{
    init_params, load_checkpoint, load_params, save_checkpoint, ConcatMode, ModelConfig, Pooling,
    RegionAggregation,
};
use vrag::retrieval::{
    mean_average_precision, read_index, read_tasks, write_index, write_rankings, EmbeddingIndex,
    Qrels, RankedList, ShotAggregation, Task,
};
use vrag::selfcheck::{run_selfcheck, SelfCheckOptions};
use vrag::shots::write_shot_manifest;
use vrag::synth::{synth_corpus, synth_scene_composite, SceneCompositeConfig, SynthConfig};
use vrag::training::{train as run_training, write_loss_csv, AdamConfig, AdamState, TrainConfig};

use crate::{
    AggArg, AggregationArg, ConcatArg, CorpusKind, EmbedArgs, EvalArgs, InputArgs, QueryArgs,
    RankArgs, SegmentArgs, SelfcheckArgs, SynthArgs, TrainArgs,
};

/// A flag combination that parses but makes no sense; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn manifest_path(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        corpus.join("manifest.tsv")
    } else {
        corpus.to_path_buf()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    if args.min_frames > args.max_frames {
        return Err(UsageError(format!(
            "--min-frames {} exceeds --max-frames {}",
            args.min_frames, args.max_frames
        ))
        .into());
    }
    if args.nuisance_dims > args.channels {
        return Err(UsageError(format!(
            "--nuisance-dims {} exceeds --channels {}",
            args.nuisance_dims, args.channels
        ))
        .into());
    }
    match args.kind {
        CorpusKind::Copies => {
            let corpus = synth_corpus(&SynthConfig {
                groups: args.groups,
                videos_per_group: args.per_group,
                min_frames: args.min_frames,
                max_frames: args.max_frames,
                regions: args.regions,
                channels: args.channels,
                noise_scale: args.noise,
                drop_prob: args.drop_prob,
                nuisance_scale: args.nuisance_scale,
                nuisance_dims: args.nuisance_dims,
                seed: args.seed,
                ..SynthConfig::default()
            })?;
            let manifest = corpus.write(&args.out)?;
            corpus.qrels().write(args.out.join("qrels.tsv"))?;
            log::info!("wrote {} videos to {}", manifest.len(), args.out.display());
        }
        CorpusKind::Scenes => {
            let cfg = SceneCompositeConfig {
                groups: args.groups,
                positives_per_group: args.per_group,
                min_segment: args.min_frames,
                max_segment: args.max_frames,
                regions: args.regions,
                channels: args.channels,
                noise_scale: args.noise,
                seed: args.seed,
                ..SceneCompositeConfig::default()
            };
            let corpus = synth_scene_composite(&cfg)?;
            let groups = |n: usize| vec!["-".to_string(); n];
            LabeledCorpus {
                groups: groups(corpus.queries.len()),
                videos: corpus.queries.clone(),
            }
            .write(args.out.join("queries"))?;
            LabeledCorpus {
                groups: groups(corpus.database.len()),
                videos: corpus.database.clone(),
            }
            .write(args.out.join("database"))?;
            corpus.qrels().write(args.out.join("qrels.tsv"))?;
            std::fs::write(args.out.join("tasks.tsv"), "DS\tDS\nDS+IS\tDS,IS\n")
                .context("cannot write tasks.tsv")?;
            log::info!(
                "wrote {} queries and {} database videos to {}",
                corpus.queries.len(),
                corpus.database.len(),
                args.out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn model_config(args: &TrainArgs, input_dim: usize) -> ModelConfig {
    let agg = |a: AggArg| match a {
        AggArg::Attention => RegionAggregation::Attention,
        AggArg::Max => RegionAggregation::Max,
        AggArg::Average => RegionAggregation::Average,
    };
    ModelConfig {
        input_dim,
        hidden_dim: args.hidden_dim,
        layers: args.layers,
        embed_dim: args.embed_dim,
        attention_tied: args.tied,
        region_agg: agg(args.region_agg),
        pooling: match args.pooling {
            AggArg::Attention => Pooling::Attention,
            AggArg::Max => Pooling::Max,
            AggArg::Average => Pooling::Average,
        },
        concat: match args.concat {
            ConcatArg::All => ConcatMode::All,
            ConcatArg::Final => ConcatMode::FinalLayer,
            ConcatArg::Layers => ConcatMode::AllLayers,
            ConcatArg::LayersReduced => ConcatMode::AllLayersAndReduced,
        },
    }
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let manifest = CorpusManifest::read(manifest_path(&args.corpus))?;
    let corpus = LabeledCorpus::from_manifest(&manifest)?;
    let first = corpus.videos.first().context("corpus is empty")?;
    let (params, state) = match &args.resume {
        Some(path) => {
            let (params, opt) = load_checkpoint(path)?;
            let state = opt.map(|(step, first, second)| AdamState { step, first, second });
            (params, state)
        }
        None => (init_params(&model_config(&args, first.channels()), args.seed)?, None),
    };
    if let Some(v) = corpus.videos.iter().find(|v| v.channels() != params.config().input_dim) {
        bail!(
            "video {} has {} channels, model expects {}",
            v.video_id(),
            v.channels(),
            params.config().input_dim
        );
    }
    let config = TrainConfig {
        margin: args.margin,
        adam: AdamConfig {
            learning_rate: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            epsilon: args.eps,
        },
        epochs: args.epochs,
        triplets_per_pool: args.triplets_per_pool,
        pools: args.pools,
        clip_frames: args.clip_frames,
        seed: args.seed,
    };
    let stdout = io::stdout();
    let outcome = run_training(&corpus, params, &config, state, |summary, params, state| {
        save_checkpoint(params, state.step, &state.first, &state.second, &args.out)?;
        let _ = writeln!(
            stdout.lock(),
            "epoch {}\tloss {:.6}\titerations {}",
            summary.epoch,
            summary.mean_loss,
            summary.iterations
        );
        Ok(())
    })?;
    // Zero epochs still leaves a loadable model behind.
    if outcome.history.is_empty() {
        let s = &outcome.optimizer;
        save_checkpoint(&outcome.params, s.step, &s.first, &s.second, &args.out)?;
    }
    let csv = args.loss_csv.clone().unwrap_or_else(|| args.out.with_extension("loss.csv"));
    let mut w = create(&csv)?;
    write_loss_csv(&outcome.iterations, &mut w)?;
    w.flush()?;
    log::info!("wrote {} and {}", args.out.display(), csv.display());
    Ok(ExitCode::SUCCESS)
}

fn load_inputs(input: &InputArgs) -> Result<Vec<RegionFeatureTensor>> {
    let videos = match &input.corpus {
        Some(corpus) => CorpusManifest::read(manifest_path(corpus))?.load_all()?,
        None => input
            .features
            .iter()
            .map(|p| read_features(p).with_context(|| format!("cannot load {}", p.display())))
            .collect::<Result<_>>()?,
    };
    if videos.is_empty() {
        bail!("no input videos");
    }
    Ok(videos)
}

pub fn embed(args: EmbedArgs) -> Result<ExitCode> {
    let params = load_params(&args.model).with_context(|| format!("cannot load model {}", args.model.display()))?;
    let videos = load_inputs(&args.input)?;
    let engine = Engine::new();
    let index = engine.build_video_index(&params, &videos)?;
    write_index(&index, &args.out)?;
    log::info!(
        "embedded {} videos ({} encoder passes) into {}",
        index.len(),
        engine.counters().encoder_passes,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn segment(args: SegmentArgs) -> Result<ExitCode> {
    let params = load_params(&args.model).with_context(|| format!("cannot load model {}", args.model.display()))?;
    let videos = load_inputs(&args.input)?;
    let engine = Engine::new();
    let sets = engine.embed_shot_sets(&params, &videos, args.tau)?;
    let index = EmbeddingIndex::from_shot_sets(&sets, params.config().embed_dim)?;
    write_index(&index, &args.out)?;
    if let Some(path) = &args.shots_out {
        let mut w = create(path)?;
        write_shot_manifest(&sets, &mut w)?;
        w.flush()?;
    }
    log::info!(
        "segmented {} videos into {} shots, written to {}",
        sets.len(),
        index.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn rank_all(args: &RankArgs) -> Result<Vec<RankedList>> {
    let queries = read_index(&args.queries).with_context(|| format!("cannot load {}", args.queries.display()))?;
    let index = read_index(&args.index).with_context(|| format!("cannot load {}", args.index.display()))?;
    let options = QueryOptions {
        aggregation: match args.aggregation {
            AggregationArg::Cs => ShotAggregation::Chamfer,
            AggregationArg::Scs => ShotAggregation::SymmetricChamfer,
        },
        expansion: args.qe,
        exclude_self: args.exclude_self,
    };
    let engine = Engine::new();
    let lists = engine.query_all(&queries, &index, &options)?;
    let c = engine.counters();
    log::info!(
        "{} queries, {} pair scores, {} similarity evaluations",
        lists.len(),
        c.pair_aggregations,
        c.similarity_evaluations
    );
    Ok(lists)
}

pub fn query(args: QueryArgs) -> Result<ExitCode> {
    let lists = rank_all(&args.rank)?;
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            write_rankings(&lists, &mut w)?;
            w.flush()?;
        }
        None => write_rankings(&lists, io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let qrels = Qrels::read(&args.qrels)?;
    let tasks = match &args.tasks {
        Some(path) => {
            let all = read_tasks(path)?;
            match &args.task {
                Some(name) => vec![all
                    .into_iter()
                    .find(|t| &t.name == name)
                    .with_context(|| format!("task {name:?} not in {}", path.display()))?],
                None => all,
            }
        }
        None => vec![Task::any_label(&qrels)],
    };
    if tasks.is_empty() {
        bail!("no tasks defined");
    }
    let lists = rank_all(&args.rank)?;
    if let Some(path) = &args.rankings_out {
        let mut w = create(path)?;
        write_rankings(&lists, &mut w)?;
        w.flush()?;
    }
    let mut out = io::stdout().lock();
    for task in &tasks {
        let report = mean_average_precision(&lists, &qrels, task)?;
        writeln!(out, "task\t{}\tmAP\t{:.4}\tqueries\t{}", report.task, report.map, report.per_query.len())?;
        if let Some(m) = report.macro_map {
            writeln!(out, "task\t{}\tmacro-mAP\t{m:.4}", report.task)?;
            for (g, v) in &report.per_group {
                writeln!(out, "group\t{}\t{g}\t{v:.4}", report.task)?;
            }
        }
        if args.per_query {
            for (q, ap) in &report.per_query {
                writeln!(out, "query\t{}\t{q}\t{ap:.4}", report.task)?;
            }
        }
        if !report.excluded.is_empty() {
            log::warn!(
                "task {}: {} queries without positives excluded",
                report.task,
                report.excluded.len()
            );
        }
        if !report.empty.is_empty() {
            log::warn!("task {}: {} queries with empty rankings", report.task, report.empty.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn selfcheck(args: SelfcheckArgs) -> Result<ExitCode> {
    let report = run_selfcheck(&SelfCheckOptions {
        tolerance_scale: args.tolerance_scale,
        seed: args.seed,
    });
    let mut out = io::stdout().lock();
    for c in &report.checks {
        writeln!(
            out,
            "{}\t{}\t{} ({:.2}s)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail,
            c.seconds
        )?;
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
