use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use csd_core::conversation::{
    load_threads, make_all_instances, split_dataset, DatasetSplit, SkipReport, SplitPart, Stance, StanceInstance,
};
use csd_core::harness::report::{write_ablation_csv, write_cross_target_csv, write_json};
use csd_core::harness::{
    annotate_instances, check_compatible, evaluate, needed_kinds, relation_stance_heatmap, ConfusionMatrix, Experiment,
    MetricsReport, RunDir, SeedSummary, TrainConfig, CROSS_TARGET_PAIRS, TARGET_CODES,
};
use csd_core::kam::{
    prompt_count, AnnotationCache, Annotator, HttpProvider, Provider, RelationAnnotations, StubProvider,
};
use csd_core::mkian::{AblationFlags, Checkpoint, Encoder, Mkian, Stream};
use csd_core::synthetic::{generate_threads, to_jsonl, SyntheticConfig};

use crate::config::RunConfig;
use crate::error::CliError;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// Written by `ingest`; later commands reuse its split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub data: PathBuf,
    pub threads: usize,
    pub instances: usize,
    pub skipped: SkipReport,
    /// `[train, dev, test]` per target.
    pub counts: BTreeMap<String, [usize; 3]>,
    pub split: DatasetSplit,
}

pub struct Dataset {
    pub threads: usize,
    pub instances: Vec<StanceInstance>,
    pub skipped: SkipReport,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg.data_path()?;
    let threads = load_threads(path)?;
    if threads.is_empty() {
        return Err(CliError::input(format!("no threads found in {}", path.display())));
    }
    let (instances, skipped) = make_all_instances(&threads);
    if instances.is_empty() {
        return Err(CliError::input(format!("no labeled instances in {}", path.display())));
    }
    Ok(Dataset {
        threads: threads.len(),
        instances,
        skipped,
    })
}

/// The manifest's split when it covers every instance, else a fresh split.
fn load_split(cfg: &RunConfig, instances: &[StanceInstance]) -> Result<DatasetSplit, CliError> {
    let path = cfg.manifest_path();
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let s = &manifest.split;
        if instances
            .iter()
            .all(|i| s.train.contains(&i.id) || s.dev.contains(&i.id) || s.test.contains(&i.id))
        {
            return Ok(manifest.split);
        }
        log::warn!("{} does not cover the data; re-splitting", path.display());
    }
    Ok(split_dataset(instances, cfg.split_seed)?)
}

fn split_counts_by_target(instances: &[StanceInstance], split: &DatasetSplit) -> BTreeMap<String, [usize; 3]> {
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for (k, part) in [SplitPart::Train, SplitPart::Dev, SplitPart::Test]
        .into_iter()
        .enumerate()
    {
        for inst in split.select(instances, part) {
            counts.entry(inst.target.name.clone()).or_default()[k] += 1;
        }
    }
    counts
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let split = split_dataset(&data.instances, cfg.split_seed)?;
    let counts = split_counts_by_target(&data.instances, &split);
    create_dir(&cfg.out)?;
    let manifest = Manifest {
        data: cfg.data_path()?.to_path_buf(),
        threads: data.threads,
        instances: data.instances.len(),
        skipped: data.skipped.clone(),
        counts,
        split,
    };
    write_json(&cfg.manifest_path(), &manifest)?;
    println!("threads: {}  instances: {}", manifest.threads, manifest.instances);
    println!(
        "skipped: {} unlabeled, {} irrelevant",
        manifest.skipped.unlabeled, manifest.skipped.irrelevant
    );
    println!("{:<16} {:>6} {:>6} {:>6}", "target", "train", "dev", "test");
    for (t, [tr, dv, te]) in &manifest.counts {
        println!("{t:<16} {tr:>6} {dv:>6} {te:>6}");
    }
    println!("manifest: {}", cfg.manifest_path().display());
    Ok(())
}

fn resolve_target_name(instances: &[StanceInstance], name: &str) -> Result<String, CliError> {
    let full = TARGET_CODES
        .iter()
        .find(|(c, _)| c.eq_ignore_ascii_case(name))
        .map(|(_, n)| *n)
        .unwrap_or(name);
    instances
        .iter()
        .map(|i| &i.target.name)
        .find(|t| t.eq_ignore_ascii_case(full))
        .cloned()
        .ok_or_else(|| CliError::input(format!("unknown target `{name}`")))
}

fn restrict<'a>(instances: &'a [StanceInstance], target: Option<&str>) -> Vec<StanceInstance> {
    instances
        .iter()
        .filter(|i| target.is_none_or(|t| i.target.name == t))
        .cloned()
        .collect()
}

fn open_cache(cfg: &RunConfig) -> Result<AnnotationCache, CliError> {
    let path = cfg.cache_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    Ok(AnnotationCache::open(&path)?)
}

/// Runs `f` with an annotator backed by the stub, the configured endpoint,
/// or the cache alone when neither is available.
fn with_annotator<R>(cfg: &RunConfig, f: impl FnOnce(&Annotator<'_>) -> Result<R, CliError>) -> Result<R, CliError> {
    let cache = open_cache(cfg)?;
    let provider_cfg = cfg.provider.clone().with_env();
    provider_cfg.validate()?;
    let max = provider_cfg.max_in_flight;
    if cfg.stub {
        let stub = StubProvider::new();
        f(&Annotator::new(&stub, &cache).with_max_in_flight(max))
    } else if !provider_cfg.endpoint.is_empty() {
        let http = HttpProvider::from_env(provider_cfg)?;
        f(&Annotator::new(&http as &dyn Provider, &cache).with_max_in_flight(max))
    } else {
        f(&Annotator::cache_only(&cache, &provider_cfg.model))
    }
}

fn annotate_all(
    cfg: &RunConfig,
    instances: &[StanceInstance],
    flags: &AblationFlags,
) -> Result<HashMap<String, RelationAnnotations>, CliError> {
    if needed_kinds(flags).is_empty() {
        return Ok(HashMap::new());
    }
    with_annotator(cfg, |a| Ok(annotate_instances(a, instances, flags)?))
}

pub fn annotate(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let target = cfg
        .target
        .as_deref()
        .map(|t| resolve_target_name(&data.instances, t))
        .transpose()?;
    let instances = restrict(&data.instances, target.as_deref());
    let kinds = needed_kinds(&cfg.train.flags);
    if dry_run {
        let n = prompt_count(instances.iter().map(|i| i.chain.len()), kinds.len());
        println!("instances: {}", instances.len());
        println!("prompts: {n}");
        return Ok(());
    }
    if !cfg.stub && cfg.provider.clone().with_env().endpoint.is_empty() {
        log::info!("no provider configured; resolving from the cache only");
    }
    let chains: Vec<&[csd_core::conversation::Utterance]> = instances.iter().map(|i| i.chain.as_slice()).collect();
    let stats = with_annotator(cfg, |a| {
        a.annotate_chains(&chains, &kinds)?;
        Ok(a.stats())
    })?;
    println!("instances: {}", instances.len());
    println!("queries: {}", stats.queries);
    println!("provider calls: {}", stats.provider_calls);
    println!("cache hits: {} ({:.1}%)", stats.cache_hits, 100.0 * stats.hit_rate());
    println!("cache: {}", cfg.cache_path().display());
    Ok(())
}

/// Owned data behind an [`Experiment`].
struct Context {
    cfg: RunConfig,
    instances: Vec<StanceInstance>,
    split: DatasetSplit,
    annotations: HashMap<String, RelationAnnotations>,
    encoder: Box<dyn Encoder>,
}

impl Context {
    /// Restricted to `target` when given; annotated for `flags`.
    fn load(cfg: &RunConfig, target: Option<&str>, flags: &AblationFlags) -> Result<Context, CliError> {
        let data = load_dataset(cfg)?;
        let split = load_split(cfg, &data.instances)?;
        let instances = restrict(&data.instances, target);
        let annotations = annotate_all(cfg, &instances, flags)?;
        Ok(Context {
            encoder: cfg.build_encoder()?,
            cfg: cfg.clone(),
            instances,
            split,
            annotations,
        })
    }

    fn experiment(&self) -> Experiment<'_> {
        Experiment {
            instances: &self.instances,
            split: &self.split,
            annotations: &self.annotations,
            encoder: self.encoder.as_ref(),
            model: self.cfg.model.clone(),
            train: self.cfg.train.clone(),
        }
    }
}

fn target_arg(cfg: &RunConfig) -> Result<Option<String>, CliError> {
    match cfg.target.as_deref() {
        None => Ok(None),
        Some(t) => {
            let data = load_dataset(cfg)?;
            resolve_target_name(&data.instances, t).map(Some)
        }
    }
}

/// Accepts `local`, `contextual`, `logical`/`lr`, `act`/`ca`.
pub fn parse_ablation(name: &str) -> Result<Stream, CliError> {
    let n = name.trim().to_ascii_lowercase();
    let n = n.strip_prefix("w/o").map(str::trim).unwrap_or(&n);
    match n {
        "local" => Ok(Stream::Local),
        "contextual" => Ok(Stream::Contextual),
        "logical" | "lr" => Ok(Stream::Logical),
        "act" | "ca" => Ok(Stream::Act),
        _ => Err(CliError::input(format!(
            "unknown layer `{name}` (expected local, contextual, logical or act)"
        ))),
    }
}

pub fn parse_seeds(list: &str) -> Result<Vec<u64>, CliError> {
    list.split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::input(format!("bad seed `{s}`"))))
        .collect()
}

fn slug(name: &str) -> String {
    name.to_lowercase().replace([' ', '/'], "-")
}

pub fn train(cfg: &RunConfig, ablate: Option<&str>) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    let mut suffix = String::new();
    if let Some(a) = ablate {
        let stream = parse_ablation(a)?;
        cfg.train.flags = AblationFlags::without(stream);
        suffix = format!("-wo-{}", stream.prefix().trim_end_matches('.'));
    }
    cfg.train.flags.validate()?;
    let target = target_arg(&cfg)?;
    let ctx = Context::load(&cfg, target.as_deref(), &cfg.train.flags)?;
    let exp = ctx.experiment();
    let base = target.as_deref().map(slug).unwrap_or_else(|| "all".to_string());
    let seeds = cfg.seed_list();
    let mut scores = Vec::new();
    for &seed in &seeds {
        let name = format!("{base}{suffix}-s{seed}");
        let run = exp.run(&name, target.as_deref(), target.as_deref(), cfg.train.flags, seed)?;
        let dir = RunDir::create(&cfg.out, &name)?;
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        run_cfg.train.seed = seed;
        dir.write_config(&run_cfg)?;
        dir.write_checkpoint(&run.outcome.model.checkpoint())?;
        dir.write_history(&run.outcome.history)?;
        dir.write_report(&run.report)?;
        println!(
            "{name}: best epoch {} dev F_avg {:.4} test F_avg {:.4} accuracy {:.4}",
            run.outcome.best_epoch, run.outcome.best_dev_f_avg, run.report.macro_f_avg, run.report.accuracy
        );
        scores.push(run.report.macro_f_avg);
    }
    if seeds.len() > 1 {
        let summary = SeedSummary::new(seeds, scores);
        write_json(&cfg.out.join(format!("{base}{suffix}-seeds.json")), &summary)?;
        println!("test F_avg over seeds: {summary}");
    }
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
struct PredictionRecord {
    id: String,
    stance: Stance,
}

/// Scores `{"id", "stance"}` JSONL predictions against the data's gold labels.
fn eval_predictions(cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let gold: HashMap<&str, &StanceInstance> = data.instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut per_target: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    let mut pooled = ConfusionMatrix::default();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(line).map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), k + 1)))?;
        let inst = gold
            .get(rec.id.as_str())
            .ok_or_else(|| CliError::input(format!("{}:{}: unknown instance `{}`", path.display(), k + 1, rec.id)))?;
        let mut one = ConfusionMatrix::default();
        one.counts[inst.gold.index()][rec.stance.index()] = 1;
        pooled.add(&one);
        per_target.entry(inst.target.name.clone()).or_default().add(&one);
    }
    if pooled.total() == 0 {
        return Err(CliError::input(format!("{}: no predictions", path.display())));
    }
    for (t, cm) in &per_target {
        println!("{t}: F_avg {:.4} ({} instances)", cm.f_avg(), cm.total());
    }
    let macro_f = per_target.values().map(|c| c.f_avg()).sum::<f64>() / per_target.len() as f64;
    println!("Avg.: F_avg {macro_f:.4}");
    println!("F_avg {:.4}", pooled.f_avg());
    Ok(())
}

fn print_report(report: &MetricsReport) {
    for t in &report.per_target {
        println!(
            "{}: F_favor {:.4} F_against {:.4} F_avg {:.4} ({} instances)",
            t.target, t.f_favor, t.f_against, t.f_avg, t.count
        );
    }
    println!("Avg.: F_avg {:.4}", report.macro_f_avg);
    for (label, count) in &report.bucket_counts {
        match report.bucket_f_avg.get(label) {
            Some(f) => println!("depth {label}: F_avg {f:.4} ({count} instances)"),
            None => println!("depth {label}: - (0 instances)"),
        }
    }
    println!("F_avg {:.4}", report.pooled_f_avg);
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, predictions: Option<&Path>) -> Result<(), CliError> {
    if let Some(p) = predictions {
        return eval_predictions(cfg, p);
    }
    let path = checkpoint.ok_or_else(|| CliError::input("eval needs --checkpoint or --predictions"))?;
    let model = Mkian::from_checkpoint(Checkpoint::load(path)?)?;
    let mut cfg = cfg.clone();
    cfg.model = model.config.clone();
    cfg.train = TrainConfig {
        flags: model.flags,
        encoder_mode: model.config.encoder_mode,
        ..cfg.train
    };
    check_compatible(&model, cfg.build_encoder()?.as_ref())?;
    let target = target_arg(&cfg)?;
    let ctx = Context::load(&cfg, target.as_deref(), &model.flags)?;
    let test = ctx
        .experiment()
        .prepared(SplitPart::Test, target.as_deref(), &model.flags)?;
    let name = format!(
        "eval-{}",
        target.as_deref().map(slug).unwrap_or_else(|| "all".to_string())
    );
    let report = evaluate(&model, &test, &name);
    let dir = RunDir::create(&cfg.out, &name)?;
    dir.write_report(&report)?;
    print_report(&report);
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let target = target_arg(cfg)?;
    if target.is_some() {
        log::warn!("ablation pools all targets; --target restricts the data only");
    }
    let ctx = Context::load(cfg, target.as_deref(), &AblationFlags::ALL_ON)?;
    let table = ctx.experiment().run_ablation(&cfg.seed_list())?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("ablation.json"), &table)?;
    write_ablation_csv(&cfg.out.join("ablation.csv"), &table)?;
    println!("full model: F_avg {:.4}", table.full_f_avg);
    for r in &table.rows {
        println!("{}: F_avg {:.4} ({:+.4})", r.variant, r.f_avg, r.delta);
    }
    Ok(())
}

/// `standard` (alias `table9`) or a comma list such as `DT:JB,TS:SX`.
pub fn parse_pairs(spec: &str) -> Result<Vec<(String, String)>, CliError> {
    match spec {
        "standard" | "table9" => Ok(CROSS_TARGET_PAIRS
            .iter()
            .map(|(s, d)| (s.to_string(), d.to_string()))
            .collect()),
        list => list
            .split(',')
            .map(|p| match p.split_once(':') {
                Some((s, d)) if !s.trim().is_empty() && !d.trim().is_empty() => {
                    Ok((s.trim().to_string(), d.trim().to_string()))
                }
                _ => Err(CliError::input(format!("bad pair `{p}` (expected SRC:DST)"))),
            })
            .collect(),
    }
}

pub fn crosstarget(cfg: &RunConfig, pairs: &str, dry_run: bool) -> Result<(), CliError> {
    let pairs = parse_pairs(pairs)?;
    if dry_run {
        for (s, d) in &pairs {
            println!("{s}→{d}");
        }
        return Ok(());
    }
    let ctx = Context::load(cfg, None, &cfg.train.flags)?;
    let exp = ctx.experiment();
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(s, d)| (s.as_str(), d.as_str())).collect();
    let rows = exp.run_cross_targets(&refs)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("crosstarget.json"), &rows)?;
    write_cross_target_csv(&cfg.out.join("crosstarget.csv"), &rows)?;
    for r in &rows {
        println!("{}: F_avg {:.4}", r.label, r.f_avg);
    }
    Ok(())
}

/// Collects `<out>/*/report.json` into one summary and, given data, writes
/// the relation/stance co-occurrence tables.
pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let mut reports: Vec<MetricsReport> = Vec::new();
    if cfg.out.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&cfg.out)
            .map_err(|e| io_error(&cfg.out, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("report.json").is_file())
            .collect();
        dirs.sort();
        for d in dirs {
            let p = d.join("report.json");
            let text = fs::read_to_string(&p).map_err(|e| io_error(&p, e))?;
            reports.push(serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?);
        }
    }
    if reports.is_empty() && cfg.data.is_none() {
        return Err(CliError::input(format!("no run reports under {}", cfg.out.display())));
    }
    if !reports.is_empty() {
        let mut csv = String::from("run,seed,macro_f_avg,pooled_f_avg,accuracy\n");
        for r in &reports {
            println!(
                "{}: Avg. F_avg {:.4} pooled {:.4} accuracy {:.4}",
                r.metadata.name, r.macro_f_avg, r.pooled_f_avg, r.accuracy
            );
            csv += &format!(
                "{},{},{},{},{}\n",
                r.metadata.name, r.metadata.seed, r.macro_f_avg, r.pooled_f_avg, r.accuracy
            );
        }
        let path = cfg.out.join("summary.csv");
        fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
    }
    if cfg.data.is_some() {
        let data = load_dataset(cfg)?;
        let target = cfg
            .target
            .as_deref()
            .map(|t| resolve_target_name(&data.instances, t))
            .transpose()?;
        let instances = restrict(&data.instances, target.as_deref());
        let anns = annotate_all(cfg, &instances, &AblationFlags::ALL_ON)?;
        let tables = relation_stance_heatmap(&instances, &anns);
        create_dir(&cfg.out)?;
        write_json(&cfg.out.join("heatmap.json"), &tables)?;
        for table in [
            &tables.logical_given_stance,
            &tables.act_given_stance,
            &tables.act_given_logical,
        ] {
            println!("P({} | {}):", table.of, table.given);
            for (row, cols) in &table.probs {
                let cells: Vec<String> = cols.iter().map(|(c, p)| format!("{c} {p:.3}")).collect();
                println!("  {row}: {}", cells.join(", "));
            }
        }
    }
    Ok(())
}

pub fn gen_synthetic(out: &Path, threads_per_target: usize, seed: u64) -> Result<(), CliError> {
    let threads = generate_threads(&SyntheticConfig {
        threads_per_target,
        seed,
        ..SyntheticConfig::default()
    });
    create_dir(out)?;
    let path = out.join("threads.jsonl");
    fs::write(&path, to_jsonl(&threads)).map_err(|e| io_error(&path, e))?;
    println!("{} threads written to {}", threads.len(), path.display());
    Ok(())
}
