use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crosswalk_core::annotate::{apply_overrides, OverrideSet};
use crosswalk_core::baseline::{train_baseline, BaselineModel, TrainConfig};
use crosswalk_core::dataset::{apply_negative_sampling, read_manifest, split_by_region, write_manifest};
use crosswalk_core::eval::{
    confusion, instance_accuracy, parse_metric_file, paired_t_test, read_predictions, read_spans,
    spans_from_labels, write_predictions, write_spans, FramePredictions, MajorityRule, Prediction,
};
use crosswalk_core::pipeline::{generation_params, harvest, plan, HarvestOptions, Thresholds};
use crosswalk_core::providers::http::{write_atomic, DiskCache, ReqwestTransport, RetryPolicy};
use crosswalk_core::providers::live::{live_providers, LiveOptions};
use crosswalk_core::providers::sim::{SimWorld, SimWorldSpec};
use crosswalk_core::providers::QuotaLedger;
use crosswalk_core::seed::derive_seed;
use crosswalk_core::{DatasetManifest, Error, EvalReport, Providers, Region, Result, Split};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, ProviderKind};
use crate::{Cli, Command, GlobalArgs, ThresholdArgs};

/// Counts and settings recorded for every command.
#[derive(Debug, Serialize)]
struct RunReport {
    command: &'static str,
    seed: Option<u64>,
    provider: Option<String>,
    counts: Value,
    quota: BTreeMap<String, u64>,
    outputs: Vec<String>,
}

struct Context<'a> {
    global: &'a GlobalArgs,
    config: Option<Config>,
    out: PathBuf,
}

impl Context<'_> {
    fn config(&self) -> Result<&Config> {
        self.config.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("configuration file {} not found", self.global.config.display()))
        })
    }

    fn seed(&self) -> Result<u64> {
        Ok(self.global.seed.unwrap_or(self.config()?.seed))
    }

    fn path(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(default))
    }

    fn thresholds(&self) -> Result<Thresholds> {
        let mut t = self.config()?.thresholds;
        apply_threshold_flags(&mut t, &self.global.thresholds);
        t.validate()?;
        Ok(t)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let n = self
            .global
            .parallelism
            .or(self.config.as_ref().and_then(|c| c.parallelism))
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4));
        if n == 0 {
            return Err(Error::InvalidConfig("parallelism must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
    }

    fn report(&self, report: RunReport) -> Result<()> {
        let dir = self.out.join("reports");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", report.command));
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)
    }
}

fn apply_threshold_flags(t: &mut Thresholds, f: &ThresholdArgs) {
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {$(
            if let Some(v) = f.$flag {
                t.$field = v;
            }
        )*};
    }
    set!(
        max_span <- threshold_max_span,
        min_sites <- threshold_min_sites,
        max_sites <- threshold_max_sites,
        max_depth <- threshold_max_depth,
        spacing <- threshold_spacing,
        snap_radius <- threshold_snap_radius,
        half_angle <- threshold_half_angle,
        min_distance <- threshold_min_distance,
        max_distance <- threshold_max_distance
    );
}

/// The providers selected by flags and config, plus the parameters echoed
/// into the manifest.
fn providers(ctx: &Context, thresholds: &Thresholds, offline: bool) -> Result<(Providers, Value)> {
    let config = ctx.config()?;
    let kind = ctx.global.provider.unwrap_or(config.provider.kind);
    match kind {
        ProviderKind::Sim => {
            let sim = &config.provider.sim;
            let bounds = match sim.bounds {
                Some([s, w, n, e]) => Region::from_bounds(s, w, n, e)?,
                None => config.bounding_box(),
            };
            let spec = SimWorldSpec {
                seed: sim.seed.unwrap_or(derive_seed(ctx.seed()?, "world")),
                bounds,
                block_size: sim.block_size,
                site_probability: sim.site_probability,
                pano_spacing: sim.pano_spacing,
                pano_jitter: sim.pano_jitter,
                snap_radius: thresholds.snap_radius,
            };
            let echo = serde_json::to_value(&spec)?;
            let world = SimWorld::new(spec)?.with_ledger(Arc::new(QuotaLedger::new(config.limits())));
            Ok((Providers::simulated(Arc::new(world)), echo))
        }
        ProviderKind::Live => {
            // The key is read here and handed to the clients only.
            let api_key = match std::env::var(&config.api_key_env) {
                Ok(k) if !k.is_empty() => k,
                _ if offline => String::new(),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "environment variable {} must hold the imagery API key",
                        config.api_key_env
                    )))
                }
            };
            let cache_dir = ctx
                .global
                .cache
                .clone()
                .or_else(|| config.cache_dir.clone())
                .unwrap_or_else(|| ctx.out.join("cache"));
            let live = &config.provider.live;
            let options = LiveOptions {
                endpoints: live.endpoints.clone(),
                api_key,
                max_span: thresholds.max_span,
                snap_radius: thresholds.snap_radius,
                cache: Some(DiskCache::new(cache_dir)),
                retry: RetryPolicy::default(),
                offline,
            };
            let transport = ReqwestTransport::new(Duration::from_secs(live.timeout_secs.unwrap_or(60)))?;
            let echo = json!({
                "endpoints": live.endpoints,
                "limits": config.limits().iter().map(|(s, l)| (s.name(), *l)).collect::<BTreeMap<_, _>>(),
            });
            let ledger = Arc::new(QuotaLedger::new(config.limits()));
            Ok((live_providers(options, Arc::new(transport), ledger), echo))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(path, text.as_bytes())
}

fn image_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(Error::InvalidConfig)
}

pub fn run(cli: &Cli) -> Result<()> {
    let global = &cli.global;
    let config = if global.config.exists() {
        Some(Config::load(&global.config)?)
    } else {
        None
    };
    let out = global
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context { global, config, out };
    match &cli.command {
        Command::Plan => cmd_plan(&ctx),
        Command::Harvest { dry_run } => cmd_harvest(&ctx, *dry_run),
        Command::Annotate { overrides, manifest } => cmd_annotate(&ctx, overrides, &ctx.path(manifest, "manifest.jsonl")),
        Command::Split { manifest } => cmd_split(&ctx, &ctx.path(manifest, "manifest.jsonl")),
        Command::TrainBaseline { manifest, model } => {
            cmd_train(&ctx, &ctx.path(manifest, "manifest.jsonl"), &ctx.path(model, "model.bin"))
        }
        Command::Predict {
            manifest,
            model,
            split,
            predictions,
        } => cmd_predict(
            &ctx,
            &ctx.path(manifest, "manifest.jsonl"),
            &ctx.path(model, "model.bin"),
            parse_split(split)?,
            &ctx.path(predictions, "predictions.tsv"),
        ),
        Command::Eval {
            manifest,
            predictions,
            split,
            spans,
            inclusive_majority,
            threshold,
        } => {
            let rule = if *inclusive_majority {
                MajorityRule::Inclusive
            } else {
                MajorityRule::Strict
            };
            cmd_eval(
                &ctx,
                &ctx.path(manifest, "manifest.jsonl"),
                &ctx.path(predictions, "predictions.tsv"),
                parse_split(split)?,
                spans.as_deref(),
                rule,
                *threshold,
            )
        }
        Command::Compare { a, b } => cmd_compare(&ctx, a, b),
    }
}

fn cmd_plan(ctx: &Context) -> Result<()> {
    let t = ctx.thresholds()?;
    let (providers, _) = providers(ctx, &t, false)?;
    let plans = plan(&providers, &ctx.config()?.regions, &t, false)?;
    for p in &plans {
        println!("region {}: {} grid tile(s)", p.name, p.grid_tiles.len());
        for g in &p.grid_tiles {
            println!(
                "  tile {} [{:.6}, {:.6}] - [{:.6}, {:.6}] sites {}",
                g.id,
                g.south,
                g.west,
                g.north,
                g.east,
                g.sites.map_or("?".into(), |n| n.to_string())
            );
        }
        let kept: Vec<_> = p.kept().collect();
        println!("  kept {} of {} leaves; {} route request(s)", kept.len(), p.leaves.len(), p.route_requests);
        for k in kept {
            println!("  kept {} sites {}", k.id, k.sites.unwrap_or(0));
        }
    }
    let path = ctx.out.join("plan.json");
    write_text(&path, &(serde_json::to_string_pretty(&plans)? + "\n"))?;
    ctx.report(RunReport {
        command: "plan",
        seed: Some(ctx.seed()?),
        provider: Some(providers.identity.clone()),
        counts: json!({
            "regions": plans.len(),
            "grid_tiles": plans.iter().map(|p| p.grid_tiles.len()).sum::<usize>(),
            "kept": plans.iter().map(|p| p.kept().count()).sum::<usize>(),
            "route_requests": plans.iter().map(|p| p.route_requests).sum::<usize>(),
        }),
        quota: providers.ledger.usage(),
        outputs: vec![path.display().to_string()],
    })
}

fn cmd_harvest(ctx: &Context, dry_run: bool) -> Result<()> {
    let t = ctx.thresholds()?;
    let config = ctx.config()?;
    let seed = ctx.seed()?;
    let (providers, echo) = providers(ctx, &t, dry_run)?;
    if dry_run {
        let plans = plan(&providers, &config.regions, &t, true)?;
        let pending: usize = plans.iter().map(|p| p.pending_site_queries).sum();
        let routes: usize = plans.iter().map(|p| p.route_requests).sum();
        let kept: usize = plans.iter().map(|p| p.kept().count()).sum();
        println!("dry run: {kept} kept sub-region(s), {routes} directions request(s), {pending} uncached site quer(ies)");
        return ctx.report(RunReport {
            command: "harvest-dry-run",
            seed: Some(seed),
            provider: Some(providers.identity.clone()),
            counts: json!({ "kept": kept, "route_requests": routes, "pending_site_queries": pending }),
            quota: providers.ledger.usage(),
            outputs: vec![],
        });
    }
    let options = HarvestOptions {
        thresholds: t,
        seed: derive_seed(seed, "harvest"),
        shuffle_sites: config.shuffle_sites,
    };
    let pool = ctx.pool()?;
    std::fs::create_dir_all(&ctx.out)?;
    let (samples, counts) = harvest(&providers, &config.regions, &options, &pool, &ctx.out)?;
    let mut params = generation_params(&config.regions, &options, &providers.identity, echo);
    params["run_seed"] = json!(seed);
    let manifest = DatasetManifest::new(params, samples)?;
    let path = ctx.out.join("manifest.jsonl");
    write_manifest(&manifest, &path)?;
    println!(
        "harvested {} samples ({} positive, {} negative) into {}",
        counts.samples,
        counts.positives,
        counts.negatives,
        path.display()
    );
    ctx.report(RunReport {
        command: "harvest",
        seed: Some(seed),
        provider: Some(providers.identity.clone()),
        counts: serde_json::to_value(&counts)?,
        quota: providers.ledger.usage(),
        outputs: vec![path.display().to_string()],
    })
}

fn cmd_annotate(ctx: &Context, overrides: &Path, manifest_path: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let set = OverrideSet::read(overrides)?;
    let samples = apply_overrides(&m.samples, &set)?;
    let changed = samples.iter().zip(&m.samples).filter(|(a, b)| a.label.value != b.label.value).count();
    let updated = DatasetManifest { samples, ..m };
    write_manifest(&updated, manifest_path)?;
    println!("applied {} override(s), {changed} label(s) changed", set.len());
    ctx.report(RunReport {
        command: "annotate",
        seed: None,
        provider: None,
        counts: json!({ "overrides": set.len(), "changed": changed }),
        quota: BTreeMap::new(),
        outputs: vec![manifest_path.display().to_string()],
    })
}

fn cmd_split(ctx: &Context, manifest_path: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let seed = ctx.seed()?;
    let spec = crosswalk_core::SplitSpec {
        seed: derive_seed(seed, "split"),
        ..ctx.config()?.split
    };
    let split = apply_negative_sampling(&split_by_region(&m, &spec)?, &spec)?;
    write_manifest(&split, manifest_path)?;

    // Ground-truth crosswalk instances of the test regions.
    let frames: Vec<(String, u64, bool)> = split
        .samples_in(Split::Test)
        .filter_map(|s| s.frame_index.map(|f| (s.region_id.clone(), f, s.label.value.is_positive())))
        .collect();
    let spans = spans_from_labels(&frames);
    let spans_path = manifest_path.with_file_name("spans.tsv");
    write_text(&spans_path, &write_spans(&spans))?;

    let mut counts = BTreeMap::new();
    for s in &split.samples {
        let key = format!("{}_{}", split.split_of(&s.sample_id).as_str(), s.label.value.as_str());
        *counts.entry(key).or_insert(0usize) += 1;
    }
    let test_regions: Vec<&str> = {
        let mut r: Vec<&str> = split.samples_in(Split::Test).map(|s| s.region_id.as_str()).collect();
        r.sort_unstable();
        r.dedup();
        r
    };
    println!("test regions: {}", test_regions.join(", "));
    for (k, v) in &counts {
        println!("  {k:<20} {v}");
    }
    ctx.report(RunReport {
        command: "split",
        seed: Some(seed),
        provider: None,
        counts: json!({ "by_split_and_label": counts, "test_regions": test_regions, "test_instances": spans.len() }),
        quota: BTreeMap::new(),
        outputs: vec![manifest_path.display().to_string(), spans_path.display().to_string()],
    })
}

fn cmd_train(ctx: &Context, manifest_path: &Path, model_path: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let seed = ctx.seed()?;
    let config = TrainConfig {
        seed: derive_seed(seed, "train"),
        ..ctx.config()?.train
    };
    let train: Vec<_> = m.samples_in(Split::Train).cloned().collect();
    let (model, report) = train_baseline(&train, &image_root(manifest_path), &config)?;
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(model_path, &model.to_bytes())?;
    println!(
        "trained on {} samples: loss {:.4} -> {:.4}, training accuracy {:.4}",
        report.samples, report.initial_loss, report.final_loss, report.train_accuracy
    );
    ctx.report(RunReport {
        command: "train-baseline",
        seed: Some(seed),
        provider: None,
        counts: serde_json::to_value(&report)?,
        quota: BTreeMap::new(),
        outputs: vec![model_path.display().to_string()],
    })
}

fn cmd_predict(ctx: &Context, manifest_path: &Path, model_path: &Path, split: Split, out: &Path) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let model = BaselineModel::from_bytes(&std::fs::read(model_path)?)?;
    let samples: Vec<_> = m.samples_in(split).cloned().collect();
    let pool = ctx.pool()?;
    let probs = pool.install(|| model.predict_samples(&samples, &image_root(manifest_path)))?;
    let preds: Vec<Prediction> = samples
        .iter()
        .zip(probs)
        .map(|(s, p)| Prediction {
            sample_id: s.sample_id.clone(),
            prob_positive: p,
        })
        .collect();
    write_text(out, &write_predictions(&preds))?;
    println!("wrote {} prediction(s) to {}", preds.len(), out.display());
    ctx.report(RunReport {
        command: "predict",
        seed: None,
        provider: None,
        counts: json!({ "split": split.as_str(), "predictions": preds.len() }),
        quota: BTreeMap::new(),
        outputs: vec![out.display().to_string()],
    })
}

fn cmd_eval(
    ctx: &Context,
    manifest_path: &Path,
    predictions: &Path,
    split: Split,
    spans: Option<&Path>,
    rule: MajorityRule,
    threshold: f64,
) -> Result<()> {
    let m = read_manifest(manifest_path)?;
    let preds = read_predictions(predictions)?;
    let samples: Vec<_> = m.samples_in(split).collect();
    let truth: Vec<_> = samples.iter().map(|s| (s.sample_id.clone(), s.label.value)).collect();
    let counts = confusion(&preds, &truth, threshold)?;

    let instance = match spans {
        Some(path) => {
            let spans = read_spans(path)?;
            let prob: BTreeMap<&str, f64> = preds.iter().map(|p| (p.sample_id.as_str(), p.prob_positive)).collect();
            let mut frames = FramePredictions::new();
            for s in &samples {
                if let Some(f) = s.frame_index {
                    frames
                        .entry(s.region_id.clone())
                        .or_default()
                        .insert(f, prob[s.sample_id.as_str()] > threshold);
                }
            }
            Some(instance_accuracy(&frames, &spans, rule)?)
        }
        None => None,
    };
    let report = EvalReport::from_counts(counts, threshold, instance)?;
    print!("{}", report.to_text());
    let json_path = ctx.out.join("eval.json");
    write_text(&json_path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    ctx.report(RunReport {
        command: "eval",
        seed: None,
        provider: None,
        counts: serde_json::to_value(&report)?,
        quota: BTreeMap::new(),
        outputs: vec![json_path.display().to_string()],
    })
}

fn cmd_compare(ctx: &Context, a: &Path, b: &Path) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<f64>> { parse_metric_file(&std::fs::read_to_string(p)?, &p.display().to_string()) };
    let (xa, xb) = (read(a)?, read(b)?);
    let r = paired_t_test(&xa, &xb)?;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    println!("runs        {}", xa.len());
    println!("mean a      {:.6}", mean(&xa));
    println!("mean b      {:.6}", mean(&xb));
    println!("t           {:.4}", r.t);
    println!("p           {:.6}", r.p_two_sided);
    println!(
        "significant {}{}",
        if r.significant { "yes" } else { "no" },
        if r.degenerate { " (zero variance)" } else { "" }
    );
    info!("compared {} and {}", a.display(), b.display());
    ctx.report(RunReport {
        command: "compare",
        seed: None,
        provider: None,
        counts: serde_json::to_value(r)?,
        quota: BTreeMap::new(),
        outputs: vec![],
    })
}
