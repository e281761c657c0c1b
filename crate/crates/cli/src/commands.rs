use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cat_core::affinity::{
    binarize_hard, combine_majority, confusion_affinity_with, cosine_affinity, prototype_from_patches_with,
    AffinityMatrix, FallbackRanking, Method, TrigramEmbedder, VoteRule, ZeroRowPolicy,
};
use cat_core::data::{load_label_dir, load_patch_dir, ClassSet, FeatureTable};
use cat_core::metrics::{
    confusion_counts, frechet_distance, gaussian_stats_with, kid_from_tables_with, miou, IouScheme, KidConfig,
};
use cat_core::sampling::{greedy_select_items, KlDirection, PoolItem, SamplerConfig};
use cat_core::toylab::{run_experiment, ToyConfig};
use cat_core::transfer::{apply_hard, apply_soft_with, export_layer_weights, WeightLayout};
use cat_core::{io, Execution, TOOL_VERSION};
use serde_json::{json, Value};

use crate::args::*;
use crate::error::{require_exists, CliError, CliResult};
use crate::manifest::{pick, PipelineManifest};

/// Settings shared by every command.
pub struct Context {
    pub seed: u64,
    pub threads: Option<usize>,
    pub argv: Vec<String>,
    pub exec: Execution,
}

/// Content hashes of everything a command reads, keyed by role.
#[derive(Default)]
struct Inputs(BTreeMap<String, String>);

impl Inputs {
    fn file(&mut self, label: &str, path: &Path) -> CliResult<String> {
        let h = io::sha256_file(path)?;
        self.0.insert(label.into(), h.clone());
        Ok(h)
    }

    /// One hash over the sorted `name sha256` lines of a directory's files.
    fn dir(&mut self, label: &str, dir: &Path, ext: &str) -> CliResult<String> {
        let mut listing = String::new();
        for p in io::list_dir(dir, ext)? {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            listing.push_str(&format!("{name} {}\n", io::sha256_file(&p)?));
        }
        let h = io::sha256_hex(listing.as_bytes());
        self.0.insert(label.into(), h.clone());
        Ok(h)
    }
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("JSON values serialize");
    out.push(b'\n');
    out
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    ensure_parent(path)?;
    io::write_atomic(path, &pretty(v))?;
    Ok(())
}

/// `<out>.log.json`: what ran, on which inputs, producing which files.
fn write_log(ctx: &Context, out: &Path, command: &str, inputs: &Inputs, outputs: &[PathBuf], details: Value) -> CliResult<()> {
    let log = json!({
        "command": command,
        "argv": ctx.argv,
        "tool": TOOL_VERSION,
        "seed": ctx.seed,
        "threads": ctx.threads,
        "inputs": inputs.0,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "details": details,
    });
    write_json(&io::sidecar(out, ".log.json"), &log)
}

fn load_classes(path: &Path, label: &str, inputs: &mut Inputs) -> CliResult<Arc<ClassSet>> {
    require_exists(path)?;
    inputs.file(label, path)?;
    Ok(Arc::new(ClassSet::load(path)?))
}

pub fn run(ctx: &Context, command: Command) -> CliResult<()> {
    match command {
        Command::Affinity(cmd) => affinity(ctx, cmd),
        Command::Apply(args) => apply(ctx, args),
        Command::Sample(args) => sample(ctx, args),
        Command::Metrics(cmd) => metrics(ctx, cmd),
        Command::ToyLab(ToyLabCommand::Run { config, seeds, out }) => toy_lab(ctx, config, &seeds, out),
        Command::ExportWeights(args) => export(ctx, args),
    }
}

/// Everything an estimator run needs once flags and manifest are merged.
struct Resolved {
    manifest: PipelineManifest,
    has_manifest: bool,
    src: Arc<ClassSet>,
    tgt: Arc<ClassSet>,
    policy: ZeroRowPolicy,
    hard: bool,
    out: PathBuf,
    inputs: Inputs,
}

fn resolve(common: EstimatorCommon, method: &str) -> CliResult<Resolved> {
    let has_manifest = common.manifest.is_some();
    let manifest = match &common.manifest {
        Some(p) => PipelineManifest::load(p)?,
        None => PipelineManifest::default(),
    };
    let mut inputs = Inputs::default();
    let src_path = pick(common.src, manifest.source_classes.as_ref(), "src", "source_classes")?;
    let tgt_path = pick(common.tgt, manifest.target_classes.as_ref(), "tgt", "target_classes")?;
    let src = load_classes(&src_path, "source_classes", &mut inputs)?;
    let tgt = load_classes(&tgt_path, "target_classes", &mut inputs)?;
    let policy = common
        .zero_rows
        .or_else(|| manifest.zero_rows.clone())
        .map(|p| p.parse())
        .transpose()?
        .unwrap_or_default();
    let out = match common.out {
        Some(p) => p,
        None => manifest
            .output_dir
            .as_ref()
            .map(|d| d.join(format!("{method}.json")))
            .ok_or_else(|| CliError::missing_input("--out (manifest field `output_dir`)"))?,
    };
    Ok(Resolved {
        hard: common.hard || manifest.hard,
        manifest,
        has_manifest,
        src,
        tgt,
        policy,
        out,
        inputs,
    })
}

fn check_enabled(r: &Resolved, method: Method) -> CliResult<()> {
    let t = r.manifest.estimators;
    let enabled = match method {
        Method::Confusion => t.confusion,
        Method::Prototype => t.prototype,
        Method::Text => t.text,
        _ => true,
    };
    if r.has_manifest && !enabled {
        return Err(CliError::usage("manifest", format!("the manifest disables the {method} estimator")));
    }
    Ok(())
}

fn estimate_confusion(ctx: &Context, r: &mut Resolved, gt: Option<PathBuf>, pred: Option<PathBuf>) -> CliResult<AffinityMatrix> {
    check_enabled(r, Method::Confusion)?;
    let gt = pick(gt, r.manifest.target_gt.as_ref(), "gt", "target_gt")?;
    let pred = pick(pred, r.manifest.predicted_source.as_ref(), "pred", "predicted_source")?;
    require_exists(&gt)?;
    require_exists(&pred)?;
    let h_gt = r.inputs.dir("target_gt", &gt, "pgm")?;
    let h_pred = r.inputs.dir("predicted_source", &pred, "pgm")?;
    let gt_maps = load_label_dir(&gt, &r.tgt)?;
    let pred_maps = load_label_dir(&pred, &r.src)?;
    log::info!("confusion affinity from {} image pairs", gt_maps.len());
    Ok(confusion_affinity_with(&gt_maps, &pred_maps, r.policy, ctx.exec)?
        .with_input("target_gt", h_gt)
        .with_input("predicted_source", h_pred))
}

fn estimate_prototype(ctx: &Context, r: &mut Resolved, inputs: PrototypeInputs) -> CliResult<AffinityMatrix> {
    check_enabled(r, Method::Prototype)?;
    let m = &r.manifest;
    let sp = pick(inputs.src_patches, m.source_patches.as_ref(), "src-patches", "source_patches")?;
    let sl = pick(inputs.src_labels, m.source_labels.as_ref(), "src-labels", "source_labels")?;
    let tp = pick(inputs.tgt_patches, m.target_patches.as_ref(), "tgt-patches", "target_patches")?;
    let tl = pick(inputs.tgt_labels, m.target_labels.as_ref(), "tgt-labels", "target_labels")?;
    for p in [&sp, &sl, &tp, &tl] {
        require_exists(p)?;
    }
    let hashes = [
        ("source_patches", r.inputs.dir("source_patches", &sp, "catp")?),
        ("source_labels", r.inputs.dir("source_labels", &sl, "pgm")?),
        ("target_patches", r.inputs.dir("target_patches", &tp, "catp")?),
        ("target_labels", r.inputs.dir("target_labels", &tl, "pgm")?),
    ];
    let src_protos = prototype_from_patches_with(&load_patch_dir(&sp)?, &load_label_dir(&sl, &r.src)?, ctx.exec)?;
    let tgt_protos = prototype_from_patches_with(&load_patch_dir(&tp)?, &load_label_dir(&tl, &r.tgt)?, ctx.exec)?;
    for (side, p) in [("source", &src_protos), ("target", &tgt_protos)] {
        if !p.empty.is_empty() {
            log::warn!("{side} classes without pixels get zero prototypes: {}", p.empty.join(", "));
        }
    }
    let mut a = cosine_affinity(&r.src, &src_protos.table, &r.tgt, &tgt_protos.table, Method::Prototype, r.policy)?;
    for (label, h) in hashes {
        a = a.with_input(label, h);
    }
    Ok(a)
}

fn estimate_text(r: &mut Resolved, inputs: TextInputs) -> CliResult<AffinityMatrix> {
    check_enabled(r, Method::Text)?;
    let test_embedder = inputs.test_embedder || r.manifest.test_embedder;
    let (src_emb, tgt_emb) = if test_embedder {
        log::warn!("using the hashed-trigram test embedder (not CLIP)");
        let e = TrigramEmbedder::default();
        (e.embed_class_set(&r.src)?, e.embed_class_set(&r.tgt)?)
    } else {
        let se = pick(inputs.src_emb, r.manifest.source_embeddings.as_ref(), "src-emb", "source_embeddings")?;
        let te = pick(inputs.tgt_emb, r.manifest.target_embeddings.as_ref(), "tgt-emb", "target_embeddings")?;
        require_exists(&se)?;
        require_exists(&te)?;
        r.inputs.file("source_embeddings", &se)?;
        r.inputs.file("target_embeddings", &te)?;
        (FeatureTable::load(&se)?, FeatureTable::load(&te)?)
    };
    let mut a = cosine_affinity(&r.src, &src_emb, &r.tgt, &tgt_emb, Method::Text, r.policy)?;
    let embedder = if test_embedder { "trigram-test-embedder".to_string() } else { "file".to_string() };
    a = a.with_input("embedder", embedder);
    for key in ["source_embeddings", "target_embeddings"] {
        if let Some(h) = r.inputs.0.get(key) {
            a = a.with_input(key, h.clone());
        }
    }
    Ok(a)
}

fn finish_affinity(ctx: &Context, r: &Resolved, a: AffinityMatrix, command: &str, details: Value) -> CliResult<()> {
    let a = if r.hard { binarize_hard(&a) } else { a };
    let a = a
        .with_input("source_classes", r.src.content_hash())
        .with_input("target_classes", r.tgt.content_hash());
    ensure_parent(&r.out)?;
    a.save(&r.out)?;
    let mut details = details;
    details["flags"] = json!(a.flags());
    details["mode"] = json!(a.mode());
    write_log(ctx, &r.out, command, &r.inputs, std::slice::from_ref(&r.out), details)?;
    log::info!("wrote {}", r.out.display());
    Ok(())
}

fn affinity(ctx: &Context, cmd: AffinityCommand) -> CliResult<()> {
    match cmd {
        AffinityCommand::Confusion { common, gt, pred } => {
            let mut r = resolve(common, "confusion")?;
            let a = estimate_confusion(ctx, &mut r, gt, pred)?;
            finish_affinity(ctx, &r, a, "affinity confusion", json!({}))
        }
        AffinityCommand::Prototype { common, inputs } => {
            let mut r = resolve(common, "prototype")?;
            let a = estimate_prototype(ctx, &mut r, inputs)?;
            finish_affinity(ctx, &r, a, "affinity prototype", json!({}))
        }
        AffinityCommand::Text { common, inputs } => {
            let mut r = resolve(common, "text")?;
            let a = estimate_text(&mut r, inputs)?;
            finish_affinity(ctx, &r, a, "affinity text", json!({}))
        }
        AffinityCommand::Combine(args) => combine(ctx, args),
    }
}

fn combine(ctx: &Context, args: CombineArgs) -> CliResult<()> {
    let mut r = resolve(args.common, "combined")?;
    let fallback_text = args
        .fallback_fid
        .or(args.fallback_order)
        .or_else(|| r.manifest.fallback.clone())
        .ok_or_else(|| CliError::missing_input("--fallback-fid or --fallback-order (manifest field `fallback`)"))?;
    let fallback: FallbackRanking = fallback_text
        .parse()
        .map_err(|e: cat_core::Error| CliError::usage("invalid_argument", e.to_string()))?;

    let mut load = |label: &str, flag: Option<PathBuf>, field: Option<PathBuf>| -> CliResult<Option<AffinityMatrix>> {
        match flag.or(field) {
            Some(p) => {
                require_exists(&p)?;
                r.inputs.file(label, &p)?;
                Ok(Some(AffinityMatrix::load(&p, r.tgt.clone(), r.src.clone())?))
            }
            None => Ok(None),
        }
    };
    let conf = load("confusion_affinity", args.confusion, r.manifest.confusion_affinity.clone())?;
    let proto = load("prototype_affinity", args.prototype, r.manifest.prototype_affinity.clone())?;
    let text = load("text_affinity", args.text, r.manifest.text_affinity.clone())?;
    let conf = match conf {
        Some(a) => a,
        None => estimate_confusion(ctx, &mut r, args.gt, args.pred)?,
    };
    let proto = match proto {
        Some(a) => a,
        None => estimate_prototype(ctx, &mut r, args.prototype_inputs)?,
    };
    let text = match text {
        Some(a) => a,
        None => estimate_text(&mut r, args.text_inputs)?,
    };

    let combination = combine_majority(&conf, &proto, &text, &fallback)?;
    let names: Vec<&str> = r.src.names().collect();
    let votes: Vec<Value> = combination
        .votes
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let rule = match v.rule {
                VoteRule::Unanimous => "unanimous".to_string(),
                VoteRule::TwoOfThree => "two_of_three".to_string(),
                VoteRule::Fallback(m) => format!("fallback:{m}"),
            };
            json!({
                "target": r.tgt.class_name(k),
                "confusion": names[v.argmaxes[0]],
                "prototype": names[v.argmaxes[1]],
                "text": names[v.argmaxes[2]],
                "chosen": names[v.chosen],
                "rule": rule,
            })
        })
        .collect();
    let details = json!({ "fallback": fallback_text, "fallback_method": fallback.best()?.as_str(), "votes": votes });
    finish_affinity(ctx, &r, combination.matrix, "affinity combine", details)
}

fn apply(ctx: &Context, args: ApplyArgs) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let src = load_classes(&args.src, "source_classes", &mut inputs)?;
    let tgt = load_classes(&args.tgt, "target_classes", &mut inputs)?;
    require_exists(&args.affinity)?;
    require_exists(&args.maps)?;
    inputs.file("affinity", &args.affinity)?;
    inputs.dir("maps", &args.maps, "pgm")?;
    let a = AffinityMatrix::load(&args.affinity, tgt.clone(), src)?;
    let maps = load_label_dir(&args.maps, &tgt)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;

    // Everything is computed before anything is written.
    let mut outputs = Vec::with_capacity(maps.len());
    match args.mode {
        ApplyMode::Hard => {
            let hard = binarize_hard(&a);
            let results = maps
                .iter()
                .map(|m| apply_hard(&hard, m))
                .collect::<Result<Vec<_>, _>>()?;
            for out in results {
                let path = args.out.join(format!("{}.pgm", out.id()));
                out.save(&path)?;
                outputs.push(path);
            }
        }
        ApplyMode::Soft => {
            let fields = maps
                .iter()
                .map(|m| apply_soft_with(&a, m, ctx.exec).map(|f| (m.id().to_string(), f)))
                .collect::<Result<Vec<_>, _>>()?;
            for (id, field) in fields {
                let path = args.out.join(format!("{id}.catf"));
                field.save(&path, &inputs.0)?;
                outputs.push(path);
            }
        }
    }
    let mode = match args.mode {
        ApplyMode::Hard => "hard",
        ApplyMode::Soft => "soft",
    };
    let details = json!({ "mode": mode, "binarized": args.mode == ApplyMode::Hard && a.mode() != cat_core::affinity::Mode::Hard });
    write_log(ctx, &args.out, "apply", &inputs, &outputs, details)
}

fn emit(out: Option<&Path>, v: &Value) -> CliResult<()> {
    let text = pretty(v);
    if let Some(path) = out {
        write_json(path, v)?;
    }
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}

fn sample(ctx: &Context, args: SampleArgs) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let classes = load_classes(&args.classes, "classes", &mut inputs)?;
    require_exists(&args.pool)?;
    inputs.dir("pool", &args.pool, "pgm")?;
    let maps = load_label_dir(&args.pool, &classes)?;
    let items: Vec<PoolItem> = maps.iter().map(PoolItem::from_map).collect();
    let direction = if args.reverse_kl {
        KlDirection::EmpiricalToUniform
    } else {
        KlDirection::UniformToEmpirical
    };
    let config = SamplerConfig {
        k: args.k,
        seed: ctx.seed,
        epsilon: args.epsilon,
        direction,
    };
    let sel = greedy_select_items(&items, &config, ctx.exec)?;
    let v = json!({
        "seed": sel.seed,
        "epsilon": sel.epsilon,
        "selected": sel.selected,
        "kl_trace": sel.kl_trace,
        "direction": direction,
        "rng": "ChaCha8",
        "tool": TOOL_VERSION,
        "inputs": inputs.0,
    });
    emit(args.out.as_deref(), &v)?;
    if let Some(out) = &args.out {
        write_log(ctx, out, "sample", &inputs, std::slice::from_ref(out), json!({}))?;
    }
    Ok(())
}

fn load_features(path: &Path, label: &str, inputs: &mut Inputs) -> CliResult<FeatureTable> {
    require_exists(path)?;
    inputs.file(label, path)?;
    Ok(FeatureTable::load(path)?)
}

fn metrics(ctx: &Context, cmd: MetricsCommand) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let (name, out, value, params) = match cmd {
        MetricsCommand::Fid { real, fake, out } => {
            let r = load_features(&real, "real", &mut inputs)?;
            let f = load_features(&fake, "fake", &mut inputs)?;
            let d = frechet_distance(&gaussian_stats_with(&r, ctx.exec)?, &gaussian_stats_with(&f, ctx.exec)?)?;
            ("fid", out, d, json!({ "n_real": r.len(), "n_fake": f.len(), "dim": r.dim() }))
        }
        MetricsCommand::Kid { real, fake, block, blocks, out } => {
            let r = load_features(&real, "real", &mut inputs)?;
            let f = load_features(&fake, "fake", &mut inputs)?;
            let config = KidConfig {
                block_size: block,
                n_blocks: blocks,
                seed: ctx.seed,
            };
            let k = kid_from_tables_with(&r, &f, &config, ctx.exec)?;
            let params = json!({
                "block_size": k.block_size,
                "n_blocks": k.n_blocks,
                "seed": k.seed,
                "rng": "ChaCha8",
                "std": k.std,
                "blocks": k.blocks,
                "n_real": r.len(),
                "n_fake": f.len(),
            });
            ("kid", out, k.mean, params)
        }
        MetricsCommand::Miou { classes, gt, pred, scheme, out } => {
            let cs = load_classes(&classes, "classes", &mut inputs)?;
            require_exists(&gt)?;
            require_exists(&pred)?;
            inputs.dir("gt", &gt, "pgm")?;
            inputs.dir("pred", &pred, "pgm")?;
            let gt_maps = load_label_dir(&gt, &cs)?;
            let pred_maps = load_label_dir(&pred, &cs)?;
            let counts = confusion_counts(&gt_maps, &pred_maps, ctx.exec)?;
            let scheme: IouScheme = scheme.parse()?;
            let value = miou(&counts, scheme)?;
            let per_class: BTreeMap<&str, Option<f64>> = cs.names().zip(counts.per_class_iou()).collect();
            let params = json!({ "scheme": scheme, "images": gt_maps.len(), "per_class_iou": per_class });
            ("miou", out, value, params)
        }
    };
    let v = json!({
        "metric": name,
        "value": value,
        "params": params,
        "tool": TOOL_VERSION,
        "inputs": inputs.0,
    });
    emit(out.as_deref(), &v)?;
    if let Some(out) = &out {
        write_log(ctx, out, &format!("metrics {name}"), &inputs, std::slice::from_ref(out), json!({}))?;
    }
    Ok(())
}

/// `1,2,5` or the half-open range `0..20`.
pub fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::usage("invalid_argument", format!("cannot parse seed list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

fn toy_lab(ctx: &Context, config: Option<PathBuf>, seeds: &str, out: PathBuf) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let cfg: ToyConfig = match &config {
        Some(p) => {
            require_exists(p)?;
            inputs.file("config", p)?;
            serde_json::from_slice(&io::read_file(p)?)
                .map_err(|e| CliError::usage("invalid_config", format!("{}: {e}", p.display())))?
        }
        None => ToyConfig::default(),
    };
    cfg.validate().map_err(|e| CliError::usage("invalid_config", e.to_string()))?;
    let seeds = parse_seeds(seeds)?;
    let report = run_experiment(&cfg, &seeds, ctx.exec)?;
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["inputs"] = json!(inputs.0);
    v["rng"] = json!("ChaCha8");
    write_json(&out, &v)?;
    write_log(ctx, &out, "toy-lab run", &inputs, std::slice::from_ref(&out), json!(report.summary))?;
    let s = &report.summary;
    log::info!(
        "affinity init wins: initial MSE {}/{}, iterations {}/{}; training-free {}/{}",
        s.initial_mse_wins,
        s.seeds,
        s.iteration_wins,
        s.seeds,
        s.training_free_wins,
        s.seeds
    );
    Ok(())
}

fn export(ctx: &Context, args: ExportArgs) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let src = load_classes(&args.src, "source_classes", &mut inputs)?;
    let tgt = load_classes(&args.tgt, "target_classes", &mut inputs)?;
    require_exists(&args.affinity)?;
    let h = inputs.file("affinity", &args.affinity)?;
    let layout: WeightLayout = args
        .layout
        .parse()
        .map_err(|e: cat_core::Error| CliError::usage("invalid_argument", e.to_string()))?;
    let a = AffinityMatrix::load(&args.affinity, tgt, src)?.with_input("affinity_file", h);
    ensure_parent(&args.out)?;
    export_layer_weights(&a, layout, &args.out)?;
    let outputs = [
        args.out.clone(),
        io::sidecar(&args.out, ".ids.json"),
        io::sidecar(&args.out, ".meta.json"),
    ];
    write_log(ctx, &args.out, "export-weights", &inputs, &outputs, json!({ "layout": layout }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 9,1").unwrap(), vec![4, 9, 1]);
        assert_eq!(parse_seeds("x").unwrap_err().exit_code, 2);
    }
}
