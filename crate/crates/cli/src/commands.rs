use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use serde_json::json;

use dmvfc::fiberdata::{
    jittered_copy, load_bundle, load_bundle_text, save_bundle, save_bundle_text, synth_bundle, Bundle, SynthConfig,
};
use dmvfc::finetune::{finetune as run_finetune, init_centroids, load_model, save_finetune_history, save_model, FinetuneConfig, InitMode};
use dmvfc::gradcheck::run_suite;
use dmvfc::infer::{consistency_report, evaluate, infer as run_infer, save_consistency, InferenceConfig};
use dmvfc::metrics::{load_labels, quickbundles, save_labels, ClusterLabels};
use dmvfc::nn::{embed, load_weights, save_weights, EncoderWeights, View};
use dmvfc::pretrain::{init_seed, pretrain_from, save_history, PretrainConfig};

use crate::settings::Settings;

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "txt")
}

fn read_bundle(path: &Path) -> Result<Bundle> {
    let b = if is_text(path) {
        load_bundle_text(path)
    } else {
        load_bundle(path)
    };
    b.with_context(|| format!("loading bundle {}", path.display()))
}

fn write_bundle(bundle: &Bundle, path: &Path) -> Result<()> {
    let r = if is_text(path) {
        save_bundle_text(bundle, path)
    } else {
        save_bundle(bundle, path)
    };
    r.with_context(|| format!("writing bundle {}", path.display()))
}

/// Binary outputs get their header in a `<path>.meta` sidecar.
fn write_meta(path: &Path, header: &str) -> Result<()> {
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta");
    fs::write(&meta, format!("# {header}\n")).with_context(|| format!("writing {}", PathBuf::from(meta).display()))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Starting parameter set: default, reference or fa.
    #[arg(long)]
    preset: Option<String>,
    /// Geometric groups.
    #[arg(long = "G")]
    groups: Option<usize>,
    /// Functional subgroups per geometric group.
    #[arg(long = "F")]
    subgroups: Option<usize>,
    /// Number of fibers.
    #[arg(long = "n")]
    n_fibers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    group_separation: Option<f64>,
    #[arg(long)]
    lateral_spread: Option<f64>,
    #[arg(long)]
    subgroup_offset: Option<f64>,
    #[arg(long)]
    sigma_geo: Option<f64>,
    #[arg(long)]
    sigma_bold: Option<f64>,
    #[arg(long)]
    sigma_fa: Option<f64>,
    #[arg(long)]
    fa_group_step: Option<f64>,
    /// Write a jittered copy of this bundle instead of generating one.
    #[arg(long)]
    jitter_of: Option<PathBuf>,
    /// Per-point jitter (mm) for `--jitter-of`.
    #[arg(long)]
    jitter_sigma: Option<f64>,
    /// Output bundle; a `.txt` extension selects the text format.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the truth labels as CSV.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

pub fn synth(a: SynthArgs, s: &mut Settings) -> Result<()> {
    let out = s.require_path("out", a.out)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let bundle = if let Some(src) = s.path("jitter-of", a.jitter_of) {
        let sigma = s.get("jitter-sigma", a.jitter_sigma, 0.5)?;
        jittered_copy(&read_bundle(&src)?, sigma, seed)?
    } else {
        let preset = s.get("preset", a.preset, "default".to_string())?;
        let base = match preset.as_str() {
            "default" => SynthConfig::default(),
            "reference" => SynthConfig::reference(),
            "fa" => SynthConfig::fa_discriminative(),
            other => bail!("unknown preset `{other}` (expected default, reference or fa)"),
        };
        let cfg = SynthConfig {
            groups: s.get("G", a.groups, base.groups)?,
            subgroups: s.get("F", a.subgroups, base.subgroups)?,
            n_fibers: s.get("n", a.n_fibers, base.n_fibers)?,
            group_separation: s.get("group-separation", a.group_separation, base.group_separation)?,
            lateral_spread: s.get("lateral-spread", a.lateral_spread, base.lateral_spread)?,
            subgroup_offset: s.get("subgroup-offset", a.subgroup_offset, base.subgroup_offset)?,
            sigma_geo: s.get("sigma-geo", a.sigma_geo, base.sigma_geo)?,
            sigma_bold: s.get("sigma-bold", a.sigma_bold, base.sigma_bold)?,
            sigma_fa: s.get("sigma-fa", a.sigma_fa, base.sigma_fa)?,
            fa_group_step: s.get("fa-group-step", a.fa_group_step, base.fa_group_step)?,
            ..base
        };
        synth_bundle(&cfg, seed)?
    };
    let header = s.header("synth");
    write_bundle(&bundle, &out)?;
    write_meta(&out, &header)?;
    if let Some(p) = s.path("labels-out", a.labels_out) {
        let truth = bundle.truth_labels().context("bundle has no truth labels")?;
        save_labels(&ClusterLabels::from_truth(&truth)?, &p, Some(&header))?;
    }
    println!("{header}");
    println!("wrote {} fibers to {}", bundle.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// geo or func.
    #[arg(long)]
    view: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Pairs per epoch (default: one per fiber).
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output weights.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Save `<out>.e<epoch>` every this many epochs (0 disables).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(format!(".e{epoch}"));
    PathBuf::from(p)
}

pub fn pretrain(a: PretrainArgs, s: &mut Settings) -> Result<()> {
    let bundle = read_bundle(&s.require_path("bundle", a.bundle)?)?;
    let out = s.require_path("out", a.out)?;
    let view: View = s.require::<String>("view", a.view)?.parse()?;
    let d = PretrainConfig::default();
    let cfg = PretrainConfig {
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        lr0: s.get("lr", a.lr, d.lr0)?,
        decay: s.get("decay", a.decay, d.decay)?,
        decay_every: s.get("decay-every", a.decay_every, d.decay_every)?,
        batch: s.get("batch", a.batch, d.batch)?,
        pairs_per_epoch: s.opt("pairs", a.pairs)?,
        seed: s.get("seed", a.seed, d.seed)?,
    };
    let every: usize = s.get("checkpoint-every", a.checkpoint_every, 50)?;
    let header = s.header("pretrain");
    let start = EncoderWeights::init(view, init_seed(cfg.seed, view));
    let trained = pretrain_from(&bundle, start, &cfg, |epoch, w, _| {
        if every > 0 && epoch % every == 0 && epoch < cfg.epochs {
            let p = checkpoint_path(&out, epoch);
            save_weights(w, &p)?;
            let mut meta = p.into_os_string();
            meta.push(".meta");
            fs::write(meta, format!("# {header} epoch={epoch}\n"))?;
        }
        Ok(())
    })?;
    save_weights(&trained.weights, &out)?;
    write_meta(&out, &header)?;
    if let Some(p) = s.path("history", a.history) {
        save_history(&trained.history, &p, Some(&header))?;
    }
    println!("{header}");
    if let (Some(first), Some(last)) = (trained.history.first(), trained.history.last()) {
        println!("{} view: mean loss {:.6} -> {:.6}", view.name(), first.mean_loss, last.mean_loss);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Pretrained geometric weights.
    #[arg(long)]
    geo: Option<PathBuf>,
    /// Pretrained functional weights; without them only the geometric view is tuned (gamma must be 0).
    #[arg(long)]
    func: Option<PathBuf>,
    /// Number of clusters.
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the clustering loss.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kmeans_seed: Option<u64>,
    /// cross or individual.
    #[arg(long)]
    init: Option<String>,
    /// Output cluster model.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    geo_out: Option<PathBuf>,
    #[arg(long)]
    func_out: Option<PathBuf>,
    #[arg(long)]
    history: Option<PathBuf>,
}

pub fn finetune(a: FinetuneArgs, s: &mut Settings) -> Result<()> {
    let bundle = read_bundle(&s.require_path("bundle", a.bundle)?)?;
    let geo = load_weights(s.require_path("geo", a.geo)?, Some(View::Geometric))?;
    let func = s
        .path("func", a.func)
        .map(|p| load_weights(p, Some(View::Functional)))
        .transpose()?;
    let out = s.require_path("out", a.out)?;
    let k = s.require::<usize>("K", a.k)?;
    let init: InitMode = s.get("init", a.init, "cross".to_string())?.parse()?;
    let kmeans_seed = s.get("kmeans-seed", a.kmeans_seed, 0u64)?;
    let d = FinetuneConfig::default();
    let cfg = FinetuneConfig {
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        lr: s.get("lr", a.lr, d.lr)?,
        gamma: s.get("gamma", a.gamma, d.gamma)?,
        batch: s.get("batch", a.batch, d.batch)?,
        pairs_per_epoch: s.opt("pairs", a.pairs)?,
        seed: s.get("seed", a.seed, d.seed)?,
    };
    let header = s.header("finetune");
    let z_geo = embed(&geo, &bundle)?;
    let z_func = match &func {
        Some(f) => embed(f, &bundle)?,
        None => z_geo.clone(),
    };
    let model = init_centroids(&z_geo, &z_func, k, kmeans_seed, init)?;
    let tuned = run_finetune(&bundle, geo, func, model, &cfg)?;
    save_model(&tuned.model, &out)?;
    write_meta(&out, &header)?;
    if let Some(p) = s.path("geo-out", a.geo_out) {
        save_weights(&tuned.geo, &p)?;
        write_meta(&p, &header)?;
    }
    match (s.path("func-out", a.func_out), &tuned.func) {
        (Some(p), Some(f)) => {
            save_weights(f, &p)?;
            write_meta(&p, &header)?;
        }
        (Some(_), None) => bail!("--func-out given without functional weights"),
        _ => {}
    }
    if let Some(p) = s.path("history", a.history) {
        save_finetune_history(&tuned.history, &p, Some(&header))?;
    }
    println!("{header}");
    println!("fine-tuned {} epochs, K = {k}", tuned.history.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Fine-tuned geometric weights.
    #[arg(long)]
    geo: Option<PathBuf>,
    /// Cluster model from `finetune`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    fa_weight: Option<f64>,
    /// Reassign with FA references after the geometric pass (true/false).
    #[arg(long)]
    two_pass: Option<bool>,
    /// Output labels CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Soft assignment CSV.
    #[arg(long)]
    q_out: Option<PathBuf>,
    /// Model with the FA references filled in.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

pub fn infer(a: InferArgs, s: &mut Settings) -> Result<()> {
    let bundle = read_bundle(&s.require_path("bundle", a.bundle)?)?;
    let geo = load_weights(s.require_path("geo", a.geo)?, Some(View::Geometric))?;
    let mut model = load_model(s.require_path("model", a.model)?)?;
    let out = s.require_path("out", a.out)?;
    let d = InferenceConfig::default();
    let cfg = InferenceConfig {
        fa_weight: s.get("fa-weight", a.fa_weight, d.fa_weight)?,
        two_pass: s.get("two-pass", a.two_pass, d.two_pass)?,
    };
    let header = s.header("infer");
    let result = run_infer(&bundle, &geo, &model, &cfg)?;
    save_labels(&result.labels, &out, Some(&header))?;
    if let Some(p) = s.path("q-out", a.q_out) {
        let mut text = format!("# {header}\n");
        for r in 0..result.q.rows() {
            let row: Vec<String> = result.q.row(r).iter().map(f64::to_string).collect();
            let _ = writeln!(text, "{}", row.join(","));
        }
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = s.path("model-out", a.model_out) {
        model.fa_reference = result.fa_reference.clone();
        save_model(&model, &p)?;
        write_meta(&p, &header)?;
    }
    println!("{header}");
    println!("{} fibers in {} non-empty clusters", result.labels.len(), result.labels.n_nonempty());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Labels CSV to score.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Metrics JSON (printed to stdout as well).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs, s: &mut Settings) -> Result<()> {
    let bundle = read_bundle(&s.require_path("bundle", a.bundle)?)?;
    let labels = load_labels(s.require_path("labels", a.labels)?)?;
    let header = s.header("eval");
    let metrics = evaluate(&bundle, &labels)?;
    let doc = json!({ "header": header, "metrics": metrics });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    if let Some(p) = s.path("out", a.out) {
        fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{text}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// MDF threshold in mm.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn baseline(a: BaselineArgs, s: &mut Settings) -> Result<()> {
    let bundle = read_bundle(&s.require_path("bundle", a.bundle)?)?;
    let out = s.require_path("out", a.out)?;
    let threshold = s.require::<f64>("threshold", a.threshold)?;
    let header = s.header("baseline");
    let labels = quickbundles(&bundle, threshold)?;
    save_labels(&labels, &out, Some(&header))?;
    println!("{header}");
    println!("{} clusters", labels.n_nonempty());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ConsistencyArgs {
    /// Subject bundles (repeat the flag or give a comma list in the config).
    #[arg(long = "subject")]
    subjects: Vec<PathBuf>,
    /// Labels per subject, in the same order.
    #[arg(long = "labels")]
    labels: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn consistency(a: ConsistencyArgs, s: &mut Settings) -> Result<()> {
    let subjects = s.paths("subject", a.subjects);
    let label_paths = s.paths("labels", a.labels);
    ensure!(
        subjects.len() == label_paths.len(),
        "{} subjects but {} label files",
        subjects.len(),
        label_paths.len()
    );
    let out = s.require_path("out", a.out)?;
    let bundles: Vec<Bundle> = subjects.iter().map(|p| read_bundle(p)).collect::<Result<_>>()?;
    let labels: Vec<ClusterLabels> = label_paths
        .iter()
        .map(|p| load_labels(p).with_context(|| format!("loading labels {}", p.display())))
        .collect::<Result<_>>()?;
    let header = s.header("consistency");
    let report = consistency_report(&bundles, &labels)?;
    save_consistency(&report, &out, Some(&header))?;
    println!("{header}");
    println!(
        "pathway {:.4}  intra-cluster {:.4}  bundle {:.4}",
        report.mean_pathway, report.mean_intra_cluster, report.mean_bundle
    );
    if !report.skipped.is_empty() {
        println!("clusters missing from some subject: {:?}", report.skipped);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random instances per case.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest accepted relative error.
    #[arg(long)]
    tol: Option<f64>,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gradcheck(a: GradcheckArgs, s: &mut Settings) -> Result<()> {
    let instances = s.get("instances", a.instances, 20usize)?;
    let seed = s.get("seed", a.seed, 1u64)?;
    let tol = s.get("tol", a.tol, 1e-4)?;
    let header = s.header("gradcheck");
    let report = run_suite(instances, seed)?;
    if let Some(p) = s.path("out", a.out) {
        let doc = json!({ "header": header, "report": report });
        fs::write(&p, serde_json::to_string_pretty(&doc)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{header}");
    println!("{} cases, max relative error {:.3e}", report.cases.len(), report.max_rel_err);
    ensure!(
        report.max_rel_err < tol,
        "max relative error {:.3e} exceeds {tol:e}",
        report.max_rel_err
    );
    Ok(())
}
