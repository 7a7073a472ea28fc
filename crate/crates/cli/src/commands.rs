use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::json;

use dformer_core::analysis::{count_flops, default_site, dump_features, scatter_csv, DumpConfig};
use dformer_core::block::{FfnKind, Variant};
use dformer_core::data::{label_path_for, synth_generate, DataConfig, HsiCube, PatchDataset, SynthConfig};
use dformer_core::model::{HookSite, Model, ModelConfig};
use dformer_core::train::{evaluate, evaluate_metrics, load_checkpoint, train, train_on, TrainConfig};
use dformer_core::{Error, Exec, Result};

use crate::manifest::{default_path, ManifestBuilder};
use crate::{AblateArgs, CcaArgs, Cli, Command, CubeArgs, EvalArgs, ProfileArgs, SynthArgs, TrainArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

/// Contents of a `--config` file. Omitted sections take their defaults; a
/// missing `model` is sized from the cube.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub data: DataConfig,
    pub train: TrainConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let manifest = cli.manifest;
    match cli.command {
        Command::Synth(a) => synth(a, manifest),
        Command::Train(a) => train_cmd(a, manifest, exec),
        Command::Eval(a) => eval(a, manifest, exec),
        Command::Ablate(a) => ablate(a, manifest, exec),
        Command::Cca(a) => cca(a, manifest, exec),
        Command::Profile(a) => profile(a, manifest),
    }
}

fn io_err(path: &Path, what: &str) -> impl FnOnce(std::io::Error) -> Error {
    let context = format!("{what} {}", path.display());
    move |source| Error::Io { context, source }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path, "writing"))
}

fn load_cube(args: &CubeArgs) -> Result<(HsiCube, PathBuf)> {
    let labels = args.labels.clone().unwrap_or_else(|| label_path_for(&args.cube));
    Ok((HsiCube::load(&args.cube, &labels)?, labels))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p, "reading"))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// The model section, or the toy model sized to the cube.
fn resolve_model(cfg: &RunConfig, cube: &HsiCube) -> Result<ModelConfig> {
    let model = cfg
        .model
        .clone()
        .unwrap_or_else(|| ModelConfig::toy(cube.bands(), cube.num_classes().max(1)));
    if model.in_channels != cube.bands() {
        return Err(Error::Config(format!(
            "model expects {} bands but the cube has {}",
            model.in_channels,
            cube.bands()
        )));
    }
    if model.input_size != cfg.data.input_size {
        return Err(Error::Config(format!(
            "model input size {} differs from data input size {}",
            model.input_size, cfg.data.input_size
        )));
    }
    model.validate()?;
    Ok(model)
}

fn synth(a: SynthArgs, manifest: Option<PathBuf>) -> Result<()> {
    let run = ManifestBuilder::start("synth");
    let cfg = SynthConfig {
        classes: a.classes,
        height: a.size,
        width: a.size,
        bands: a.bands,
        noise_sigma: a.noise,
        blob_size: a.blob,
        seed: a.seed,
    };
    let cube = synth_generate(&cfg)?;
    let labels = label_path_for(&a.out);
    cube.save(&a.out, &labels)?;
    println!(
        "wrote {} and {} ({}×{}×{}, {} classes)",
        a.out.display(),
        labels.display(),
        cube.height(),
        cube.width(),
        cube.bands(),
        cube.num_classes()
    );
    run.finish(json!(cfg), Some(cfg.seed), vec![a.out.clone(), labels])
        .write(&manifest.unwrap_or_else(|| default_path(&a.out)))
}

fn train_cmd(a: TrainArgs, manifest: Option<PathBuf>, exec: Exec) -> Result<()> {
    let run = ManifestBuilder::start("train");
    let (cube, label_path) = load_cube(&a.cube)?;
    let mut cfg = load_config(a.config.as_deref())?;
    let mut model_cfg = resolve_model(&cfg, &cube)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
        model_cfg.seed = s;
    }
    let log = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    cfg.train.checkpoint_path = Some(a.out.clone());
    cfg.train.log_path = Some(log.clone());
    cfg.model = Some(model_cfg.clone());

    let dataset = PatchDataset::build(&cube, &cfg.data)?;
    let mut model = Model::new(&model_cfg)?;
    let report = train(&mut model, &dataset, &cfg.train, exec)?;
    if let Some(last) = report.log.last() {
        println!(
            "epoch {}: loss {:.6}, train OA {:.4} ({} train / {} test patches)",
            last.epoch,
            last.loss,
            last.oa,
            dataset.train.len(),
            dataset.test.len()
        );
    }
    println!("wrote {} and {}", a.out.display(), log.display());
    let mut resolved = serde_json::to_value(&cfg)?;
    resolved["cube"] = json!(a.cube.cube);
    resolved["labels"] = json!(label_path);
    run.finish(resolved, Some(cfg.train.seed), vec![a.out.clone(), log])
        .write(&manifest.unwrap_or_else(|| default_path(&a.out)))
}

fn eval(a: EvalArgs, manifest: Option<PathBuf>, exec: Exec) -> Result<()> {
    let run = ManifestBuilder::start("eval");
    let (cube, _) = load_cube(&a.cube)?;
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let data = meta.data.clone().unwrap_or_default();
    let dataset = PatchDataset::build(&cube, &data)?;
    let patches = match a.split {
        SplitChoice::Train => dataset.train,
        SplitChoice::Test => dataset.test,
        SplitChoice::All => [dataset.train, dataset.test].concat(),
    };
    let cm = evaluate(&model, &patches, exec)?;
    let m = evaluate_metrics(&cm)?;
    let mut out = format!("OA={:.4} AA={:.4} Kappa={:.4}\n", m.oa, m.aa, m.kappa);
    if m.absent_classes > 0 {
        writeln!(out, "classes without samples (excluded from AA): {}", m.absent_classes).expect("string");
    }
    writeln!(out, "confusion matrix (rows = true, cols = predicted):").expect("string");
    for row in cm.rows() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        writeln!(out, "{}", cells.join("")).expect("string");
    }
    print!("{out}");
    let config = json!({
        "checkpoint": a.checkpoint,
        "cube": a.cube.cube,
        "split": format!("{:?}", a.split).to_lowercase(),
        "data": data,
        "metrics": m,
    });
    run.finish(config, Some(meta.model.seed), vec![])
        .write(&manifest.unwrap_or_else(|| default_path(&a.checkpoint.with_extension("eval"))))
}

/// The comparison grid: the full model, the component ablations, then the
/// wiring alternatives.
pub const ABLATION_ROWS: [(&str, Variant, FfnKind); 8] = [
    ("full", Variant::Parallel, FfnKind::MsFfn),
    ("standard_mlp", Variant::Parallel, FfnKind::StandardMlp),
    ("st_only", Variant::STOnly, FfnKind::MsFfn),
    ("ct_only", Variant::CTOnly, FfnKind::MsFfn),
    ("serial_ct_st", Variant::SerialCTST, FfnKind::MsFfn),
    ("serial_st_ct", Variant::SerialSTCT, FfnKind::MsFfn),
    ("parallel_st_st", Variant::ParallelSTST, FfnKind::MsFfn),
    ("parallel_ct_ct", Variant::ParallelCTCT, FfnKind::MsFfn),
];

fn ablate(a: AblateArgs, manifest: Option<PathBuf>, exec: Exec) -> Result<()> {
    let run = ManifestBuilder::start("ablate");
    let (cube, _) = load_cube(&a.cube)?;
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if a.seeds == 0 {
        return Err(Error::Config("ablate needs at least one seed".into()));
    }
    cfg.train.checkpoint_path = None;
    cfg.train.log_path = None;
    let base = resolve_model(&cfg, &cube)?;
    let dataset = PatchDataset::build(&cube, &cfg.data)?;
    let jobs: Vec<(usize, u64)> = (0..ABLATION_ROWS.len())
        .flat_map(|r| (0..a.seeds).map(move |s| (r, s)))
        .collect();
    // Rows run concurrently; each trains sequentially on its own seed.
    let results = exec.try_map(&jobs, |&(r, seed)| {
        let (_, variant, ffn) = ABLATION_ROWS[r];
        let mut mc = base.clone().with_variant(variant).with_ffn(ffn);
        mc.seed = seed;
        let mut model = Model::new(&mc)?;
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        train_on(&mut model, &dataset.train, &tc, Exec::Sequential)?;
        let m = evaluate_metrics(&evaluate(&model, &dataset.test, Exec::Sequential)?)?;
        Ok::<_, Error>((model.params().scalar_count(), m))
    })?;
    let mut csv = String::from("row,variant,ffn_kind,params,seeds,oa,aa,kappa\n");
    let n = a.seeds as f64;
    for (r, (tag, variant, ffn)) in ABLATION_ROWS.iter().enumerate() {
        let rows = &results[r * a.seeds as usize..(r + 1) * a.seeds as usize];
        let mean = |f: fn(&dformer_core::train::Metrics) -> f64| rows.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
        let ffn_name = match ffn {
            FfnKind::MsFfn => "ms_ffn",
            FfnKind::StandardMlp => "standard_mlp",
        };
        writeln!(
            csv,
            "{tag},{},{ffn_name},{},{},{:.6},{:.6},{:.6}",
            variant.name(),
            rows[0].0,
            a.seeds,
            mean(|m| m.oa),
            mean(|m| m.aa),
            mean(|m| m.kappa)
        )
        .expect("string");
    }
    write_text(&a.out, &csv)?;
    print!("{csv}");
    let mut resolved = serde_json::to_value(&cfg)?;
    resolved["model"] = serde_json::to_value(&base)?;
    resolved["seeds"] = json!(a.seeds);
    run.finish(resolved, None, vec![a.out.clone()])
        .write(&manifest.unwrap_or_else(|| default_path(&a.out)))
}

fn cca(a: CcaArgs, manifest: Option<PathBuf>, exec: Exec) -> Result<()> {
    let run = ManifestBuilder::start("cca");
    let (cube, _) = load_cube(&a.cube)?;
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let data = meta.data.clone().unwrap_or_default();
    let dataset = PatchDataset::build(&cube, &data)?;
    let default = default_site(&model);
    let stage = a.stage.unwrap_or(default.stage);
    let block = match (a.block, a.stage) {
        (Some(b), _) => b,
        (None, Some(s)) => model.stages.get(s).map_or(0, |b| b.len().saturating_sub(1)),
        (None, None) => default.block,
    };
    let dump_cfg = DumpConfig {
        site: HookSite { stage, block },
        max_samples: a.max_samples,
        seed: a.seed,
        dataset: a.cube.cube.display().to_string(),
    };
    let dump = dump_features(&model, &dataset.test, &dump_cfg, exec)?;
    let result = dump.cca(a.ridge)?;
    dump.save(&a.out)?;
    write_text(&a.scatter, &scatter_csv(&result, &dump.xs, &dump.xc))?;
    println!(
        "CCA(1st)={:.6} over {} windows at {} ({})",
        result.rho, dump.n, dump.meta.hook, dump.meta.variant
    );
    let config = json!({
        "checkpoint": a.checkpoint,
        "cube": a.cube.cube,
        "stage": stage,
        "block": block,
        "max_samples": a.max_samples,
        "ridge": a.ridge,
        "cca": result.rho,
    });
    run.finish(config, Some(a.seed), vec![a.out.clone(), a.scatter.clone()])
        .write(&manifest.unwrap_or_else(|| default_path(&a.out)))
}

fn profile(a: ProfileArgs, manifest: Option<PathBuf>) -> Result<()> {
    let run = ManifestBuilder::start("profile");
    let model = match (&a.checkpoint, &a.config) {
        (Some(path), _) => load_checkpoint(path)?.0,
        (None, cfg) => {
            let rc = load_config(cfg.as_deref())?;
            Model::new(&rc.model.unwrap_or_default())?
        }
    };
    let report = count_flops(&model)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    let config = json!({ "model": model.config(), "report": report });
    let default = a
        .checkpoint
        .as_ref()
        .or(a.config.as_ref())
        .map_or_else(|| PathBuf::from("profile"), |p| p.with_extension("profile"));
    run.finish(config, Some(model.config().seed), vec![])
        .write(&manifest.unwrap_or_else(|| default_path(&default)))
}
