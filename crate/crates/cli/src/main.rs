//! Batch front end: data generation, both training stages, evaluation,
//! the ablation sweep and report aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sta::dataworld::{generate_world, make_splits, read_world, write_world, Setting, World, WorldSpec};
use sta::eval::{
    bar_chart_svg, evaluate, line_chart_svg, pretrain_scenes, run_variants_on, ExperimentConfig, MetricsReport,
    RunMeta, TrainedModel, Variant,
};
use sta::nets::ModelBundle;
use sta::trainer::{checkpoint_load, checkpoint_save, Checkpoint, Finetuner, Pretrainer};
use sta::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sta",
    version,
    about = "Relationship feature pre-training on synthetic worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and write its train and test scene files.
    GenData(GenData),
    /// Pre-train φ, F, G and the discriminators.
    Pretrain(Stage),
    /// Fine-tune φ and the relation classifier.
    Finetune(Stage),
    /// Evaluate a checkpoint and write the metrics artifacts.
    Eval(Stage),
    /// Train and evaluate every ablation variant.
    Ablate(Stage),
    /// Collect metrics from run directories into CSV tables and charts.
    Report(Report),
}

#[derive(Args)]
struct GenData {
    /// World spec (JSON). Defaults to the desk world.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Stage {
    /// Experiment config (JSON). Defaults to the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Directory written by `gen-data`; otherwise the world is generated
    /// from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to start from or resume.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "supervised")]
    setting: Setting,
    #[arg(long, default_value = "sta")]
    variant: Variant,
}

#[derive(Args)]
struct Report {
    /// Run directories; each is searched for `metrics.json` files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also draw SVG charts.
    #[arg(long)]
    svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Finetune(a) => finetune(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Report(a) => report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        field: json_field(&e.to_string()),
        reason: format!("{}: {e}", path.display()),
    })
}

// serde names the offending field in backticks for unknown or missing
// fields; anything else is reported against the whole file.
fn json_field(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<root>").to_string()
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn gen_data(a: &GenData) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => read_json::<WorldSpec>(p)?,
        None => WorldSpec::desk(a.seed.unwrap_or(0)),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let world = generate_world(&spec)?;
    write_world(&a.out, &world)?;
    eprintln!(
        "wrote {} train and {} test scenes to {}",
        world.train.len(),
        world.test.len(),
        a.out.display()
    );
    Ok(())
}

/// Config and world of a stage command, validated against each other.
fn setup(a: &Stage) -> Result<(ExperimentConfig, World)> {
    let mut config = match &a.config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => ExperimentConfig::desk(a.seed.unwrap_or(0)),
    };
    if let Some(seed) = a.seed {
        config = config.with_seed(seed);
    }
    let world = match &a.data {
        Some(dir) => {
            let w = read_world(dir)?;
            config.world = w.spec.clone();
            w
        }
        None => {
            config.validate()?;
            generate_world(&config.world)?
        }
    };
    config.validate()?;
    Ok((config, world))
}

fn load(path: &Option<PathBuf>) -> Result<Option<Checkpoint>> {
    path.as_deref().map(checkpoint_load).transpose()
}

fn pretrain(a: &Stage) -> Result<()> {
    let (config, world) = setup(a)?;
    if !a.variant.pretrains() {
        return Err(Error::Config {
            field: "variant".into(),
            reason: format!("{} does not pre-train", a.variant),
        });
    }
    let mut p = match load(&a.checkpoint)? {
        Some(Checkpoint::Pretrain(p)) => p,
        Some(other) => Pretrainer::new(config.pretrain.clone(), other.into_bundle())?,
        None => Pretrainer::new(
            config.pretrain.clone(),
            ModelBundle::init(&config.net_for(a.variant), config.seed)?,
        )?,
    };
    let scenes = pretrain_scenes(&world)?;
    create_dir(&a.out)?;
    let path = a.out.join("pretrain.ckpt");
    while !p.is_done() {
        let l = p.run_epoch(&scenes)?;
        eprintln!(
            "epoch {}: d_a {:.5} d_b {:.5} gen {:.5} cycle {:.5} total {:.5}",
            p.epoch, l.adv_d_a, l.adv_d_b, l.adv_gen, l.cycle, l.total
        );
        checkpoint_save(&Checkpoint::Pretrain(p.clone()), &path)?;
    }
    checkpoint_save(&Checkpoint::Pretrain(p), &path)
}

fn finetune(a: &Stage) -> Result<()> {
    let (config, world) = setup(a)?;
    let ft = config.finetune_for(a.variant, a.setting);
    let mut f = match load(&a.checkpoint)? {
        Some(Checkpoint::Finetune(f)) => f,
        Some(other) => Finetuner::new(ft, config.initial_bundle(a.variant, Some(other.into_bundle()))?)?,
        None => Finetuner::new(ft, config.initial_bundle(a.variant, None)?)?,
    };
    let experiment = make_splits(&world, a.setting, config.seed)?;
    create_dir(&a.out)?;
    let path = a.out.join("finetune.ckpt");
    while !f.is_done() {
        let loss = f.run_epoch(&experiment.train)?;
        eprintln!("epoch {}: loss {loss:.5}", f.epoch);
        checkpoint_save(&Checkpoint::Finetune(f.clone()), &path)?;
    }
    checkpoint_save(&Checkpoint::Finetune(f), &path)
}

fn eval(a: &Stage) -> Result<()> {
    let start = Instant::now();
    let (config, world) = setup(a)?;
    let Some(ckpt) = load(&a.checkpoint)? else {
        return Err(Error::Config {
            field: "checkpoint".into(),
            reason: "eval needs --checkpoint".into(),
        });
    };
    let model = TrainedModel {
        variant: a.variant,
        bundle: ckpt.into_bundle(),
        source: a.variant.source(),
    };
    let experiment = make_splits(&world, a.setting, config.seed)?;
    let meta = RunMeta {
        seed: config.seed,
        config_hash: config.hash()?,
        wall_time_secs: 0.0,
    };
    let mut r = evaluate(&model, &experiment, &pretrain_scenes(&world)?, meta)?;
    r.meta.wall_time_secs = start.elapsed().as_secs_f64();
    r.write_dir(&a.out)?;
    print_summary(&r);
    Ok(())
}

fn ablate(a: &Stage) -> Result<()> {
    let (config, world) = setup(a)?;
    for (_, r) in run_variants_on(&config, &world, a.setting, &Variant::ALL)? {
        let name = r.variant.clone().unwrap_or_default();
        r.write_dir(&a.out.join(&name))?;
        print_summary(&r);
    }
    Ok(())
}

fn print_summary(r: &MetricsReport) {
    println!(
        "{} {}: R@50 {:.4} R@100 {:.4} overlap {:.4}",
        r.variant.as_deref().unwrap_or("-"),
        r.setting,
        r.recall_at_50,
        r.recall_at_100,
        r.overlap_ratio
    );
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let file = dir.join("metrics.json");
    if file.is_file() {
        out.push(dir.to_path_buf());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_reports(&e, out)?;
    }
    Ok(())
}

fn run_name(root: &Path, dir: &Path) -> String {
    let rel = dir.strip_prefix(root).unwrap_or(dir);
    let parts: Vec<String> = std::iter::once(root.file_name())
        .chain(rel.components().map(|c| Some(c.as_os_str())))
        .flatten()
        .map(|s| s.to_string_lossy().into_owned())
        .collect();
    parts.join("/")
}

fn report(a: &Report) -> Result<()> {
    let mut runs: BTreeMap<String, (PathBuf, MetricsReport)> = BTreeMap::new();
    for root in &a.runs {
        let mut dirs = Vec::new();
        find_reports(root, &mut dirs)?;
        for d in dirs {
            runs.insert(run_name(root, &d), (d.clone(), MetricsReport::read_dir(&d)?));
        }
    }
    if runs.is_empty() {
        return Err(Error::Data("no metrics.json found under the given directories".into()));
    }
    create_dir(&a.out)?;
    let mut summary = String::from(
        "run,variant,setting,seed,recall_at_50,recall_at_100,overlap_ratio,alignment_rate,alignment_baseline\n",
    );
    let mut relations = String::from("run,relation,accuracy\n");
    for (name, (_, r)) in &runs {
        let (rate, base) = match &r.alignment {
            Some(al) => (al.rate.to_string(), al.baseline.to_string()),
            None => (String::new(), String::new()),
        };
        summary += &format!(
            "{name},{},{},{},{},{},{},{rate},{base}\n",
            r.variant.as_deref().unwrap_or(""),
            r.setting,
            r.meta.seed,
            r.recall_at_50,
            r.recall_at_100,
            r.overlap_ratio
        );
        for (rel, acc) in &r.per_relation_accuracy {
            relations += &format!("{name},{rel},{acc}\n");
        }
    }
    write(&a.out.join("summary.csv"), &summary)?;
    write(&a.out.join("per_relation.csv"), &relations)?;
    if a.svg {
        write(
            &a.out.join("recall_at_50.svg"),
            &bar_chart_svg(&summary, "run", "recall_at_50", "R@50 per run")?,
        )?;
        for (name, (_, r)) in &runs {
            let stem = name.replace(['/', '\\'], "_");
            write(
                &a.out.join(format!("{stem}.per_relation.svg")),
                &bar_chart_svg(
                    &r.per_relation_csv()?,
                    "relation",
                    "accuracy",
                    &format!("{name}: accuracy per relation"),
                )?,
            )?;
            write(
                &a.out.join(format!("{stem}.bias_curve.svg")),
                &line_chart_svg(
                    &r.bias_curve_csv()?,
                    "relation",
                    "accuracy",
                    &format!("{name}: accuracy by ascending bias"),
                )?,
            )?;
        }
    }
    eprintln!("collected {} runs into {}", runs.len(), a.out.display());
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}
