//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use pointseg_core::image::{FourPointAnnotation, Point};
use pointseg_core::labels::{box_label_precision, corpus_precision, generate_labels, label_precision};
use pointseg_core::phantom::SampleRecord;
use pointseg_core::pipeline::{ablation_suite, build_inputs, evaluate, predict_mask, prepare, Preset, Trainer};
use pointseg_core::prior::fusion_prior;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::imaging::{read_image, write_gray, write_image, write_mask};
use crate::manifest::{load_manifest, write_manifest, ManifestEntry};
use crate::prior_cache::write_prior;
use crate::report::{ablation_table, audit_table, eval_csv, step_line};

#[derive(Debug, Parser)]
#[command(name = "pointseg", version, about = "Four-point weakly supervised nodule segmentation")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed (and the corpus seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes synthetic phantoms, masks and a manifest.
    Synth {
        /// Number of phantoms (default: train + test counts of the config).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Writes box, foreground, background and mixed label masks per record.
    GenLabels {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Computes prior maps into binary caches and preview images.
    Prior {
        #[arg(long, conflicts_with_all = ["image", "points"])]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "points")]
        image: Option<PathBuf>,
        /// Four points as `x,y;x,y;x,y;x,y`.
        #[arg(long, requires = "image")]
        points: Option<Points>,
    },
    /// Prints fg/bg precision of box and pure labels against the masks.
    AuditLabels {
        /// One manifest per dataset; synthetic data when omitted.
        #[arg(long)]
        manifest: Vec<PathBuf>,
    },
    /// Trains a model, checkpointing every epoch.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Scores a checkpoint on held-out data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Records to score (default: the held-out split of the configured data).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Segments one image given its four points.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        points: Points,
        #[arg(long)]
        threshold: Option<f64>,
        /// Mask path (default: `<out>/mask.png`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the probability map here.
        #[arg(long)]
        prob_out: Option<PathBuf>,
    },
    /// Trains every preset over several seeds and tabulates DSC/HD.
    Ablate {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        epochs: Option<usize>,
        /// Subset of presets, e.g. `AH`.
        #[arg(long, default_value = "ABCDEFGH")]
        presets: String,
    },
}

/// Four points parsed from `x,y;x,y;x,y;x,y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Points(pub Vec<Point>);

impl FromStr for Points {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let pts = s
            .split(';')
            .map(|pair| {
                let (x, y) = pair.split_once(',').ok_or_else(|| format!("bad point {pair:?}"))?;
                let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("bad coordinate {v:?}: {e}"));
                Ok(Point::new(num(x)?, num(y)?))
            })
            .collect::<Result<Vec<_>, String>>()?;
        if pts.len() != 4 {
            return Err(format!("expected 4 points, got {}", pts.len()));
        }
        Ok(Points(pts))
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(p: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_text(p: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn annotation(points: &Points) -> anyhow::Result<FourPointAnnotation> {
    Ok(FourPointAnnotation::new(&points.0)?)
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth { count } => {
            if let Some(seed) = cli.seed {
                cfg.data.corpus_seed = seed;
            }
            let n = count.unwrap_or(cfg.data.train_count + cfg.data.test_count);
            let records = pointseg_core::phantom::synth_corpus(cfg.data.corpus_seed, n, &cfg.data.phantom)?;
            create_dir(out)?;
            let mut entries = Vec::with_capacity(n);
            for r in &records {
                let img = PathBuf::from("images").join(format!("{}.png", r.id));
                let mask = PathBuf::from("masks").join(format!("{}.png", r.id));
                write_image(&out.join(&img), &r.image)?;
                write_mask(&out.join(&mask), r.gt_mask.as_ref().expect("synthetic records have masks"))?;
                let mut e = ManifestEntry::new(&r.id, img, &r.annotation);
                e.mask = Some(mask);
                entries.push(e);
            }
            write_manifest(&out.join("manifest.jsonl"), &entries)?;
            println!("wrote {n} phantoms to {}", out.display());
        }
        Command::GenLabels { manifest } => {
            let records = load_manifest(manifest)?;
            let dir = out.join("labels");
            for r in &records {
                let l = generate_labels(&r.annotation, r.image.dims())?;
                for (kind, m) in [("box", &l.box_mask), ("fg", &l.fg_mask), ("bg", &l.bg_mask), ("mixed", &l.mixed_mask)] {
                    write_mask(&dir.join(format!("{}_{kind}.png", r.id)), m)?;
                }
            }
            println!("wrote labels for {} records to {}", records.len(), dir.display());
        }
        Command::Prior { manifest, image, points } => {
            let dir = out.join("priors");
            create_dir(&dir)?;
            let jobs: Vec<(String, SampleRecord)> = match (manifest, image, points) {
                (Some(m), _, _) => load_manifest(m)?.into_iter().map(|r| (r.id.clone(), r)).collect(),
                (None, Some(img), Some(pts)) => {
                    let image = read_image(img)?;
                    let id = img.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
                    vec![(id.clone(), SampleRecord::new(id, image, annotation(pts)?, None)?)]
                }
                _ => bail!("prior needs --manifest or --image with --points"),
            };
            for (id, r) in &jobs {
                let map = fusion_prior(&r.image, &r.annotation, &cfg.train.prior)?;
                write_prior(&dir.join(format!("{id}.dspr")), &map)?;
                write_gray(&dir.join(format!("{id}.png")), map.dims, &map.values)?;
            }
            println!("wrote {} prior maps to {}", jobs.len(), dir.display());
        }
        Command::AuditLabels { manifest } => {
            let mut datasets: Vec<(String, Vec<SampleRecord>)> = Vec::new();
            if manifest.is_empty() {
                let (mut train, test) = cfg.data.load()?;
                train.extend(test);
                datasets.push(("synthetic".into(), train));
            }
            for m in manifest {
                let name = m.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
                datasets.push((name, load_manifest(m)?));
            }
            let mut rows = Vec::new();
            for (name, records) in &datasets {
                let (mut boxes, mut pure) = (Vec::new(), Vec::new());
                for r in records {
                    let gt = r
                        .gt_mask
                        .as_ref()
                        .ok_or_else(|| pointseg_core::Error::MissingGroundTruth(r.id.clone()))?;
                    let l = generate_labels(&r.annotation, r.image.dims())?;
                    boxes.push(box_label_precision(&l, gt)?);
                    pure.push(label_precision(&l, gt)?);
                }
                rows.push((name.as_str(), corpus_precision(&boxes), corpus_precision(&pure)));
            }
            let table = audit_table(&rows);
            create_dir(out)?;
            write_text(&out.join("audit.txt"), &table)?;
            print!("{table}");
        }
        Command::Train { manifest, preset, epochs } => {
            if let Some(m) = manifest {
                cfg.data.manifest = Some(m.clone());
            }
            if let Some(p) = preset {
                cfg.train.preset = *p;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cfg.validate()?;
            train(&cfg, out)?;
        }
        Command::Eval { checkpoint, manifest, threshold } => {
            let ck = Checkpoint::load(checkpoint)?;
            let records = match manifest {
                Some(m) => load_manifest(m)?,
                None => cfg.data.load()?.1,
            };
            let threshold = threshold.unwrap_or(ck.settings.threshold);
            let report = evaluate(&ck.params, &records, ck.settings.preset, &ck.settings.prior, threshold)?;
            create_dir(out)?;
            write_text(&out.join("eval.csv"), &eval_csv(&report)?)?;
            println!(
                "images={} miou={:.4} dsc={:.4} hd={:.3}",
                report.len(),
                report.mean_iou,
                report.mean_dice,
                report.mean_hd
            );
        }
        Command::Infer { checkpoint, image, points, threshold, output, prob_out } => {
            let ck = Checkpoint::load(checkpoint)?;
            let img = read_image(image)?;
            let ann = annotation(points)?;
            let record = SampleRecord::new("input", img, ann, None)?;
            let (input, _) = build_inputs(&record, ck.settings.preset, &ck.settings.prior)?;
            let threshold = threshold.unwrap_or(ck.settings.threshold);
            let (mask, prob) = predict_mask(&ck.params, &input.cast::<f32>(), threshold)?;
            let path = output.clone().unwrap_or_else(|| out.join("mask.png"));
            write_mask(&path, &mask)?;
            if let Some(p) = prob_out {
                write_gray(p, mask.dims(), &prob)?;
            }
            println!("wrote {} ({} foreground pixels)", path.display(), mask.count());
        }
        Command::Ablate { seeds, epochs, presets } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            let presets = presets
                .chars()
                .map(|c| c.to_string().parse::<Preset>())
                .collect::<Result<Vec<_>, _>>()?;
            let seeds: Vec<u64> = (0..*seeds).map(|i| cfg.train.seed + i).collect();
            let (train, test) = cfg.data.load()?;
            let table = ablation_suite(&cfg.train, &presets, &seeds, &train, &test, |p, s, r| match r {
                Ok(r) => eprintln!("preset={p} seed={s} dsc={:.4} hd={:.3}", r.mean_dice, r.mean_hd),
                Err(e) => eprintln!("preset={p} seed={s} failed: {e}"),
            });
            let text = ablation_table(&table);
            create_dir(out)?;
            write_text(&out.join("ablation.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

/// Full training run: per-epoch checkpoints, step log, validation log and a final report.
pub fn train(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (train, held_out) = cfg.data.load()?;
    if train.is_empty() {
        bail!("training set is empty");
    }
    let ck_dir = out.join("checkpoints");
    create_dir(&ck_dir)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let data = prepare::<f32>(&train, cfg.train.preset, &cfg.train.prior)?;
    let mut trainer = Trainer::<f32>::new(cfg.train.clone())?;
    let validate = held_out.iter().all(|r| r.gt_mask.is_some()) && !held_out.is_empty();
    let (mut steps, mut epochs) = (String::new(), String::new());
    while trainer.epoch < cfg.train.epochs {
        let log = match trainer.train_epoch(&data) {
            Ok(log) => log,
            Err(e) => {
                write_text(&out.join("steps.log"), &steps)?;
                return Err(e.into());
            }
        };
        for s in &log {
            steps.push_str(&step_line(s));
            steps.push('\n');
        }
        Checkpoint::from_trainer(&trainer).save(&ck_dir.join(format!("epoch_{:03}.ckpt", trainer.epoch)))?;
        if validate {
            let t = &trainer.settings;
            let r = evaluate(&trainer.params, &held_out, t.preset, &t.prior, t.threshold)?;
            writeln!(epochs, "epoch={} val_dsc={} val_hd={}", trainer.epoch, r.mean_dice, r.mean_hd).unwrap();
        }
    }
    write_text(&out.join("steps.log"), &steps)?;
    write_text(&out.join("epochs.log"), &epochs)?;
    Checkpoint::from_trainer(&trainer).save(&out.join("model.ckpt"))?;
    if validate {
        let report = evaluate(
            &trainer.params,
            &held_out,
            cfg.train.preset,
            &cfg.train.prior,
            cfg.train.threshold,
        )?;
        write_text(&out.join("eval.csv"), &eval_csv(&report)?)?;
        println!(
            "preset={} epochs={} dsc={:.4} hd={:.3}",
            cfg.train.preset, cfg.train.epochs, report.mean_dice, report.mean_hd
        );
    }
    Ok(())
}
