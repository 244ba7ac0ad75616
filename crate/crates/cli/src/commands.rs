use std::path::{Path, PathBuf};

use rayon::prelude::*;

use plc_core::io;
use plc_core::pipeline::{correct_samples, evaluate_corrections, merge_corrected, SampleCorrection};
use plc_core::sample::{read_sample, read_split, Annotation};
use plc_core::synth::{write_dataset, SynthParams};
use plc_core::training::{train_with, Checkpoint, EpochRecord, TrainConfig};
use plc_core::{LaneInstance, LaneRole, PlcError};

use crate::overlay::draw_lanes;

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CommandError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

impl CommandError {
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<PlcError> for CommandError {
    fn from(e: PlcError) -> Self {
        let code = match e {
            PlcError::UnknownConfigKey { .. } | PlcError::BadConfigValue { .. } => EXIT_USAGE,
            PlcError::Format { .. } | PlcError::Io { .. } | PlcError::InvalidInput(_) => EXIT_DATA,
            PlcError::Autodiff(_) => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, CommandError>;

fn config_text(path: Option<&Path>) -> CmdResult<String> {
    Ok(match path {
        Some(p) => io::read_text(p)?,
        None => String::new(),
    })
}

/// `dir/<split>` when it exists, otherwise `dir` itself.
fn split_dir(dir: &Path, split: &str) -> PathBuf {
    let sub = dir.join(split);
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

pub fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut params = SynthParams::from_kv(&config_text(config)?)?;
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let manifest = write_dataset(&params, out)?;
    println!(
        "wrote {} train / {} test samples (seed {}) to {}",
        manifest.train,
        manifest.test,
        manifest.seed,
        out.display()
    );
    Ok(())
}

/// Tab-separated loss history with a header row.
pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\tseg_loss\toffset_loss\tlr\n");
    for r in history {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.epoch, r.seg_loss, r.offset_loss, r.lr));
    }
    out
}

/// Default loss-log path: the checkpoint path with `.history.tsv` appended.
pub fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".history.tsv");
    PathBuf::from(s)
}

pub fn train(config: Option<&Path>, data: &Path, out: &Path, log: Option<&Path>, seed: Option<u64>) -> CmdResult {
    let mut cfg = TrainConfig::from_kv(&config_text(config)?)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let samples = read_split(&split_dir(data, "train"))?;
    if samples.is_empty() {
        return Err(CommandError::data(format!("no samples under {}", data.display())));
    }
    println!("training on {} samples for {} epochs", samples.len(), cfg.epochs);
    let ckpt = train_with(&cfg, &samples, |r| {
        println!(
            "epoch {:>3}/{}  seg {:.6}  offset {:.6}  lr {}",
            r.epoch, cfg.epochs, r.seg_loss, r.offset_loss, r.lr
        );
    })
    .map_err(|e| CommandError {
        code: EXIT_RUNTIME,
        ..CommandError::from(e)
    })?;
    let log = log.map_or_else(|| default_log_path(out), Path::to_path_buf);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        io::create_dir_all(parent)?;
    }
    ckpt.save(out)?;
    io::write_atomic(&log, history_tsv(&ckpt.history).as_bytes())?;
    println!("wrote checkpoint {} and loss log {}", out.display(), log.display());
    Ok(())
}

/// Initial, corrected and GT lanes of one sample in its original pixel
/// frame, in the sample sidecar format.
pub fn lanes_annotation(c: &SampleCorrection) -> Annotation {
    let lanes = c
        .initial_orig()
        .into_iter()
        .chain(c.corrected_orig())
        .chain(c.gt_orig())
        .collect();
    Annotation {
        image_id: c.image_id.clone(),
        region_index: c.anchor.region_index,
        left_bottom: [c.anchor.x_lb, c.anchor.y_lb],
        resolution: c.anchor.resolution,
        lanes,
    }
}

pub const LANES_DIR: &str = "lanes";
pub const GLOBAL_LANES: &str = "global_lanes.json";
pub const LOCAL_REPORT: &str = "report_local.json";
pub const GLOBAL_REPORT: &str = "report_global.json";

pub fn correct_merge_eval(checkpoint: &Path, data: &Path, out: &Path, split: &str) -> CmdResult {
    let ckpt = Checkpoint::load(checkpoint)?;
    let samples = read_split(&split_dir(data, split))?;
    if samples.is_empty() {
        return Err(CommandError::data(format!("no samples under {}", data.display())));
    }
    let corrections = correct_samples(&ckpt, &samples)?;
    let lanes_dir = out.join(LANES_DIR);
    io::create_dir_all(&lanes_dir)?;
    corrections
        .par_iter()
        .map(|c| io::write_json(&lanes_dir.join(format!("{}.json", c.image_id)), &lanes_annotation(c)))
        .collect::<plc_core::Result<()>>()?;
    let global = merge_corrected(&corrections);
    io::write_json(&out.join(GLOBAL_LANES), &global)?;
    println!(
        "corrected {} samples; {} global lanes written to {}",
        corrections.len(),
        global.len(),
        out.display()
    );
    match evaluate_corrections(&corrections) {
        Ok(eval) => {
            io::write_json(&out.join(LOCAL_REPORT), &eval.local)?;
            io::write_json(&out.join(GLOBAL_REPORT), &eval.global)?;
            print!("local metrics (network canvas, px)\n{}", eval.local.render());
            print!("global metrics (m)\n{}", eval.global.render());
        }
        Err(PlcError::InvalidInput(detail)) => {
            log::warn!("evaluation skipped: {detail}");
            println!("evaluation skipped: {detail}");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn lane_files(lanes: &Path) -> CmdResult<Vec<PathBuf>> {
    if lanes.is_dir() {
        Ok(plc_core::sample::list_samples(lanes)?)
    } else {
        Ok(vec![lanes.to_path_buf()])
    }
}

fn find_sample(data: &Path, image_id: &str) -> Option<PathBuf> {
    ["test", "train", "."]
        .iter()
        .map(|s| data.join(s).join(format!("{image_id}.json")))
        .find(|p| p.is_file())
}

pub fn render(data: &Path, lanes: &Path, out: &Path) -> CmdResult {
    let files = lane_files(lanes)?;
    let jobs = files
        .iter()
        .map(|f| {
            let ann: Annotation = io::read_json(f)?;
            let sample = find_sample(data, &ann.image_id)
                .ok_or_else(|| CommandError::data(format!("{}: unknown sample `{}`", f.display(), ann.image_id)))?;
            Ok((ann, sample))
        })
        .collect::<CmdResult<Vec<_>>>()?;
    io::create_dir_all(out)?;
    let markers = jobs
        .par_iter()
        .map(|(ann, sample_path)| -> CmdResult<usize> {
            let mut img = read_sample(sample_path)?.image;
            let n = draw_lanes(&mut img, &ann.lanes);
            io::write_rgb_png(&out.join(format!("{}.png", ann.image_id)), &img)?;
            Ok(n)
        })
        .collect::<CmdResult<Vec<_>>>()?;
    println!(
        "rendered {} overlays ({} markers) to {}",
        jobs.len(),
        markers.iter().sum::<usize>(),
        out.display()
    );
    Ok(())
}

/// Lanes of one role in an annotation.
pub fn lanes_with_role(ann: &Annotation, role: LaneRole) -> Vec<&LaneInstance> {
    ann.lanes.iter().filter(|l| l.role == role).collect()
}
