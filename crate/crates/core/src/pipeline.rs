//! Correction, merging and evaluation over a set of samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PlcError, Result};
use crate::geo::{merge_global, GlobalLane, RegionAnchor};
use crate::lane::{LaneInstance, LaneRole};
use crate::metrics::{evaluate, LanePair, MetricsReport, ReportTable, Unit};
use crate::sample::Sample;
use crate::training::preprocess::{net_lane, NetScale};
use crate::training::{correct_net, Checkpoint};

/// One sample's lanes at net scale, before and after correction.
#[derive(Debug, Clone)]
pub struct SampleCorrection {
    pub image_id: String,
    pub anchor: RegionAnchor,
    pub scale: NetScale,
    /// `(height, width)` of the network canvas.
    pub canvas: (usize, usize),
    pub initial: Vec<LaneInstance>,
    pub corrected: Vec<LaneInstance>,
    /// GT resampled like the initial lanes; `None` where a track has no GT.
    pub gt: Vec<Option<LaneInstance>>,
}

impl SampleCorrection {
    fn to_orig(&self, lane: &LaneInstance) -> LaneInstance {
        LaneInstance {
            points: lane.points.iter().map(|&p| self.scale.to_orig(p)).collect(),
            ..lane.clone()
        }
    }

    /// Corrected lanes in the original pixel frame.
    pub fn corrected_orig(&self) -> Vec<LaneInstance> {
        self.corrected.iter().map(|l| self.to_orig(l)).collect()
    }

    pub fn initial_orig(&self) -> Vec<LaneInstance> {
        self.initial.iter().map(|l| self.to_orig(l)).collect()
    }

    pub fn gt_orig(&self) -> Vec<LaneInstance> {
        self.gt.iter().flatten().map(|l| self.to_orig(l)).collect()
    }
}

pub fn correct_sample(ckpt: &Checkpoint, sample: &Sample) -> Result<SampleCorrection> {
    let (prepared, corrected) = correct_net(ckpt, sample)?;
    let initial: Vec<LaneInstance> = prepared
        .lanes
        .iter()
        .map(|l| LaneInstance::new(l.track_id, LaneRole::Initial, l.initial.clone()))
        .collect();
    let gt = initial
        .iter()
        .map(|l| {
            sample
                .gt_for(l.track_id)
                .map(|g| {
                    net_lane(g, prepared.scale, ckpt.config.m)
                        .map(|pts| LaneInstance::new(g.track_id, LaneRole::GroundTruth, pts))
                })
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleCorrection {
        image_id: sample.image_id.clone(),
        anchor: sample.anchor,
        scale: prepared.scale,
        canvas: (ckpt.config.net_height, ckpt.config.net_width),
        initial,
        corrected,
        gt,
    })
}

/// Corrects every sample (in parallel; output order follows input).
pub fn correct_samples(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Vec<SampleCorrection>> {
    samples.par_iter().map(|s| correct_sample(ckpt, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Net-canvas pixel metrics, rows "initial" and "corrected".
    pub local: ReportTable,
    /// 100-point global lanes in meters, rows "initial" and "corrected".
    pub global: ReportTable,
}

impl Evaluation {
    pub fn local_row(&self, label: &str) -> &MetricsReport {
        &self.local.rows.iter().find(|(l, _)| l == label).expect("row exists").1
    }

    pub fn global_row(&self, label: &str) -> &MetricsReport {
        &self.global.rows.iter().find(|(l, _)| l == label).expect("row exists").1
    }
}

/// Global lanes from corrected fragments, in meters.
pub fn merge_corrected(corrections: &[SampleCorrection]) -> Vec<GlobalLane> {
    let fragments: Vec<(LaneInstance, RegionAnchor)> = corrections
        .iter()
        .flat_map(|c| c.corrected_orig().into_iter().map(move |l| (l, c.anchor)))
        .collect();
    merge_global(&fragments)
}

fn global_pairs(ours: &[GlobalLane], gt: &[GlobalLane]) -> Vec<(u32, Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    ours.iter()
        .filter_map(|l| {
            gt.iter()
                .find(|g| g.track_id == l.track_id)
                .map(|g| (l.track_id, l.points.clone(), g.points.clone()))
        })
        .collect()
}

/// Local and global metrics of the initial and corrected lanes against GT.
/// Lanes without GT are left out; it is an error if none remain.
pub fn evaluate_corrections(corrections: &[SampleCorrection]) -> Result<Evaluation> {
    let mut local_rows = Vec::new();
    for (label, pick) in [("initial", 0), ("corrected", 1)] {
        let mut pairs = Vec::new();
        for c in corrections {
            let lanes = if pick == 0 { &c.initial } else { &c.corrected };
            for (lane, gt) in lanes.iter().zip(&c.gt) {
                if let Some(gt) = gt {
                    pairs.push(LanePair {
                        track_id: lane.track_id,
                        corrected: &lane.points,
                        gt: &gt.points,
                        canvas: Some(c.canvas),
                    });
                }
            }
        }
        if pairs.is_empty() {
            return Err(PlcError::invalid("no lanes with ground truth to evaluate"));
        }
        local_rows.push((label.to_string(), evaluate(&pairs, Unit::Pixel)?));
    }

    let with_gt = |c: &SampleCorrection, lanes: Vec<LaneInstance>| -> Vec<(LaneInstance, RegionAnchor)> {
        lanes
            .into_iter()
            .zip(&c.gt)
            .filter(|(_, g)| g.is_some())
            .map(|(l, _)| (l, c.anchor))
            .collect()
    };
    let gt_fragments: Vec<_> = corrections.iter().flat_map(|c| c.gt_orig().into_iter().map(move |l| (l, c.anchor))).collect();
    let initial_fragments: Vec<_> = corrections.iter().flat_map(|c| with_gt(c, c.initial_orig())).collect();
    let corrected_fragments: Vec<_> = corrections.iter().flat_map(|c| with_gt(c, c.corrected_orig())).collect();
    let gt_global = merge_global(&gt_fragments);
    let mut global_rows = Vec::new();
    for (label, fragments) in [("initial", initial_fragments), ("corrected", corrected_fragments)] {
        let ours = merge_global(&fragments);
        let pairs = global_pairs(&ours, &gt_global);
        let lane_pairs: Vec<LanePair> = pairs
            .iter()
            .map(|(id, a, b)| LanePair {
                track_id: *id,
                corrected: a,
                gt: b,
                canvas: None,
            })
            .collect();
        global_rows.push((label.to_string(), evaluate(&lane_pairs, Unit::Meter)?));
    }
    Ok(Evaluation {
        local: ReportTable { rows: local_rows },
        global: ReportTable { rows: global_rows },
    })
}
