use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::camgeom::DepthMap;
use crate::error::{Error, Result};
use crate::evalmetrics::{eigen_crop_mask, evaluate_depth, MetricsReport, KITTI_DEPTH_CAP};
use crate::kittidata::{index_sequences, load_split, FrameId, FrameSample, LoadOptions, SourceRole, SplitRole};
use crate::networks::{disparity_to_depth, Model};
use crate::synthdata::{read_dataset_samples, read_depth_array, write_depth_array, DepthDtype};

use super::{predict, Checkpoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub id: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub split: PathBuf,
    pub eigen_crop: bool,
    pub depth_cap: f64,
    pub frames: usize,
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_frame: Vec<FrameResult>,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Overrides the data root recorded in the checkpoint.
    pub data_root: Option<PathBuf>,
    pub per_frame: bool,
    /// Writes each predicted depth map here as a raw depth array.
    pub dump_depth: Option<PathBuf>,
}

/// Rebuilds a model from a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let cfg = &ckpt.manifest.config;
    let mut model = Model::new(&cfg.net, cfg.seed)?;
    let values: Vec<(String, Tensor)> =
        ckpt.arrays.iter().filter(|(n, _)| model.store.id(n).is_some()).cloned().collect();
    if values.len() != model.store.len() {
        return Err(Error::Checkpoint(format!("checkpoint holds {} of {} parameters", values.len(), model.store.len())));
    }
    model.store.load_values(&values)?;
    Ok(model)
}

/// Bilinearly resamples a `1×1×h×w` disparity to `height×width` and converts it to depth.
fn depth_at(disp: &Tensor, height: usize, width: usize, model: &Model) -> Result<DepthMap> {
    let mut g = Graph::new();
    let d = g.constant(disp.clone());
    let r = g.resize_bilinear(d, height, width);
    disparity_to_depth(g.value(r), model.net.cfg.depth_range)
}

/// Evaluates a checkpoint. `split` is either a KITTI split file, whose
/// ground truth is read from `gt_dir/<frame stem>.bin`, or a directory
/// written by `render-synth`, whose manifest supplies the ground truth.
pub fn evaluate_checkpoint(ckpt_path: &Path, split: &Path, gt_dir: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = model_from_checkpoint(&ckpt)?;
    let cfg = &ckpt.manifest.config;
    let synthetic = split.is_dir();
    let samples: Vec<FrameSample> = if synthetic {
        let mut s = read_dataset_samples(split, cfg.net.num_scales)?;
        for sample in &mut s {
            let gt_path = gt_dir.join(format!("{}_depth.bin", sample.id));
            if gt_path.is_file() {
                sample.gt_depth = Some(read_depth_array(&gt_path)?);
            }
        }
        s
    } else {
        let root = opts.data_root.clone().unwrap_or_else(|| cfg.kitti.root.clone());
        let index = index_sequences(&root, Some(split), SplitRole::Test)?;
        let load = LoadOptions {
            resolution: cfg.net.input_resolution,
            roles: vec![SourceRole::Prev, SourceRole::Next],
            num_scales: cfg.net.num_scales,
            evaluation: true,
        };
        let mut s = load_split(&root, &index, &load)?;
        for (sample, id) in s.iter_mut().zip(&index.entries) {
            sample.gt_depth = Some(read_gt(gt_dir, id)?);
        }
        s
    };
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no frames", split.display())));
    }

    let refs: Vec<&FrameSample> = samples.iter().collect();
    let preds = predict(&model, &model.net, &refs, cfg.batch_size)?;
    let mut per_frame = Vec::new();
    for (sample, pred) in samples.iter().zip(&preds) {
        let gt = sample.gt_depth.as_ref().expect("ground truth attached");
        let depth = depth_at(&pred.disparity, gt.height(), gt.width(), &model)?;
        if let Some(dir) = &opts.dump_depth {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.bin", sample.id.replace(' ', "_")));
            write_depth_array(&path, depth.height(), depth.width(), depth.values(), DepthDtype::F32)?;
        }
        let mask =
            if synthetic { vec![true; gt.values().len()] } else { eigen_crop_mask(gt.height(), gt.width()) };
        let metrics = evaluate_depth(&depth, gt, &mask, KITTI_DEPTH_CAP)?;
        per_frame.push(FrameResult { id: sample.id.clone(), metrics });
    }
    let all: Vec<MetricsReport> = per_frame.iter().map(|f| f.metrics.clone()).collect();
    Ok(EvalReport {
        checkpoint: ckpt_path.to_path_buf(),
        split: split.to_path_buf(),
        eigen_crop: !synthetic,
        depth_cap: KITTI_DEPTH_CAP,
        frames: per_frame.len(),
        metrics: MetricsReport::mean(&all).expect("non-empty"),
        per_frame: if opts.per_frame { per_frame } else { Vec::new() },
    })
}

fn read_gt(gt_dir: &Path, id: &FrameId) -> Result<DepthMap> {
    read_depth_array(&gt_dir.join(format!("{}.bin", id.file_stem())))
}
