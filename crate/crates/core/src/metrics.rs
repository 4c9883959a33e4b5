//! Mask IoU, greedy matching and COCO-style average precision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detections::{EggClass, EggInstance, GroundTruthSet};
use crate::num::Real;
use crate::polygon::{bbox_of, Polygon};
use crate::raster::{rasterize, Grid};

/// Number of points on the recall grid.
pub const RECALL_POINTS: usize = 101;
const MAX_PITCH_HALVINGS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("zero-area mask")]
    ZeroArea,
    #[error("pitch must be positive")]
    BadPitch,
    #[error("class {0} is not a category of the ground truth")]
    ClassMismatch(&'static str),
    #[error("detections reference unknown image {0}")]
    UnknownImage(u64),
    #[error("iou threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

/// The ten COCO thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// IoU of two polygon sets rasterized on one grid of `pitch` covering both.
///
/// When a mask is too small to own a single cell at `pitch`, the pitch is
/// halved (up to eight times) so that tiny positive-area masks still compare.
pub fn mask_iou<T: Real>(a: &[Polygon<T>], b: &[Polygon<T>], pitch: T) -> Result<T, EvalError> {
    if !(pitch > T::zero()) {
        return Err(EvalError::BadPitch);
    }
    let area = |ps: &[Polygon<T>]| ps.iter().fold(T::zero(), |s, p| s + p.area());
    if !(area(a) > T::zero()) || !(area(b) > T::zero()) {
        return Err(EvalError::ZeroArea);
    }
    let (ba, bb) = (bbox_of(a).unwrap(), bbox_of(b).unwrap());
    if ba.intersection(&bb).is_none() {
        return Ok(T::zero());
    }
    let cover = ba.union(&bb);
    let mut pitch = pitch;
    for _ in 0..=MAX_PITCH_HALVINGS {
        let grid = Grid::covering(&cover, pitch);
        let (ma, mb) = (rasterize(&grid, a), rasterize(&grid, b));
        let (na, nb) = (ma.count(), mb.count());
        if na > 0 && nb > 0 {
            let inter = ma.and_count(&mb);
            return Ok(T::from_count(inter) / T::from_count(na + nb - inter));
        }
        pitch = pitch / T::lit(2.0);
    }
    Err(EvalError::ZeroArea)
}

/// Pairwise IoU matrix, `m[d][g]`.
pub fn iou_matrix<T: Real>(dets: &[&[Polygon<T>]], gts: &[&[Polygon<T>]], pitch: T) -> Result<Vec<Vec<f64>>, EvalError> {
    dets.iter()
        .map(|d| gts.iter().map(|g| mask_iou(d, g, pitch).map(|v| v.as_f64())).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices in processing order (descending score, stable).
    pub order: Vec<usize>,
    /// For each entry of `order`, the matched ground-truth index.
    pub det_matches: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.det_matches.iter().filter(|m| m.is_some()).count()
    }
}

/// Stable ordering of indices by descending score.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching from a precomputed IoU matrix.
pub fn match_from_ious(scores: &[f64], ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> MatchResult {
    let order = score_order(scores);
    let mut gt_matched = vec![false; n_gt];
    let det_matches = order
        .iter()
        .map(|&d| {
            let mut best: Option<(usize, f64)> = None;
            for g in (0..n_gt).filter(|&g| !gt_matched[g]) {
                let v = ious[d][g];
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let hit = best.map(|(g, _)| g);
            if let Some(g) = hit {
                gt_matched[g] = true;
            }
            hit
        })
        .collect();
    MatchResult { order, det_matches, gt_matched }
}

/// Greedy one-to-one matching of same-class detections to ground truth.
pub fn match_greedy<T: Real>(
    dets: &[EggInstance<T>],
    gts: &[EggInstance<T>],
    iou_threshold: f64,
    pitch: T,
) -> Result<MatchResult, EvalError> {
    let dp: Vec<&[Polygon<T>]> = dets.iter().map(|d| d.polygons.as_slice()).collect();
    let gp: Vec<&[Polygon<T>]> = gts.iter().map(|g| g.polygons.as_slice()).collect();
    let ious = iou_matrix(&dp, &gp, pitch)?;
    let scores: Vec<f64> = dets.iter().map(|d| d.score.as_f64()).collect();
    Ok(match_from_ious(&scores, &ious, gts.len(), iou_threshold))
}

/// 101-point interpolated AP of a ranked TP/FP sequence. `None` when there
/// is no ground truth.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = Vec::with_capacity(ranked_tp.len());
    let mut envelope = Vec::with_capacity(ranked_tp.len());
    let (mut t, mut f) = (0usize, 0usize);
    for &hit in ranked_tp {
        if hit {
            t += 1;
        } else {
            f += 1;
        }
        tp.push(t);
        envelope.push(t as f64 / (t + f) as f64);
    }
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for i in 0..RECALL_POINTS {
        while k < tp.len() && tp[k] * (RECALL_POINTS - 1) < i * n_gt {
            k += 1;
        }
        if k == tp.len() {
            break;
        }
        sum += envelope[k];
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams<T: Real = f64> {
    /// Rasterization pitch in the detections' frame units.
    pub pitch: T,
    pub thresholds: Vec<f64>,
    /// Per-image cap on detections, highest scores kept.
    pub max_dets: Option<usize>,
}

impl<T: Real> Default for EvalParams<T> {
    fn default() -> Self {
        Self { pitch: T::one(), thresholds: coco_thresholds(), max_dets: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub n_gt: usize,
    pub n_det: usize,
    /// AP keyed by threshold formatted with two decimals.
    pub ap: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassReport>,
    pub map_50: Option<f64>,
    pub map_5095: Option<f64>,
}

impl EvalReport {
    pub fn ap(&self, class: EggClass, threshold: f64) -> Option<f64> {
        self.per_class.get(class.name())?.ap.get(&format!("{threshold:.2}")).copied().flatten()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        for (name, c) in &self.per_class {
            writeln!(
                f,
                "{name:<6} gt={:<5} det={:<5} AP@.5={} AP@.75={}",
                c.n_gt,
                c.n_det,
                show(c.ap.get("0.50").copied().flatten()),
                show(c.ap.get("0.75").copied().flatten()),
            )?;
        }
        writeln!(f, "mAP@.5     {}", show(self.map_50))?;
        write!(f, "mAP@.5:.95 {}", show(self.map_5095))
    }
}

/// Detections and ground truth of one image (or one whole trap).
#[derive(Debug, Clone, Default)]
pub struct ImageEval<T: Real = f64> {
    pub dets: Vec<EggInstance<T>>,
    pub gts: Vec<EggInstance<T>>,
}

fn check_thresholds(ts: &[f64]) -> Result<(), EvalError> {
    match ts.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        Some(&t) => Err(EvalError::BadThreshold(t)),
        None => Ok(()),
    }
}

/// AP per class and threshold over a list of images. Detections of all
/// images are ranked together; score ties keep image order, then insertion
/// order.
pub fn evaluate_images<T: Real>(images: &[ImageEval<T>], params: &EvalParams<T>) -> Result<EvalReport, EvalError> {
    check_thresholds(&params.thresholds)?;
    let mut per_class = BTreeMap::new();
    let mut ap50 = Vec::new();
    let mut ap_all = Vec::new();
    for class in EggClass::ALL {
        // (score, image, det) for the ranking, plus per-image IoU matrices.
        let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
        let mut per_image = Vec::new();
        let mut n_gt = 0;
        for (k, img) in images.iter().enumerate() {
            let mut dets: Vec<&EggInstance<T>> = img.dets.iter().filter(|d| d.class == class).collect();
            if let Some(cap) = params.max_dets {
                let scores: Vec<f64> = dets.iter().map(|d| d.score.as_f64()).collect();
                let keep: BTreeSet<usize> = score_order(&scores).into_iter().take(cap).collect();
                dets = dets.into_iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, d)| d).collect();
            }
            let gts: Vec<&EggInstance<T>> = img.gts.iter().filter(|g| g.class == class).collect();
            n_gt += gts.len();
            let dp: Vec<&[Polygon<T>]> = dets.iter().map(|d| d.polygons.as_slice()).collect();
            let gp: Vec<&[Polygon<T>]> = gts.iter().map(|g| g.polygons.as_slice()).collect();
            let ious = iou_matrix(&dp, &gp, params.pitch)?;
            let scores: Vec<f64> = dets.iter().map(|d| d.score.as_f64()).collect();
            ranked.extend(scores.iter().enumerate().map(|(d, &s)| (s, k, d)));
            per_image.push((scores, ious, gts.len()));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let n_det = ranked.len();

        let mut ap = BTreeMap::new();
        for &t in &params.thresholds {
            let tp_of: Vec<Vec<bool>> = per_image
                .iter()
                .map(|(scores, ious, ng)| {
                    let m = match_from_ious(scores, ious, *ng, t);
                    let mut hit = vec![false; scores.len()];
                    for (&d, mt) in m.order.iter().zip(&m.det_matches) {
                        hit[d] = mt.is_some();
                    }
                    hit
                })
                .collect();
            let seq: Vec<bool> = ranked.iter().map(|&(_, k, d)| tp_of[k][d]).collect();
            let v = average_precision(&seq, n_gt);
            if let Some(v) = v {
                ap_all.push(v);
                if (t - 0.5).abs() < 1e-12 {
                    ap50.push(v);
                }
            }
            ap.insert(format!("{t:.2}"), v);
        }
        per_class.insert(class.name().to_string(), ClassReport { n_gt, n_det, ap });
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(EvalReport { per_class, map_50: mean(&ap50), map_5095: mean(&ap_all) })
}

/// Evaluates detections keyed by image id against a ground-truth set.
/// Images without detections count as empty.
pub fn evaluate<T: Real>(
    dets: &BTreeMap<u64, Vec<EggInstance<T>>>,
    gt: &GroundTruthSet<T>,
    params: &EvalParams<T>,
) -> Result<EvalReport, EvalError> {
    let known: BTreeSet<&str> = gt.categories.iter().map(|c| c.name.as_str()).collect();
    for d in dets.values().flatten() {
        if !known.contains(d.class.name()) {
            return Err(EvalError::ClassMismatch(d.class.name()));
        }
    }
    let ids: BTreeSet<u64> = gt.images.iter().map(|i| i.id).collect();
    if let Some(&bad) = dets.keys().find(|k| !ids.contains(k)) {
        return Err(EvalError::UnknownImage(bad));
    }
    let images: Vec<ImageEval<T>> = gt
        .images
        .iter()
        .map(|img| ImageEval {
            dets: dets.get(&img.id).cloned().unwrap_or_default(),
            gts: gt.instances_for_image(img.id),
        })
        .collect();
    evaluate_images(&images, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::Frame;

    fn sq(x: f64, y: f64, w: f64, h: f64) -> Vec<Polygon> {
        vec![Polygon(vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]])]
    }

    fn egg(class: EggClass, score: f64, polys: Vec<Polygon>) -> EggInstance {
        EggInstance { id: 0, class, score, polygons: polys, frame: Frame::Global, clipped_edges: Default::default() }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(mask_iou(&sq(0.0, 0.0, 4.0, 4.0), &sq(0.0, 0.0, 4.0, 4.0), 1.0).unwrap(), 1.0);
        assert_eq!(mask_iou(&sq(0.0, 0.0, 4.0, 4.0), &sq(10.0, 0.0, 4.0, 4.0), 1.0).unwrap(), 0.0);
        let v = mask_iou(&sq(0.0, 0.0, 4.0, 4.0), &sq(2.0, 0.0, 4.0, 4.0), 1.0).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        let degenerate = vec![Polygon(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])];
        assert_eq!(mask_iou(&degenerate, &sq(0.0, 0.0, 1.0, 1.0), 1.0), Err(EvalError::ZeroArea));
        assert_eq!(mask_iou(&sq(0.0, 0.0, 1.0, 1.0), &sq(0.0, 0.0, 1.0, 1.0), 0.0), Err(EvalError::BadPitch));
        // Sub-cell masks refine the grid rather than vanish.
        assert_eq!(mask_iou(&sq(0.1, 0.1, 0.2, 0.2), &sq(0.1, 0.1, 0.2, 0.2), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn greedy_examples() {
        let ious = vec![vec![0.9], vec![0.95]];
        let m = match_from_ious(&[0.9, 0.8], &ious, 1, 0.5);
        assert_eq!(m.order, vec![0, 1]);
        assert_eq!(m.det_matches, vec![Some(0), None]);
        assert_eq!(m.gt_matched, vec![true]);
        let m = match_from_ious(&[1.0], &[vec![0.49]], 1, 0.5);
        assert_eq!(m.det_matches, vec![None]);
        // Score ties keep insertion order.
        let m = match_from_ious(&[0.5, 0.5], &[vec![0.6], vec![0.9]], 1, 0.5);
        assert_eq!(m.det_matches, vec![Some(0), None]);
        // Best remaining gt is taken, IoU ties go to the lowest index.
        let m = match_from_ious(&[0.5], &[vec![0.7, 0.7, 0.8]], 3, 0.5);
        assert_eq!(m.det_matches, vec![Some(2)]);
        let m = match_from_ious(&[0.5], &[vec![0.7, 0.7]], 2, 0.5);
        assert_eq!(m.det_matches, vec![Some(0)]);
    }

    #[test]
    fn greedy_on_masks() {
        let d = vec![egg(EggClass::Full, 1.0, sq(0.0, 0.0, 4.0, 4.0))];
        let m = match_greedy(&d, &d, 0.5, 1.0).unwrap();
        assert_eq!(m.det_matches, vec![Some(0)]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[false, true], 1), Some(0.5));
        assert_eq!(average_precision(&[true], 0), None);
        // Half recall: points 0..=50 score 1.
        assert!((average_precision(&[true], 2).unwrap() - 51.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_perfect_and_empty() {
        let gts = vec![
            egg(EggClass::Full, 1.0, sq(0.0, 0.0, 4.0, 4.0)),
            egg(EggClass::Hatched, 1.0, sq(10.0, 0.0, 4.0, 3.0)),
        ];
        let p = EvalParams::default();
        let r = evaluate_images(&[ImageEval { dets: gts.clone(), gts: gts.clone() }], &p).unwrap();
        assert_eq!((r.map_50, r.map_5095), (Some(1.0), Some(1.0)));
        let r = evaluate_images(&[ImageEval { dets: vec![], gts: gts.clone() }], &p).unwrap();
        assert_eq!((r.map_50, r.map_5095), (Some(0.0), Some(0.0)));
        let only_full = vec![gts[0].clone()];
        let r = evaluate_images(&[ImageEval { dets: only_full.clone(), gts: only_full }], &p).unwrap();
        assert_eq!(r.ap(EggClass::Hatched, 0.5), None);
        assert_eq!(r.map_50, Some(1.0));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["per_class"]["full"]["ap"]["0.95"], 1.0);
        assert!(v["per_class"]["hatch"]["ap"]["0.50"].is_null());
    }

    #[test]
    fn max_dets_cap() {
        let gts = vec![egg(EggClass::Full, 1.0, sq(0.0, 0.0, 4.0, 4.0))];
        let dets = vec![
            egg(EggClass::Full, 0.9, sq(20.0, 0.0, 4.0, 4.0)),
            egg(EggClass::Full, 0.1, sq(0.0, 0.0, 4.0, 4.0)),
        ];
        let mut p = EvalParams::default();
        let img = [ImageEval { dets, gts }];
        assert_eq!(evaluate_images(&img, &p).unwrap().map_50, Some(0.5));
        p.max_dets = Some(1);
        assert_eq!(evaluate_images(&img, &p).unwrap().map_50, Some(0.0));
    }

    #[test]
    fn thresholds() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        let p = EvalParams::<f64> { thresholds: vec![1.5], ..Default::default() };
        assert_eq!(evaluate_images::<f64>(&[], &p), Err(EvalError::BadThreshold(1.5)));
    }
}
