//! Peak extraction from probability maps and detection metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::loss::Heatmap;
use crate::train::AnnotationRecord;

pub const DEFAULT_NMS_RADIUS: f64 = 20.0;
pub const DEFAULT_NMS_MIN: f64 = 0.2;
pub const DEFAULT_MATCH_RADIUS: f64 = 20.0;

/// Wording written into every report alongside the rates.
pub const FALSE_ALARM_DEFINITION: &str = "unmatched detections / total detections of the kind";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Core,
    Delta,
}

/// A detection or a ground-truth mark; `x` is the column and `y` the row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub x: f64,
    pub y: f64,
    pub kind: PointKind,
    pub score: f64,
}

impl SingularPoint {
    pub fn new(x: f64, y: f64, kind: PointKind, score: f64) -> Self {
        SingularPoint { x, y, kind, score }
    }

    fn dist2(&self, x: f64, y: f64) -> f64 {
        (self.x - x).powi(2) + (self.y - y).powi(2)
    }
}

/// Greedy non-maximum suppression.
///
/// Repeatedly takes the highest remaining pixel with value `>= min_value`
/// and discards every pixel within Euclidean distance `radius` of it. Equal
/// scores are visited in row-major order. Output is sorted by descending
/// score.
pub fn nms(map: &Heatmap<f32>, radius: f64, min_value: f64, kind: PointKind) -> Vec<SingularPoint> {
    let (h, w) = (map.height(), map.width());
    let mut candidates: Vec<(usize, f32)> =
        map.values().iter().enumerate().filter(|&(_, &v)| v as f64 >= min_value).map(|(i, &v)| (i, v)).collect();
    // stable sort keeps row-major order among equal scores
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));

    let mut suppressed = vec![false; h * w];
    let r = radius.max(0.0);
    let reach = r.floor() as i64;
    let r2 = r * r;
    let mut out = Vec::new();
    for (i, v) in candidates {
        if suppressed[i] {
            continue;
        }
        let (row, col) = ((i / w) as i64, (i % w) as i64);
        out.push(SingularPoint::new(col as f64, row as f64, kind, v as f64));
        for dy in -reach..=reach {
            let y = row + dy;
            if y < 0 || y >= h as i64 {
                continue;
            }
            for dx in -reach..=reach {
                let x = col + dx;
                if x < 0 || x >= w as i64 || ((dx * dx + dy * dy) as f64) > r2 {
                    continue;
                }
                suppressed[y as usize * w + x as usize] = true;
            }
        }
    }
    out
}

/// One-to-one assignment of detections to ground truth.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Matching {
    /// `(detection index, ground-truth index)`.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
}

/// Greedy matching by increasing distance; pairs farther apart than
/// `match_radius` never match. Distance ties resolve by detection index,
/// then ground-truth index.
pub fn match_points(detections: &[SingularPoint], ground_truth: &[[f64; 2]], match_radius: f64) -> Matching {
    let r2 = match_radius * match_radius;
    let mut edges = Vec::new();
    for (d, det) in detections.iter().enumerate() {
        for (g, &[x, y]) in ground_truth.iter().enumerate() {
            let d2 = det.dist2(x, y);
            if d2 <= r2 {
                edges.push((d2, d, g));
            }
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut det_used = vec![false; detections.len()];
    let mut gt_used = vec![false; ground_truth.len()];
    let mut pairs = Vec::new();
    for (_, d, g) in edges {
        if !det_used[d] && !gt_used[g] {
            det_used[d] = true;
            gt_used[g] = true;
            pairs.push((d, g));
        }
    }
    pairs.sort_unstable();
    Matching {
        pairs,
        unmatched_detections: (0..detections.len()).filter(|&i| !det_used[i]).collect(),
        unmatched_ground_truth: (0..ground_truth.len()).filter(|&i| !gt_used[i]).collect(),
    }
}

/// Detections for one image with the time spent producing them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub points: Vec<SingularPoint>,
    pub time_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub gt: usize,
    pub detected: usize,
    pub matched: usize,
    pub false_alarms: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerKind<T> {
    pub core: T,
    pub delta: T,
}

impl<T> PerKind<T> {
    pub fn get(&self, kind: PointKind) -> &T {
        match kind {
            PointKind::Core => &self.core,
            PointKind::Delta => &self.delta,
        }
    }

    fn get_mut(&mut self, kind: PointKind) -> &mut T {
        match kind {
            PointKind::Core => &mut self.core,
            PointKind::Delta => &mut self.delta,
        }
    }
}

/// Detection rate and false alarm rate (percent) per kind, plus mean
/// per-image processing time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection_rate: PerKind<f64>,
    pub false_alarm_rate: PerKind<f64>,
    pub avg_time_ms: f64,
    pub counts: PerKind<KindCounts>,
    pub images: usize,
    pub match_radius: f64,
    pub false_alarm_definition: String,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Aggregates per-image detections against their annotations.
///
/// `detection_rate = matched / ground truth` and
/// `false_alarm_rate = unmatched detections / detections`, both 0 when the
/// denominator is 0.
pub fn evaluate(outputs: &[ImageDetections], annotations: &[AnnotationRecord], match_radius: f64) -> EvalReport {
    assert_eq!(outputs.len(), annotations.len(), "one detection set per annotated image");
    let mut counts = PerKind::<KindCounts>::default();
    for (out, ann) in outputs.iter().zip(annotations) {
        for (kind, gt) in [(PointKind::Core, &ann.cores), (PointKind::Delta, &ann.deltas)] {
            let dets: Vec<SingularPoint> = out.points.iter().filter(|p| p.kind == kind).copied().collect();
            let m = match_points(&dets, gt, match_radius);
            let c = counts.get_mut(kind);
            c.gt += gt.len();
            c.detected += dets.len();
            c.matched += m.pairs.len();
            c.false_alarms += m.unmatched_detections.len();
        }
    }
    let rate = |f: fn(&KindCounts) -> f64| PerKind { core: f(&counts.core), delta: f(&counts.delta) };
    let total_ms: f64 = outputs.iter().map(|o| o.time_ms).sum();
    EvalReport {
        detection_rate: rate(|c| percent(c.matched, c.gt)),
        false_alarm_rate: rate(|c| percent(c.false_alarms, c.detected)),
        avg_time_ms: if outputs.is_empty() { 0.0 } else { total_ms / outputs.len() as f64 },
        counts,
        images: outputs.len(),
        match_radius,
        false_alarm_definition: FALSE_ALARM_DEFINITION.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_with(h: usize, w: usize, peaks: &[(usize, usize, f32)]) -> Heatmap<f32> {
        let mut m = Heatmap::zeros(h, w);
        for &(x, y, v) in peaks {
            m.set(y, x, v);
        }
        m
    }

    fn det(x: f64, y: f64) -> SingularPoint {
        SingularPoint::new(x, y, PointKind::Core, 0.5)
    }

    #[test]
    fn single_peak() {
        let m = map_with(16, 16, &[(5, 5, 0.3)]);
        let pts = nms(&m, 20.0, 0.2, PointKind::Core);
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].x, pts[0].y), (5.0, 5.0));
        assert!((pts[0].score - 0.3).abs() < 1e-7);
    }

    #[test]
    fn below_threshold_dropped() {
        let m = map_with(16, 16, &[(5, 5, 0.15)]);
        assert!(nms(&m, 20.0, 0.2, PointKind::Core).is_empty());
    }

    #[test]
    fn nearby_weaker_peak_suppressed() {
        let m = map_with(32, 32, &[(0, 0, 0.9), (10, 10, 0.8)]);
        let pts = nms(&m, 20.0, 0.2, PointKind::Delta);
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].x, pts[0].y), (0.0, 0.0));
        assert_eq!(pts[0].kind, PointKind::Delta);
    }

    #[test]
    fn far_peaks_both_kept_in_score_order() {
        let m = map_with(64, 64, &[(2, 2, 0.5), (50, 50, 0.7)]);
        let pts = nms(&m, 20.0, 0.2, PointKind::Core);
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[0].x, pts[0].y), (50.0, 50.0));
    }

    #[test]
    fn equal_scores_resolve_row_major() {
        let m = map_with(8, 8, &[(6, 1, 0.5), (2, 3, 0.5)]);
        let pts = nms(&m, 20.0, 0.2, PointKind::Core);
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].x, pts[0].y), (6.0, 1.0));
    }

    #[test]
    fn matching_examples() {
        let m = match_points(&[det(5.0, 0.0)], &[[0.0, 0.0]], 20.0);
        assert_eq!(m.pairs, vec![(0, 0)]);

        let m = match_points(&[det(5.0, 0.0), det(30.0, 0.0)], &[[0.0, 0.0]], 20.0);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.unmatched_detections, vec![1]);

        let m = match_points(&[det(50.0, 30.0)], &[[0.0, 0.0], [100.0, 0.0]], 20.0);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_ground_truth, vec![0, 1]);
    }

    #[test]
    fn matching_prefers_closest_pair() {
        // det 0 is closer to gt 1 than to gt 0; det 1 only reaches gt 0
        let m = match_points(&[det(10.0, 0.0), det(-8.0, 0.0)], &[[0.0, 0.0], [12.0, 0.0]], 20.0);
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
    }

    fn record(cores: Vec<[f64; 2]>, deltas: Vec<[f64; 2]>) -> AnnotationRecord {
        AnnotationRecord { image: "x.pgm".into(), cores, deltas }
    }

    #[test]
    fn perfect_and_empty_reports() {
        let ann = vec![record(vec![[10.0, 10.0]], vec![[60.0, 60.0]])];
        let perfect = vec![ImageDetections {
            points: vec![
                SingularPoint::new(11.0, 10.0, PointKind::Core, 0.9),
                SingularPoint::new(60.0, 58.0, PointKind::Delta, 0.8),
            ],
            time_ms: 4.0,
        }];
        let r = evaluate(&perfect, &ann, 20.0);
        assert_eq!(r.detection_rate.core, 100.0);
        assert_eq!(r.detection_rate.delta, 100.0);
        assert_eq!(r.false_alarm_rate.core, 0.0);
        assert_eq!(r.false_alarm_rate.delta, 0.0);
        assert_eq!(r.avg_time_ms, 4.0);

        let r = evaluate(&[ImageDetections::default()], &ann, 20.0);
        assert_eq!(r.detection_rate.core, 0.0);
        assert_eq!(r.false_alarm_rate.core, 0.0);
        assert_eq!(r.false_alarm_rate.delta, 0.0);
    }

    #[test]
    fn ratio_arithmetic() {
        // 10 GT cores, 12 detections of which 9 land on distinct GT
        let gt: Vec<[f64; 2]> = (0..10).map(|i| [100.0 * i as f64, 0.0]).collect();
        let mut points: Vec<SingularPoint> = (0..9).map(|i| det(100.0 * i as f64 + 1.0, 0.0)).collect();
        points.extend((0..3).map(|i| det(100.0 * i as f64, 500.0)));
        let r = evaluate(&[ImageDetections { points, time_ms: 1.0 }], &[record(gt, vec![])], 20.0);
        assert_eq!(r.counts.core.matched, 9);
        assert_eq!(r.counts.core.detected, 12);
        assert!((r.detection_rate.core - 90.0).abs() < 1e-12);
        assert!((r.false_alarm_rate.core - 25.0).abs() < 1e-12);
    }
}
