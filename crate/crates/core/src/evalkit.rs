//! VOC 2007-style detection scoring: IoU, greedy score-ordered matching,
//! precision-recall curves, 11-point (or continuous) average precision,
//! and deterministic report files (`pr.svg`, `ap.csv`).

use crate::bbox::BoxF;
use crate::detect::Detection;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AP is undefined: zero ground truth boxes but {0} detections")]
    NoGroundTruth(usize),
    #[error("IoU threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("a report needs at least one named result")]
    EmptyReport,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("detections CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("detections CSV row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApMode {
    /// Mean of the max precision at recall anchors 0.0, 0.1, ..., 1.0.
    Voc2007ElevenPoint,
    /// Area under the precision envelope.
    ContinuousAuc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
    /// Difficult ground truth neither counts toward recall nor penalizes
    /// detections that land on it.
    pub ignore_difficult: bool,
    /// Devkit-parity switch: treat corners as inclusive pixel indices
    /// (+1 areas) instead of continuous rectangles.
    pub pixel_area: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            ap_mode: ApMode::Voc2007ElevenPoint,
            ignore_difficult: true,
            pixel_area: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_threshold > 0.0 && self.iou_threshold <= 1.0 {
            Ok(())
        } else {
            Err(EvalError::BadThreshold(self.iou_threshold))
        }
    }
}

/// One ground-truth box of the evaluated class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BoxF,
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    TruePositive,
    FalsePositive,
    /// Landed on difficult ground truth; dropped from the curve.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub score: f64,
    pub kind: MatchKind,
}

/// Intersection over union under either area convention.
pub fn iou(a: &BoxF, b: &BoxF, pixel_area: bool) -> f64 {
    if !pixel_area {
        return a.iou(b);
    }
    let side = |lo: f64, hi: f64| (hi - lo + 1.0).max(0.0);
    let area = |r: &BoxF| side(r.x1, r.x2) * side(r.y1, r.y2);
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1) + 1.0).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1) + 1.0).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Match one frame's detections against its ground truth, VOC style:
/// walk detections by descending score (ties keep input order); each
/// claims the highest-IoU still-unmatched countable ground truth at or
/// above the threshold, else is ignored if its overlap is with difficult
/// ground truth, else is a false positive.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    cfg: &EvalConfig,
) -> Vec<MatchRecord> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut used = vec![false; ground_truth.len()];
    let mut out = Vec::with_capacity(detections.len());
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if used[gi] || (gt.difficult && cfg.ignore_difficult) {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox, cfg.pixel_area);
            if v >= cfg.iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        let kind = if let Some((gi, _)) = best {
            used[gi] = true;
            MatchKind::TruePositive
        } else if cfg.ignore_difficult
            && ground_truth.iter().any(|gt| {
                gt.difficult && iou(&det.bbox, &gt.bbox, cfg.pixel_area) >= cfg.iou_threshold
            })
        {
            MatchKind::Ignored
        } else {
            MatchKind::FalsePositive
        };
        out.push(MatchRecord {
            score: det.score,
            kind,
        });
    }
    out
}

/// Precision/recall after each scored detection, in score order.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    pub points: Vec<(f64, f64)>,
    pub total_gt: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct APResult {
    pub ap: f64,
    /// Pooled match records in global descending-score order.
    pub matches: Vec<MatchRecord>,
    pub total_gt: usize,
    pub curve: PRCurve,
}

/// Pool match records into a curve and reduce to AP. With no countable
/// ground truth: an error when detections exist (AP is undefined, not
/// zero), vacuous 1.0 otherwise.
pub fn average_precision(
    mut records: Vec<MatchRecord>,
    total_gt: usize,
    cfg: &EvalConfig,
) -> Result<APResult, EvalError> {
    cfg.validate()?;
    if total_gt == 0 {
        if !records.is_empty() {
            return Err(EvalError::NoGroundTruth(records.len()));
        }
        return Ok(APResult {
            ap: 1.0,
            matches: records,
            total_gt,
            curve: PRCurve {
                points: Vec::new(),
                total_gt,
            },
        });
    }
    records.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for r in &records {
        match r.kind {
            MatchKind::TruePositive => tp += 1,
            MatchKind::FalsePositive => fp += 1,
            MatchKind::Ignored => continue,
        }
        points.push((
            tp as f64 / total_gt as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }
    let ap = match cfg.ap_mode {
        ApMode::Voc2007ElevenPoint => ap_eleven_point(&points),
        ApMode::ContinuousAuc => ap_continuous(&points),
    };
    Ok(APResult {
        ap,
        matches: records,
        total_gt,
        curve: PRCurve { points, total_gt },
    })
}

fn ap_eleven_point(points: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    for k in 0..=10u32 {
        let anchor = f64::from(k) / 10.0;
        let best = points
            .iter()
            .filter(|(recall, _)| *recall >= anchor)
            .map(|(_, precision)| *precision)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 11.0
}

fn ap_continuous(points: &[(f64, f64)]) -> f64 {
    let mut envelope = points.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in envelope {
        area += (recall - prev_recall).max(0.0) * precision;
        prev_recall = prev_recall.max(recall);
    }
    area
}

/// Match every frame and pool into one AP.
pub fn evaluate_frames(
    frames: &[(Vec<Detection>, Vec<GroundTruthBox>)],
    cfg: &EvalConfig,
) -> Result<APResult, EvalError> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut total_gt = 0usize;
    for (dets, gts) in frames {
        total_gt += gts
            .iter()
            .filter(|g| !(g.difficult && cfg.ignore_difficult))
            .count();
        records.extend(match_detections(dets, gts, cfg));
    }
    average_precision(records, total_gt, cfg)
}

/// Write per-frame detections as `frame,score,x1,y1,x2,y2`. Floats use
/// shortest round-trip formatting, so reading back is exact.
pub fn write_detections_csv(
    path: &Path,
    frames: &BTreeMap<u32, Vec<Detection>>,
) -> Result<(), EvalError> {
    let mut text = String::from("frame,score,x1,y1,x2,y2\n");
    for (frame, dets) in frames {
        for d in dets {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{}",
                frame, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
            );
        }
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_detections_csv(path: &Path) -> Result<BTreeMap<u32, Vec<Detection>>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let field = |k: usize, name: &str| -> Result<f64, EvalError> {
            row.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| EvalError::BadRow {
                    row: i + 2,
                    reason: format!("bad {name}"),
                })
        };
        let frame = field(0, "frame")? as u32;
        let score = field(1, "score")?;
        let b = BoxF::new(field(2, "x1")?, field(3, "y1")?, field(4, "x2")?, field(5, "y2")?);
        out.entry(frame).or_default().push(Detection { bbox: b, score });
    }
    Ok(out)
}

const CURVE_COLORS: [&str; 6] = [
    "#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d68910", "#16a085",
];

/// Write `pr.svg` (every curve with axes and a legend) and `ap.csv`
/// (one row per result plus each ordered pairwise AP increment). Output
/// bytes depend only on the inputs.
pub fn emit_report(results: &[(String, APResult)], out_dir: &Path) -> Result<(), EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    fs::create_dir_all(out_dir)?;

    let mut csv_text = String::from("name,ap\n");
    for (name, r) in results {
        let _ = writeln!(csv_text, "{},{:.6}", csv_escape(name), r.ap);
    }
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let label = format!("increment {}-{}", results[i].0, results[j].0);
            let _ = writeln!(
                csv_text,
                "{},{:.6}",
                csv_escape(&label),
                results[i].1.ap - results[j].1.ap
            );
        }
    }
    fs::write(out_dir.join("ap.csv"), csv_text)?;
    fs::write(out_dir.join("pr.svg"), render_pr_svg(results))?;
    Ok(())
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_pr_svg(results: &[(String, APResult)]) -> String {
    // plot rectangle in page coordinates; y axis points up
    const X0: f64 = 80.0;
    const X1: f64 = 600.0;
    const Y0: f64 = 420.0;
    const Y1: f64 = 40.0;
    let map_x = |r: f64| X0 + r * (X1 - X0);
    let map_y = |p: f64| Y0 + p * (Y1 - Y0);

    let mut svg = String::new();
    svg.push_str(concat!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" ",
        "viewBox=\"0 0 640 480\">\n",
        "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n"
    ));
    let _ = writeln!(
        svg,
        "<rect x=\"{X0}\" y=\"{Y1}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        X1 - X0,
        Y0 - Y1
    );
    for k in 0..=5u32 {
        let t = f64::from(k) / 5.0;
        let x = map_x(t);
        let y = map_y(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{Y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>",
            Y0 + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{t:.1}</text>",
            Y0 + 20.0
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{X0}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            X0 - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{t:.1}</text>",
            X0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"460\" font-size=\"14\" text-anchor=\"middle\">Recall</text>",
        (X0 + X1) / 2.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"20\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" \
         transform=\"rotate(-90 20 {:.2})\">Precision</text>",
        (Y0 + Y1) / 2.0,
        (Y0 + Y1) / 2.0
    );

    for (i, (name, result)) in results.iter().enumerate() {
        let color = CURVE_COLORS[i % CURVE_COLORS.len()];
        if !result.curve.points.is_empty() {
            let mut pts = String::new();
            let first_p = result.curve.points[0].1;
            let _ = write!(pts, "{:.2},{:.2}", map_x(0.0), map_y(first_p));
            for (r, p) in &result.curve.points {
                let _ = write!(pts, " {:.2},{:.2}", map_x(*r), map_y(*p));
            }
            let _ = writeln!(
                svg,
                "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>"
            );
        }
        let ly = 60.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"440\" y1=\"{ly:.2}\" x2=\"470\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"476\" y=\"{:.2}\" font-size=\"12\">{} (AP {:.3})</text>",
            ly + 4.0,
            xml_escape(name),
            result.ap
        );
    }
    svg.push_str("</svg>\n");
    svg
}
