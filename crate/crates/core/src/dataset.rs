//! Dataset assembly and annotation serialization: VOC-style XML per frame,
//! a line-oriented manifest (no timestamps, so regeneration diffs clean),
//! external ground-truth ingestion from CSV, and label rescaling for
//! resolution changes.

use crate::bbox::PixelBox;
use crate::imgio::{ImageError, RgbImage};
use crate::rasterlab::AnnotationRecord;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Annotations with visibility below this are flagged difficult and
/// ignored by evaluation.
pub const DIFFICULT_VISIBILITY: f64 = 0.4;

const MANIFEST_HEADER: &str = "scenesynth-dataset v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("frame {frame}: box ({x1},{y1})-({x2},{y2}) exceeds the {width}x{height} image")]
    BoxOutOfBounds {
        frame: u32,
        x1: i32,
        y1: i32,
        x2: i32,
        y2: i32,
        width: u32,
        height: u32,
    },
    #[error("column {0:?} not found in CSV header")]
    MissingColumn(String),
    #[error("CSV file has no data rows")]
    EmptyFile,
    #[error("CSV read failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("XML parse failed: {0}")]
    XmlParse(String),
    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
    #[error("frame {0} appears twice in the dataset")]
    DuplicateFrame(u32),
    #[error("frame image is {got_w}x{got_h} but the dataset is {want_w}x{want_h}")]
    FrameSizeMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
}

/// One frame's place in a dataset: where its image lives and what is in it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u32,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub width: u32,
    pub height: u32,
    /// SHA-256 of the generating config, hex encoded.
    pub config_hash: String,
    pub rng_seed: u64,
    pub frames: Vec<FrameRecord>,
}

/// A parsed `<object>` element.
#[derive(Debug, Clone, PartialEq)]
pub struct VocObject {
    pub name: String,
    pub truncated: bool,
    pub difficult: bool,
    /// 0-based inclusive pixel corners.
    pub bbox: PixelBox,
}

/// A parsed VOC annotation document.
#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<VocObject>,
}

/// Serialize one frame's annotations as a VOC-style XML document. Boxes are
/// written 1-based inclusive (the VOC convention); the exported box is the
/// full (occlusion-corrected) extent, and `difficult` marks annotations
/// whose visibility falls below `difficult_threshold`.
pub fn export_voc_xml(
    record: &FrameRecord,
    class_name: &str,
    width: u32,
    height: u32,
    difficult_threshold: f64,
) -> Result<String, DatasetError> {
    let mut xml = String::new();
    xml.push_str("<annotation>\n");
    let _ = writeln!(xml, "  <filename>{}</filename>", record.image_path);
    xml.push_str("  <size>\n");
    let _ = writeln!(xml, "    <width>{width}</width>");
    let _ = writeln!(xml, "    <height>{height}</height>");
    xml.push_str("    <depth>3</depth>\n  </size>\n");
    for ann in &record.annotations {
        let b = ann.full_bbox;
        let in_bounds = b.x1 >= 0
            && b.y1 >= 0
            && b.x2 < width as i32
            && b.y2 < height as i32
            && b.x1 <= b.x2
            && b.y1 <= b.y2;
        if !in_bounds {
            return Err(DatasetError::BoxOutOfBounds {
                frame: record.frame_index,
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
                width,
                height,
            });
        }
        xml.push_str("  <object>\n");
        let _ = writeln!(xml, "    <name>{class_name}</name>");
        let _ = writeln!(xml, "    <truncated>{}</truncated>", u8::from(ann.truncated));
        let _ = writeln!(
            xml,
            "    <difficult>{}</difficult>",
            u8::from(ann.visibility < difficult_threshold)
        );
        xml.push_str("    <bndbox>\n");
        let _ = writeln!(xml, "      <xmin>{}</xmin>", b.x1 + 1);
        let _ = writeln!(xml, "      <ymin>{}</ymin>", b.y1 + 1);
        let _ = writeln!(xml, "      <xmax>{}</xmax>", b.x2 + 1);
        let _ = writeln!(xml, "      <ymax>{}</ymax>", b.y2 + 1);
        xml.push_str("    </bndbox>\n  </object>\n");
    }
    xml.push_str("</annotation>\n");
    Ok(xml)
}

/// Parse the XML subset written by `export_voc_xml` (plain nested tags, no
/// attributes), converting boxes back to 0-based corners.
pub fn parse_voc_xml(xml: &str) -> Result<VocAnnotation, DatasetError> {
    let body = tag_body(xml, "annotation")
        .ok_or_else(|| DatasetError::XmlParse("missing <annotation> root".into()))?;
    let filename = tag_body(body, "filename").unwrap_or("").trim().to_string();
    let size = tag_body(body, "size")
        .ok_or_else(|| DatasetError::XmlParse("missing <size>".into()))?;
    let width = parse_tag_number(size, "width")?;
    let height = parse_tag_number(size, "height")?;
    let mut objects = Vec::new();
    for obj in tag_bodies(body, "object") {
        let name = tag_body(obj, "name")
            .ok_or_else(|| DatasetError::XmlParse("object without <name>".into()))?
            .trim()
            .to_string();
        let truncated = parse_tag_number(obj, "truncated").unwrap_or(0) != 0;
        let difficult = parse_tag_number(obj, "difficult").unwrap_or(0) != 0;
        let bnd = tag_body(obj, "bndbox")
            .ok_or_else(|| DatasetError::XmlParse("object without <bndbox>".into()))?;
        let xmin: i64 = parse_tag_number(bnd, "xmin")?;
        let ymin: i64 = parse_tag_number(bnd, "ymin")?;
        let xmax: i64 = parse_tag_number(bnd, "xmax")?;
        let ymax: i64 = parse_tag_number(bnd, "ymax")?;
        objects.push(VocObject {
            name,
            truncated,
            difficult,
            bbox: PixelBox::new(
                (xmin - 1) as i32,
                (ymin - 1) as i32,
                (xmax - 1) as i32,
                (ymax - 1) as i32,
            ),
        });
    }
    Ok(VocAnnotation {
        filename,
        width: width as u32,
        height: height as u32,
        objects,
    })
}

fn tag_body<'a>(s: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = s.find(&open)? + open.len();
    let end = s[start..].find(&close)? + start;
    Some(&s[start..end])
}

fn tag_bodies<'a>(s: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(i) = rest.find(&open) {
        let start = i + open.len();
        let Some(j) = rest[start..].find(&close) else { break };
        out.push(&rest[start..start + j]);
        rest = &rest[start + j + close.len()..];
    }
    out
}

fn parse_tag_number(s: &str, tag: &str) -> Result<i64, DatasetError> {
    let body = tag_body(s, tag)
        .ok_or_else(|| DatasetError::XmlParse(format!("missing <{tag}>")))?;
    body.trim()
        .parse()
        .map_err(|_| DatasetError::XmlParse(format!("<{tag}> is not an integer: {body:?}")))
}

/// Which corner convention incoming CSV coordinates use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordConvention {
    ZeroBased,
    OneBased,
}

/// Column names for CSV ground-truth ingestion.
#[derive(Debug, Clone)]
pub struct CsvColumns {
    pub frame: String,
    pub id: String,
    pub x1: String,
    pub y1: String,
    pub x2: String,
    pub y2: String,
}

/// Outcome of a CSV import: grouped records plus how many rows were
/// dropped as malformed.
#[derive(Debug)]
pub struct CsvImport {
    pub frames: Vec<FrameRecord>,
    pub skipped_rows: usize,
}

/// Ingest Town Center-style per-row ground truth boxes. Rows group by
/// frame; reversed corners are normalized by swapping; malformed rows are
/// counted, not fatal.
pub fn import_csv_annotations(
    path: &Path,
    columns: &CsvColumns,
    convention: CoordConvention,
) -> Result<CsvImport, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let c_frame = col(&columns.frame)?;
    let c_id = col(&columns.id)?;
    let c_x1 = col(&columns.x1)?;
    let c_y1 = col(&columns.y1)?;
    let c_x2 = col(&columns.x2)?;
    let c_y2 = col(&columns.y2)?;

    let offset = match convention {
        CoordConvention::ZeroBased => 0.0,
        CoordConvention::OneBased => 1.0,
    };
    let mut grouped: BTreeMap<u32, Vec<AnnotationRecord>> = BTreeMap::new();
    let mut skipped_rows = 0usize;
    let mut rows = 0usize;
    for row in reader.records() {
        let row = row?;
        rows += 1;
        let parsed = (|| -> Option<(u32, u32, f64, f64, f64, f64)> {
            Some((
                row.get(c_frame)?.parse().ok()?,
                row.get(c_id)?.parse().ok()?,
                row.get(c_x1)?.parse().ok()?,
                row.get(c_y1)?.parse().ok()?,
                row.get(c_x2)?.parse().ok()?,
                row.get(c_y2)?.parse().ok()?,
            ))
        })();
        let Some((frame, id, x1, y1, x2, y2)) = parsed else {
            skipped_rows += 1;
            continue;
        };
        let (x1, x2) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        let (y1, y2) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
        let b = PixelBox::new(
            (x1 - offset).round() as i32,
            (y1 - offset).round() as i32,
            (x2 - offset).round() as i32,
            (y2 - offset).round() as i32,
        );
        grouped.entry(frame).or_default().push(AnnotationRecord {
            instance_id: id,
            full_bbox: b,
            visible_bbox: Some(b),
            visibility: 1.0,
            truncated: false,
        });
    }
    if rows == 0 {
        return Err(DatasetError::EmptyFile);
    }
    let frames = grouped
        .into_iter()
        .map(|(frame_index, annotations)| FrameRecord {
            frame_index,
            image_path: format!("{frame_index:06}.ppm"),
            annotations,
        })
        .collect();
    Ok(CsvImport { frames, skipped_rows })
}

/// Scale every box by the per-axis size ratio, rounding half-up, clamping
/// into the target image.
pub fn rescale_labels(
    mut records: Vec<FrameRecord>,
    from_size: (u32, u32),
    to_size: (u32, u32),
) -> Vec<FrameRecord> {
    let sx = f64::from(to_size.0) / f64::from(from_size.0);
    let sy = f64::from(to_size.1) / f64::from(from_size.1);
    let scale = |b: &PixelBox| -> PixelBox {
        let half_up = |v: f64| (v + 0.5).floor();
        PixelBox::new(
            (half_up(f64::from(b.x1) * sx) as i32).clamp(0, to_size.0 as i32 - 1),
            (half_up(f64::from(b.y1) * sy) as i32).clamp(0, to_size.1 as i32 - 1),
            (half_up(f64::from(b.x2) * sx) as i32).clamp(0, to_size.0 as i32 - 1),
            (half_up(f64::from(b.y2) * sy) as i32).clamp(0, to_size.1 as i32 - 1),
        )
    };
    for rec in &mut records {
        for ann in &mut rec.annotations {
            ann.full_bbox = scale(&ann.full_bbox);
            ann.visible_bbox = ann.visible_bbox.as_ref().map(&scale);
        }
    }
    records
}

/// Incremental dataset writer producing the on-disk layout
/// `<root>/images/NNNNNN.ppm`, `<root>/annotations/NNNNNN.xml`, and
/// `<root>/manifest.txt` on finish.
pub struct DatasetWriter {
    root: PathBuf,
    manifest: DatasetManifest,
    class_name: String,
    difficult_threshold: f64,
}

impl DatasetWriter {
    pub fn create(
        root: &Path,
        name: &str,
        width: u32,
        height: u32,
        config_hash: &str,
        rng_seed: u64,
    ) -> Result<Self, DatasetError> {
        fs::create_dir_all(root.join("images"))?;
        fs::create_dir_all(root.join("annotations"))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: DatasetManifest {
                name: name.to_string(),
                width,
                height,
                config_hash: config_hash.to_string(),
                rng_seed,
                frames: Vec::new(),
            },
            class_name: "person".to_string(),
            difficult_threshold: DIFFICULT_VISIBILITY,
        })
    }

    pub fn add_frame(
        &mut self,
        frame_index: u32,
        image: &RgbImage,
        annotations: Vec<AnnotationRecord>,
    ) -> Result<(), DatasetError> {
        if self
            .manifest
            .frames
            .iter()
            .any(|f| f.frame_index == frame_index)
        {
            return Err(DatasetError::DuplicateFrame(frame_index));
        }
        if image.width != self.manifest.width || image.height != self.manifest.height {
            return Err(DatasetError::FrameSizeMismatch {
                want_w: self.manifest.width,
                want_h: self.manifest.height,
                got_w: image.width,
                got_h: image.height,
            });
        }
        let record = FrameRecord {
            frame_index,
            image_path: format!("images/{frame_index:06}.ppm"),
            annotations,
        };
        image.write_ppm(&self.root.join(&record.image_path))?;
        let xml = export_voc_xml(
            &record,
            &self.class_name,
            self.manifest.width,
            self.manifest.height,
            self.difficult_threshold,
        )?;
        fs::write(
            self.root.join(format!("annotations/{frame_index:06}.xml")),
            xml,
        )?;
        self.manifest.frames.push(record);
        Ok(())
    }

    /// Record a frame whose image lives elsewhere (or nowhere yet): the
    /// XML and manifest entry are written, the image is not.
    pub fn add_labels_frame(
        &mut self,
        frame_index: u32,
        image_path: &str,
        annotations: Vec<AnnotationRecord>,
    ) -> Result<(), DatasetError> {
        if self
            .manifest
            .frames
            .iter()
            .any(|f| f.frame_index == frame_index)
        {
            return Err(DatasetError::DuplicateFrame(frame_index));
        }
        let record = FrameRecord {
            frame_index,
            image_path: image_path.to_string(),
            annotations,
        };
        let xml = export_voc_xml(
            &record,
            &self.class_name,
            self.manifest.width,
            self.manifest.height,
            self.difficult_threshold,
        )?;
        fs::write(
            self.root.join(format!("annotations/{frame_index:06}.xml")),
            xml,
        )?;
        self.manifest.frames.push(record);
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetManifest, DatasetError> {
        self.manifest.frames.sort_by_key(|f| f.frame_index);
        let mut text = String::new();
        let m = &self.manifest;
        let _ = writeln!(text, "{MANIFEST_HEADER}");
        let _ = writeln!(text, "name {}", m.name);
        let _ = writeln!(text, "size {} {}", m.width, m.height);
        let _ = writeln!(text, "config_sha256 {}", m.config_hash);
        let _ = writeln!(text, "seed {}", m.rng_seed);
        let _ = writeln!(text, "frames {}", m.frames.len());
        for f in &m.frames {
            let _ = writeln!(
                text,
                "frame {} {} {}",
                f.frame_index,
                f.image_path,
                f.annotations.len()
            );
        }
        fs::write(self.root.join("manifest.txt"), text)?;
        Ok(self.manifest)
    }
}

/// Read a manifest back. Frame annotation lists come from the per-frame
/// XML files; visibility is not stored there, so reconstructed records get
/// visibility 1.0 or 0.0 purely from the difficult flag.
pub fn read_manifest(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(root.join("manifest.txt"))?;
    let mut lines = text.lines().enumerate();
    let expect = |got: Option<(usize, &str)>, what: &str| -> Result<(usize, String), DatasetError> {
        got.map(|(i, s)| (i, s.to_string()))
            .ok_or_else(|| DatasetError::ManifestParse {
                line: 0,
                reason: format!("missing {what}"),
            })
    };
    let (i, header) = expect(lines.next(), "header")?;
    if header != MANIFEST_HEADER {
        return Err(DatasetError::ManifestParse {
            line: i + 1,
            reason: format!("unknown header {header:?}"),
        });
    }
    let mut name = String::new();
    let mut size = (0u32, 0u32);
    let mut config_hash = String::new();
    let mut rng_seed = 0u64;
    let mut frames = Vec::new();
    for (i, line) in lines {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let bad = |reason: &str| DatasetError::ManifestParse {
            line: i + 1,
            reason: reason.to_string(),
        };
        match key {
            "name" => name = parts.collect::<Vec<_>>().join(" "),
            "size" => {
                size = (
                    parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad width"))?,
                    parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad height"))?,
                );
            }
            "config_sha256" => config_hash = parts.next().unwrap_or("").to_string(),
            "seed" => {
                rng_seed = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad seed"))?
            }
            "frames" => {}
            "frame" => {
                let frame_index: u32 =
                    parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad index"))?;
                let image_path = parts.next().ok_or_else(|| bad("missing path"))?.to_string();
                let n: usize =
                    parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad count"))?;
                let xml_path = root.join(format!("annotations/{frame_index:06}.xml"));
                let annotations = if xml_path.exists() {
                    let doc = parse_voc_xml(&fs::read_to_string(&xml_path)?)?;
                    doc.objects
                        .into_iter()
                        .enumerate()
                        .map(|(k, o)| AnnotationRecord {
                            instance_id: k as u32 + 1,
                            full_bbox: o.bbox,
                            visible_bbox: Some(o.bbox),
                            visibility: if o.difficult { 0.0 } else { 1.0 },
                            truncated: o.truncated,
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                if annotations.len() != n {
                    return Err(bad(&format!(
                        "annotation count mismatch: manifest says {n}, XML has {}",
                        annotations.len()
                    )));
                }
                frames.push(FrameRecord {
                    frame_index,
                    image_path,
                    annotations,
                });
            }
            _ => return Err(bad(&format!("unknown key {key:?}"))),
        }
    }
    Ok(DatasetManifest {
        name,
        width: size.0,
        height: size.1,
        config_hash,
        rng_seed,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(x1: i32, y1: i32, x2: i32, y2: i32, vis: f64, truncated: bool) -> AnnotationRecord {
        let b = PixelBox::new(x1, y1, x2, y2);
        AnnotationRecord {
            instance_id: 1,
            full_bbox: b,
            visible_bbox: (vis > 0.0).then_some(b),
            visibility: vis,
            truncated,
        }
    }

    fn record(annotations: Vec<AnnotationRecord>) -> FrameRecord {
        FrameRecord {
            frame_index: 3,
            image_path: "images/000003.ppm".into(),
            annotations,
        }
    }

    #[test]
    fn empty_record_exports_valid_document() {
        let xml = export_voc_xml(&record(vec![]), "person", 640, 360, 0.4).unwrap();
        let doc = parse_voc_xml(&xml).unwrap();
        assert!(doc.objects.is_empty());
        assert_eq!((doc.width, doc.height), (640, 360));
        assert_eq!(doc.filename, "images/000003.ppm");
    }

    #[test]
    fn one_based_inclusive_serialization() {
        let xml =
            export_voc_xml(&record(vec![ann(10, 20, 29, 49, 1.0, false)]), "person", 640, 360, 0.4)
                .unwrap();
        assert!(xml.contains("<xmin>11</xmin>"), "{xml}");
        assert!(xml.contains("<ymin>21</ymin>"));
        assert!(xml.contains("<xmax>30</xmax>"));
        assert!(xml.contains("<ymax>50</ymax>"));
    }

    #[test]
    fn xml_round_trip_preserves_boxes_and_flags() {
        let anns = vec![
            ann(10, 20, 29, 49, 1.0, false),
            ann(100, 5, 150, 80, 0.2, true), // below threshold → difficult
        ];
        let xml = export_voc_xml(&record(anns), "person", 640, 360, 0.4).unwrap();
        let doc = parse_voc_xml(&xml).unwrap();
        assert_eq!(doc.objects.len(), 2);
        assert_eq!(doc.objects[0].bbox, PixelBox::new(10, 20, 29, 49));
        assert!(!doc.objects[0].difficult);
        assert!(!doc.objects[0].truncated);
        assert_eq!(doc.objects[1].bbox, PixelBox::new(100, 5, 150, 80));
        assert!(doc.objects[1].difficult);
        assert!(doc.objects[1].truncated);
        assert_eq!(doc.objects[0].name, "person");
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let err =
            export_voc_xml(&record(vec![ann(600, 300, 650, 370, 1.0, true)]), "person", 640, 360, 0.4)
                .unwrap_err();
        assert!(matches!(err, DatasetError::BoxOutOfBounds { .. }));
    }

    fn default_columns() -> CsvColumns {
        CsvColumns {
            frame: "frame".into(),
            id: "id".into(),
            x1: "x1".into(),
            y1: "y1".into(),
            x2: "x2".into(),
            y2: "y2".into(),
        }
    }

    #[test]
    fn csv_import_groups_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        fs::write(
            &path,
            "frame,id,x1,y1,x2,y2\n\
             0,1,10,10,20,30\n\
             0,2,50,40,30,20\n\
             2,1,5,5,9,9\n\
             junk,row,a,b,c,d\n",
        )
        .unwrap();
        let import =
            import_csv_annotations(&path, &default_columns(), CoordConvention::ZeroBased).unwrap();
        assert_eq!(import.skipped_rows, 1);
        assert_eq!(import.frames.len(), 2);
        let f0 = &import.frames[0];
        assert_eq!(f0.frame_index, 0);
        assert_eq!(f0.annotations.len(), 2);
        // reversed corners swapped into order
        assert_eq!(f0.annotations[1].full_bbox, PixelBox::new(30, 20, 50, 40));
        assert_eq!(import.frames[1].annotations.len(), 1);
    }

    #[test]
    fn csv_import_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("bad.csv");
        fs::write(&missing, "frame,id,x1,y1\n1,1,2,3\n").unwrap();
        assert!(matches!(
            import_csv_annotations(&missing, &default_columns(), CoordConvention::ZeroBased),
            Err(DatasetError::MissingColumn(c)) if c == "x2"
        ));

        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "frame,id,x1,y1,x2,y2\n").unwrap();
        assert!(matches!(
            import_csv_annotations(&empty, &default_columns(), CoordConvention::ZeroBased),
            Err(DatasetError::EmptyFile)
        ));
    }

    #[test]
    fn csv_one_based_convention_shifts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        fs::write(&path, "frame,id,x1,y1,x2,y2\n0,1,11,21,30,50\n").unwrap();
        let import =
            import_csv_annotations(&path, &default_columns(), CoordConvention::OneBased).unwrap();
        assert_eq!(
            import.frames[0].annotations[0].full_bbox,
            PixelBox::new(10, 20, 29, 49)
        );
    }

    #[test]
    fn rescale_exact_third_and_identity_and_clamp() {
        let recs = vec![record(vec![
            ann(300, 300, 600, 600, 1.0, false),
            ann(1900, 1060, 1919, 1079, 1.0, false),
        ])];
        let out = rescale_labels(recs.clone(), (1920, 1080), (640, 360));
        assert_eq!(out[0].annotations[0].full_bbox, PixelBox::new(100, 100, 200, 200));
        assert_eq!(out[0].annotations[1].full_bbox, PixelBox::new(633, 353, 639, 359));

        let same = rescale_labels(recs.clone(), (1920, 1080), (1920, 1080));
        assert_eq!(same, recs);
    }

    #[test]
    fn rescale_preserves_containment() {
        let outer = ann(100, 100, 400, 500, 1.0, false);
        let inner = ann(150, 160, 350, 450, 1.0, false);
        let out = rescale_labels(
            vec![record(vec![outer, inner])],
            (1920, 1080),
            (640, 360),
        );
        let o = out[0].annotations[0].full_bbox;
        let i = out[0].annotations[1].full_bbox;
        // up to 1 px rounding slack per edge
        assert!(i.x1 >= o.x1 - 1 && i.y1 >= o.y1 - 1);
        assert!(i.x2 <= o.x2 + 1 && i.y2 <= o.y2 + 1);
    }

    #[test]
    fn dataset_writer_round_trip_and_determinism() {
        let write_once = |root: &Path| -> DatasetManifest {
            let mut w = DatasetWriter::create(root, "demo", 32, 24, "cafe01", 7).unwrap();
            let img = RgbImage::new(32, 24, [1, 2, 3]);
            w.add_frame(0, &img, vec![ann(2, 3, 10, 20, 1.0, false)]).unwrap();
            w.add_frame(1, &img, vec![]).unwrap();
            w.finish().unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = write_once(d1.path());
        write_once(d2.path());
        let bytes1 = fs::read(d1.path().join("manifest.txt")).unwrap();
        let bytes2 = fs::read(d2.path().join("manifest.txt")).unwrap();
        assert_eq!(bytes1, bytes2, "manifests must be byte-identical");

        let parsed = read_manifest(d1.path()).unwrap();
        assert_eq!(parsed.name, m1.name);
        assert_eq!((parsed.width, parsed.height), (32, 24));
        assert_eq!(parsed.config_hash, "cafe01");
        assert_eq!(parsed.rng_seed, 7);
        assert_eq!(parsed.frames.len(), 2);
        assert_eq!(parsed.frames[0].annotations.len(), 1);
        assert_eq!(
            parsed.frames[0].annotations[0].full_bbox,
            PixelBox::new(2, 3, 10, 20)
        );
        assert!(d1.path().join("images/000000.ppm").exists());
        assert!(d1.path().join("annotations/000001.xml").exists());

        let mut w = DatasetWriter::create(d1.path(), "dup", 32, 24, "h", 7).unwrap();
        let img = RgbImage::new(32, 24, [0, 0, 0]);
        w.add_frame(5, &img, vec![]).unwrap();
        assert!(matches!(
            w.add_frame(5, &img, vec![]),
            Err(DatasetError::DuplicateFrame(5))
        ));
        let wrong = RgbImage::new(16, 16, [0, 0, 0]);
        assert!(matches!(
            w.add_frame(6, &wrong, vec![]),
            Err(DatasetError::FrameSizeMismatch { .. })
        ));
    }
}
