use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};

use crate::image::{load_image, pad_to_multiple};
use crate::tensor::FeatureMap;
use crate::{Error, Result};

/// Input sides are padded up to a multiple of this.
pub const SIZE_MULTIPLE: usize = 16;

fn integral_points<S: Serializer>(points: &[[f64; 2]], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    #[derive(Serialize)]
    #[serde(untagged)]
    enum Coord {
        Int(i64),
        Real(f64),
    }
    let coord = |v: f64| {
        if v.fract() == 0.0 && v.abs() < 9.0e15 {
            Coord::Int(v as i64)
        } else {
            Coord::Real(v)
        }
    };
    let mut seq = s.serialize_seq(Some(points.len()))?;
    for &[x, y] in points {
        seq.serialize_element(&[coord(x), coord(y)])?;
    }
    seq.end()
}

/// One annotated image. Points are `[x, y]` = (column, row) from the
/// top-left corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: String,
    #[serde(default, serialize_with = "integral_points")]
    pub cores: Vec<[f64; 2]>,
    #[serde(default, serialize_with = "integral_points")]
    pub deltas: Vec<[f64; 2]>,
}

/// An image ready for the network: normalized to [0, 1] and zero-padded
/// (right/bottom) to a multiple of 16.
#[derive(Clone, Debug)]
pub struct Sample {
    pub record: AnnotationRecord,
    pub path: PathBuf,
    pub image: FeatureMap<f32>,
    pub original_width: usize,
    pub original_height: usize,
}

pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<AnnotationRecord>> {
    serde_json::from_str(text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(records: &[AnnotationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(records).expect("annotations serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_points(index: usize, record: &AnnotationRecord, width: usize, height: usize) -> Result<()> {
    for (kind, points) in [("core", &record.cores), ("delta", &record.deltas)] {
        for &[x, y] in points {
            if !(x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64) {
                return Err(Error::Annotation {
                    index,
                    image: record.image.clone(),
                    detail: format!("{kind} ({x}, {y}) outside the {width}x{height} image"),
                });
            }
        }
    }
    Ok(())
}

/// Loads one image for inference: decoded, normalized and padded.
pub fn load_sample(record: AnnotationRecord, image_root: &Path, index: usize) -> Result<Sample> {
    let path = image_root.join(&record.image);
    let img = load_image(&path)?;
    check_points(index, &record, img.width, img.height)?;
    Ok(Sample {
        image: pad_to_multiple(&img.to_feature_map(), SIZE_MULTIPLE),
        original_width: img.width,
        original_height: img.height,
        path,
        record,
    })
}

/// Reads the annotation file and every image it references, in file order.
/// Any failure aborts the whole load.
pub fn load_dataset(annotation_file: impl AsRef<Path>, image_root: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let records = load_annotations(annotation_file)?;
    let root = image_root.as_ref();
    records.into_iter().enumerate().map(|(i, r)| load_sample(r, root, i)).collect()
}
