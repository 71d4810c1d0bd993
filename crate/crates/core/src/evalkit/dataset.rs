use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Bbox;

/// Image file extensions picked up by [`load_dataset`].
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "ppm", "pnm", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: Bbox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.images.iter().map(|r| r.id.clone()).collect()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &GroundTruthBox> {
        self.images.iter().flat_map(|r| r.boxes.iter())
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }
}

/// Parses YOLO label text (`class cx cy w h` per line, normalized to
/// `[0, 1]`) into pixel boxes for a `width × height` image. Blank lines are
/// skipped.
pub fn parse_labels(text: &str, file: &Path, image_id: &str, width: usize, height: usize) -> Result<Vec<GroundTruthBox>> {
    let err = |line: usize, msg: String| Error::Label {
        file: file.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(err(line, format!("expected 5 fields `class cx cy w h`, got {}", fields.len())));
        }
        let class_id: usize = fields[0]
            .parse()
            .map_err(|_| err(line, format!("class {:?} is not a non-negative integer", fields[0])))?;
        let mut v = [0.0f64; 4];
        for (k, (slot, name)) in v.iter_mut().zip(["cx", "cy", "w", "h"]).enumerate() {
            let s = fields[k + 1];
            *slot = s.parse().map_err(|_| err(line, format!("{name} {s:?} is not a number")))?;
            if !(0.0..=1.0).contains(slot) {
                return Err(err(line, format!("{name} = {s} is outside [0, 1]")));
            }
        }
        let [cx, cy, w, h] = v;
        if w <= 0.0 || h <= 0.0 {
            return Err(err(line, "box has zero width or height".into()));
        }
        let (fw, fh) = (width as f64, height as f64);
        out.push(GroundTruthBox {
            image_id: image_id.to_string(),
            class_id,
            bbox: [(cx - w / 2.0) * fw, (cy - h / 2.0) * fh, (cx + w / 2.0) * fw, (cy + h / 2.0) * fh],
        });
    }
    Ok(out)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.sort();
    Ok(paths)
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Label file stems (`*.txt`) in `labels_dir`, sorted.
pub fn label_ids(labels_dir: &Path) -> Result<Vec<String>> {
    Ok(sorted_entries(labels_dir)?
        .iter()
        .filter(|p| has_extension(p, &["txt"]))
        .map(|p| stem(p))
        .collect())
}

/// Pairs every image in `images_dir` with `labels_dir/<stem>.txt`. Images
/// with no label file are kept as negatives. Image sizes come from the file
/// headers.
pub fn load_dataset(images_dir: &Path, labels_dir: &Path) -> Result<Dataset> {
    if !labels_dir.is_dir() {
        return Err(Error::io(
            labels_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "labels directory not found"),
        ));
    }
    let mut images = Vec::new();
    for path in sorted_entries(images_dir)? {
        if !has_extension(&path, IMAGE_EXTENSIONS) {
            continue;
        }
        let (w, h) = image::image_dimensions(&path)?;
        let id = stem(&path);
        let label_path = labels_dir.join(format!("{id}.txt"));
        let boxes = match fs::read_to_string(&label_path) {
            Ok(text) => parse_labels(&text, &label_path, &id, w as usize, h as usize)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&label_path, e)),
        };
        images.push(ImageRecord {
            id,
            width: w as usize,
            height: h as usize,
            boxes,
        });
    }
    Ok(Dataset { images })
}

/// Reads labels alone, assigning every image the same `width × height`.
pub fn load_labels(labels_dir: &Path, width: usize, height: usize) -> Result<Dataset> {
    let mut images = Vec::new();
    for id in label_ids(labels_dir)? {
        let path = labels_dir.join(format!("{id}.txt"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let boxes = parse_labels(&text, &path, &id, width, height)?;
        images.push(ImageRecord { id, width, height, boxes });
    }
    Ok(Dataset { images })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, w: usize, h: usize) -> Result<Vec<GroundTruthBox>> {
        parse_labels(text, Path::new("a.txt"), "a", w, h)
    }

    #[test]
    fn denormalizes() {
        let b = parse("0 0.5 0.5 0.1 0.2\n", 100, 200).unwrap();
        assert_eq!(b.len(), 1);
        let want = [45.0, 80.0, 55.0, 120.0];
        for (x, y) in b[0].bbox.iter().zip(want) {
            assert!((x - y).abs() < 1e-9, "{:?}", b[0].bbox);
        }
    }

    #[test]
    fn empty_file_has_no_boxes() {
        assert!(parse("", 10, 10).unwrap().is_empty());
        assert!(parse("\n  \n", 10, 10).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_reports_line() {
        let e = parse("0 0.5 0.5 0.1 0.1\n0 1.5 0.5 0.1 0.2\n", 10, 10).unwrap_err();
        match e {
            Error::Label { line, ref msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("outside"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse("0 0.5 0.5 0.1\n", 10, 10), Err(Error::Label { line: 1, .. })));
        assert!(matches!(parse("x 0.5 0.5 0.1 0.1\n", 10, 10), Err(Error::Label { .. })));
        assert!(matches!(parse("0 0.5 nan 0.1 0.1\n", 10, 10), Err(Error::Label { .. })));
    }

    #[test]
    fn missing_label_is_negative_image() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        let labels = dir.path().join("labels");
        fs::create_dir_all(&images).unwrap();
        fs::create_dir_all(&labels).unwrap();
        image::RgbImage::new(20, 10).save(images.join("a.png")).unwrap();
        image::RgbImage::new(20, 10).save(images.join("b.png")).unwrap();
        fs::write(labels.join("a.txt"), "1 0.5 0.5 0.5 0.5\n").unwrap();
        let ds = load_dataset(&images, &labels).unwrap();
        assert_eq!(ds.ids(), ["a", "b"]);
        assert_eq!(ds.images[0].boxes[0].bbox, [5.0, 2.5, 15.0, 7.5]);
        assert!(ds.images[1].boxes.is_empty());
    }
}
