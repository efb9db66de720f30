//! Directory datasets: PNG images plus a label file with one
//! `relative_path pitch_rad yaw_rad` row per image.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::handle::DatasetHandle;
use crate::error::{Error, Result};
use crate::gaze::{DomainTag, GazeLabel, GazeSample};
use crate::tensor::Tensor;

struct Row {
    line: usize,
    path: String,
    label: GazeLabel,
}

fn parse_labels(label_file: &Path, text: &str) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: label_file.to_path_buf(),
            line,
            message,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected `path pitch yaw`, found {} fields",
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(format!("`{s}` is not a number")))
        };
        let (pitch, yaw) = (num(fields[1])?, num(fields[2])?);
        let label = GazeLabel::new(pitch, yaw).map_err(|e| parse_err(e.to_string()))?;
        rows.push(Row {
            line,
            path: fields[0].to_string(),
            label,
        });
    }
    Ok(rows)
}

fn image_to_tensor(img: DynamicImage) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = |v: u8| v as f32 / 255.0;
    match img {
        DynamicImage::ImageLuma8(g) => {
            Tensor::from_vec(&[1, h, w], g.into_raw().into_iter().map(scale).collect())
        }
        other => {
            let rgb = other.to_rgb8();
            let raw = rgb.into_raw();
            let mut data = vec![0.0f32; 3 * h * w];
            for (p, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * h * w + p] = scale(px[c]);
                }
            }
            Tensor::from_vec(&[3, h, w], data)
        }
    }
}

/// Reads every image listed in `label_file`, resolving paths against `root`.
/// Rows keep their file order. All images must share one shape.
pub fn ingest_directory(root: &Path, label_file: &Path, domain: DomainTag) -> Result<DatasetHandle> {
    let text = fs::read_to_string(label_file).map_err(|e| Error::io(label_file, e))?;
    let rows = parse_labels(label_file, &text)?;
    let missing: Vec<String> = rows
        .iter()
        .filter(|r| !root.join(&r.path).is_file())
        .map(|r| format!("line {}: {}", r.line, root.join(&r.path).display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingestion(format!(
            "missing images: {}",
            missing.join("; ")
        )));
    }
    let mut samples: Vec<GazeSample> = Vec::with_capacity(rows.len());
    for r in &rows {
        let path = root.join(&r.path);
        let img = image::open(&path)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        let image = image_to_tensor(img)?;
        if let Some(first) = samples.first() {
            if image.shape() != first.image.shape() {
                return Err(Error::Ingestion(format!(
                    "{}: shape {:?} differs from {:?}",
                    path.display(),
                    image.shape(),
                    first.image.shape()
                )));
            }
        }
        samples.push(GazeSample {
            image,
            label: Some(r.label),
            domain,
        });
    }
    Ok(DatasetHandle::new(samples))
}

/// Reads every `*.png` directly under `root`, in file-name order, without
/// labels.
pub fn ingest_unlabeled(root: &Path, domain: DomainTag) -> Result<DatasetHandle> {
    let mut paths: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    let mut samples: Vec<GazeSample> = Vec::with_capacity(paths.len());
    for path in paths {
        let img = image::open(&path)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        let image = image_to_tensor(img)?;
        if let Some(first) = samples.first() {
            if image.shape() != first.image.shape() {
                return Err(Error::Ingestion(format!(
                    "{}: shape {:?} differs from {:?}",
                    path.display(),
                    image.shape(),
                    first.image.shape()
                )));
            }
        }
        samples.push(GazeSample {
            image,
            label: None,
            domain,
        });
    }
    Ok(DatasetHandle::new(samples))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel tensor as an 8-bit PNG.
pub fn write_png(path: &Path, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || !(shape[0] == 1 || shape[0] == 3) {
        return Err(Error::invalid(format!(
            "PNG export needs a 1 or 3 channel image, got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1] as u32, shape[2] as u32);
    let d = image.data();
    let plane = (h * w) as usize;
    if c == 1 {
        let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize(d[(y * w + x) as usize])])
        });
        buf.save(path)?;
    } else {
        let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
            let p = (y * w + x) as usize;
            Rgb([quantize(d[p]), quantize(d[plane + p]), quantize(d[2 * plane + p])])
        });
        buf.save(path)?;
    }
    Ok(())
}

/// Exports a labelled handle as `dir/NNNNN.png` plus `dir/labels.txt`.
/// Returns the label file path.
pub fn export_directory(handle: &DatasetHandle, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::new();
    for (i, s) in handle.samples().iter().enumerate() {
        let label = s
            .label
            .ok_or_else(|| Error::invalid(format!("sample {i} has no label to export")))?;
        let name = format!("{i:05}.png");
        write_png(&dir.join(&name), &s.image)?;
        text.push_str(&format!("{name} {} {}\n", label.pitch, label.yaw));
    }
    let path = dir.join("labels.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_gray(dir: &Path, name: &str, v: f32) {
        write_png(&dir.join(name), &Tensor::full(&[1, 3, 4], v)).unwrap();
    }

    #[test]
    fn empty_label_file_gives_empty_handle() {
        let dir = tempfile::tempdir().unwrap();
        let lf = dir.path().join("labels.txt");
        fs::write(&lf, "").unwrap();
        let h = ingest_directory(dir.path(), &lf, DomainTag::Target).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn rows_keep_file_order() {
        let dir = tempfile::tempdir().unwrap();
        for (n, v) in [("b.png", 0.2), ("a.png", 0.6), ("c.png", 1.0)] {
            write_gray(dir.path(), n, v);
        }
        let lf = dir.path().join("labels.txt");
        fs::write(&lf, "b.png 0.1 0.2\na.png -0.1 0.3\n\nc.png 0 -0.5\n").unwrap();
        let h = ingest_directory(dir.path(), &lf, DomainTag::Source).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.label(0).unwrap(), GazeLabel::new(0.1, 0.2).unwrap());
        assert_eq!(h.label(2).unwrap(), GazeLabel::new(0.0, -0.5).unwrap());
        assert!((h.image(1).unwrap().data()[0] - 153.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn missing_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(dir.path(), "a.png", 0.5);
        let lf = dir.path().join("labels.txt");
        fs::write(&lf, "a.png 0 0\nghost.png 0 0\n").unwrap();
        let err = ingest_directory(dir.path(), &lf, DomainTag::Source).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)));
        assert!(err.to_string().contains("ghost.png"), "{err}");

        fs::write(&lf, "a.png 0 0\na.png zero 0\n").unwrap();
        match ingest_directory(dir.path(), &lf, DomainTag::Source).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn export_round_trip_within_quantization() {
        let spec = super::super::synth::SyntheticDomainSpec::benchmark_target(4, 9);
        let h = super::super::synth::generate_domain(&spec, DomainTag::Target).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let lf = export_directory(&h, dir.path()).unwrap();
        let back = ingest_directory(dir.path(), &lf, DomainTag::Target).unwrap();
        assert_eq!(back.len(), 4);
        for i in 0..4 {
            let (a, b) = (h.image(i).unwrap(), back.image(i).unwrap());
            let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
            let (la, lb) = (h.label(i).unwrap(), back.label(i).unwrap());
            assert_eq!(la, lb);
        }
    }
}
