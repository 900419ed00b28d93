//! Dataset directory format: `images/` (PNG), `annotations.jsonl` (one
//! record per instance), `meta.json`. All coordinates are pixels with the
//! origin at the top-left, x right, y down.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::img::RgbImage;
use crate::landmark::LandmarkSet;

use super::{HeadBox, PersonInstance, Split};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub resolution: usize,
    pub generator_version: String,
    pub source_width: usize,
    pub source_height: usize,
    pub num_identities: usize,
    pub instances_per_identity: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    id: u64,
    identity: u32,
    split: Split,
    head_box: HeadBox,
    landmarks: Option<Vec<[f64; 2]>>,
}

fn image_name(id: u64) -> String {
    format!("inst_{id:06}.png")
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let c = img.get(x, y);
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    (c[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (c[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (c[2].clamp(0.0, 1.0) * 255.0).round() as u8,
                ]),
            );
        }
    }
    buf.save(path).map_err(|e| CoreError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| CoreError::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = RgbImage::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            out.set(
                x,
                y,
                [
                    p.0[0] as f64 / 255.0,
                    p.0[1] as f64 / 255.0,
                    p.0[2] as f64 / 255.0,
                ],
            );
        }
    }
    Ok(out)
}

pub fn save_dataset(dir: &Path, instances: &[PersonInstance], meta: &DatasetMeta) -> Result<()> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| CoreError::io(&images_dir, e))?;
    let ann_path = dir.join("annotations.jsonl");
    let mut ann =
        std::io::BufWriter::new(fs::File::create(&ann_path).map_err(|e| CoreError::io(&ann_path, e))?);
    for inst in instances {
        save_png(&inst.image, &images_dir.join(image_name(inst.id)))?;
        let rec = AnnotationRecord {
            id: inst.id,
            identity: inst.identity,
            split: inst.split,
            head_box: inst.head_box,
            landmarks: inst.landmarks_gt.as_ref().map(|l| l.points().to_vec()),
        };
        serde_json::to_writer(&mut ann, &rec).map_err(|e| CoreError::json(&ann_path, e))?;
        ann.write_all(b"\n").map_err(|e| CoreError::io(&ann_path, e))?;
    }
    ann.flush().map_err(|e| CoreError::io(&ann_path, e))?;
    let meta_path = dir.join("meta.json");
    fs::write(
        &meta_path,
        serde_json::to_string_pretty(meta).expect("meta serializes"),
    )
    .map_err(|e| CoreError::io(&meta_path, e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<PersonInstance>, DatasetMeta)> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?,
    )
    .map_err(|e| CoreError::json(&meta_path, e))?;
    let ann_path = dir.join("annotations.jsonl");
    let file = fs::File::open(&ann_path).map_err(|e| CoreError::io(&ann_path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CoreError::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| CoreError::json(&ann_path, e))?;
        let image = load_png(&dir.join("images").join(image_name(rec.id)))?;
        let landmarks_gt = match rec.landmarks {
            Some(pts) => Some(LandmarkSet::new(pts)?),
            None => None,
        };
        out.push(PersonInstance {
            id: rec.id,
            image,
            head_box: rec.head_box,
            identity: rec.identity,
            landmarks_gt,
            split: rec.split,
            render: None,
        });
    }
    Ok((out, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synth_generate, SynthConfig, GENERATOR_VERSION};

    #[test]
    fn dataset_roundtrips_through_directory_format() {
        let dir = std::env::temp_dir().join("headgen_dataset_io_test");
        let _ = fs::remove_dir_all(&dir);
        let cfg = SynthConfig {
            num_identities: 2,
            instances_per_identity: 2,
            resolution: 64,
            rng_seed: 3,
            ..SynthConfig::default()
        };
        let insts = synth_generate(&cfg);
        let meta = DatasetMeta {
            seed: cfg.rng_seed,
            resolution: cfg.resolution,
            generator_version: GENERATOR_VERSION.into(),
            source_width: insts[0].image.width(),
            source_height: insts[0].image.height(),
            num_identities: cfg.num_identities,
            instances_per_identity: cfg.instances_per_identity,
        };
        save_dataset(&dir, &insts, &meta).unwrap();
        let (loaded, meta2) = load_dataset(&dir).unwrap();
        assert_eq!(loaded.len(), insts.len());
        assert_eq!(meta2.seed, meta.seed);
        for (a, b) in insts.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.identity, b.identity);
            assert_eq!(a.head_box, b.head_box);
            assert_eq!(
                a.landmarks_gt.as_ref().unwrap().points(),
                b.landmarks_gt.as_ref().unwrap().points()
            );
            // images are 8-bit quantized on disk
            for (x, y) in a.image.data().iter().zip(b.image.data().iter()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }
}
