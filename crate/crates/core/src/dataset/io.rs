use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::tensor::{Shape, Tensor};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// Where images, masks and depth maps live under a dataset root.
///
/// `mask_pattern` and `depth_pattern` expand `{stem}` to the image file stem.
/// A mask pattern containing `{index}` names one file per polyp, numbered
/// from 0; otherwise the single mask is a union split into components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Layout {
    pub split: String,
    pub images: String,
    pub masks: String,
    pub mask_pattern: String,
    pub depth: Option<String>,
    pub depth_pattern: String,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            split: "train".into(),
            images: "images".into(),
            masks: "masks".into(),
            mask_pattern: "{stem}_mask.png".into(),
            depth: None,
            depth_pattern: "{stem}.pgm".into(),
        }
    }
}

impl Layout {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("layout: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub image: PathBuf,
    pub masks: Vec<PathBuf>,
    /// Masks are one file per polyp rather than a union.
    pub instance_masks: bool,
    pub depth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipEntry {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub split: String,
    pub records: Vec<Record>,
    pub skipped: Vec<SkipEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Scans `root` according to `layout`. Images without a mask (or without a
/// depth map when the layout names one) are listed as skipped; files that
/// exist but fail to decode are fatal.
pub fn load_dataset(root: &Path, layout: &Layout) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut manifest = DatasetManifest {
        split: layout.split.clone(),
        ..Default::default()
    };
    let image_dir = root.join(&layout.images);
    if !image_dir.is_dir() {
        return Ok(manifest);
    }
    let mut images: Vec<PathBuf> = std::fs::read_dir(&image_dir)
        .map_err(|e| Error::io(&image_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    images.sort();

    let mask_dir = root.join(&layout.masks);
    let instance_masks = layout.mask_pattern.contains("{index}");
    let mut seen = HashSet::new();
    for image in images {
        let stem = image
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Validation(format!("{}: file name is not UTF-8", image.display())))?
            .to_string();
        if !seen.insert(stem.clone()) {
            return Err(Error::Validation(format!("duplicate sample id {stem}")));
        }
        let pattern = layout.mask_pattern.replace("{stem}", &stem);
        let masks: Vec<PathBuf> = if instance_masks {
            (0..)
                .map(|k| mask_dir.join(pattern.replace("{index}", &k.to_string())))
                .take_while(|p| p.is_file())
                .collect()
        } else {
            Some(mask_dir.join(&pattern)).filter(|p| p.is_file()).into_iter().collect()
        };
        if masks.is_empty() {
            manifest.skipped.push(SkipEntry {
                path: image,
                reason: "no matching mask".into(),
            });
            continue;
        }
        let depth = match &layout.depth {
            None => None,
            Some(dir) => {
                let p = root.join(dir).join(layout.depth_pattern.replace("{stem}", &stem));
                if !p.is_file() {
                    manifest.skipped.push(SkipEntry {
                        path: image,
                        reason: "no matching depth map".into(),
                    });
                    continue;
                }
                Some(p)
            }
        };
        let dims = dimensions(&image)?;
        for p in masks.iter().chain(depth.iter()) {
            let d = dimensions(p)?;
            if d != dims {
                return Err(Error::Decode {
                    path: p.clone(),
                    reason: format!("{}x{} does not match image {}x{}", d.0, d.1, dims.0, dims.1),
                });
            }
        }
        manifest.records.push(Record {
            id: stem,
            image,
            masks,
            instance_masks,
            depth,
        });
    }
    Ok(manifest)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let bytes: Vec<u8> = img.pixels().map(|p| u8::from(p.0[0] != 0)).collect();
    Mask::from_bytes(h as usize, w as usize, &bytes)
}

pub fn load_sample(record: &Record) -> Result<Sample> {
    let rgb = open(&record.image)?.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let image = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, i, j| {
        f64::from(rgb.get_pixel(j as u32, i as u32).0[c]).clamp(0.0, 1.0)
    });
    let depth = match &record.depth {
        None => None,
        Some(p) => {
            let d = open(p)?.to_luma32f();
            Some(Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, i, j| {
                f64::from(d.get_pixel(j as u32, i as u32).0[0]).clamp(0.0, 1.0)
            }))
        }
    };
    let masks = record.masks.iter().map(|p| read_mask(p)).collect::<Result<Vec<_>>>()?;
    if record.instance_masks {
        Sample::new(record.id.clone(), image, masks, depth)
    } else {
        Sample::from_union(record.id.clone(), image, &masks[0], depth)
    }
}

/// Keeps records whose masks contain at least one positive pixel.
pub fn filter_polyp_frames(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    for r in &manifest.records {
        let mut positive = false;
        for p in &r.masks {
            if !read_mask(p)?.is_empty() {
                positive = true;
                break;
            }
        }
        if positive {
            records.push(r.clone());
        }
    }
    Ok(DatasetManifest {
        split: manifest.split.clone(),
        records,
        skipped: manifest.skipped.clone(),
    })
}

/// Tab-separated text form: `id`, image path, `;`-joined mask paths, depth path or `-`.
pub fn write_manifest(manifest: &DatasetManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# split {}", manifest.split);
    let _ = writeln!(s, "# records {} skipped {}", manifest.records.len(), manifest.skipped.len());
    for r in &manifest.records {
        let masks: Vec<String> = r.masks.iter().map(|p| p.display().to_string()).collect();
        let kind = if r.instance_masks { "instances" } else { "union" };
        let depth = r.depth.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let _ = writeln!(s, "{}\t{}\t{kind}\t{}\t{depth}", r.id, r.image.display(), masks.join(";"));
    }
    for k in &manifest.skipped {
        let _ = writeln!(s, "# skipped {}\t{}", k.path.display(), k.reason);
    }
    s
}

pub fn read_manifest(text: &str) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::default();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# split ") {
            manifest.split = rest.trim().to_string();
            continue;
        }
        if let Some(rest) = line.strip_prefix("# skipped ") {
            let (path, reason) = rest.split_once('\t').unwrap_or((rest, ""));
            manifest.skipped.push(SkipEntry {
                path: path.into(),
                reason: reason.into(),
            });
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 || !matches!(f[2], "instances" | "union") {
            return Err(Error::Validation(format!("manifest line {}: expected 5 tab-separated fields", n + 1)));
        }
        if !seen.insert(f[0].to_string()) {
            return Err(Error::Validation(format!("duplicate sample id {}", f[0])));
        }
        manifest.records.push(Record {
            id: f[0].into(),
            image: f[1].into(),
            instance_masks: f[2] == "instances",
            masks: f[3].split(';').map(PathBuf::from).collect(),
            depth: (f[4] != "-").then(|| f[4].into()),
        });
    }
    Ok(manifest)
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes `sample` under `root` in the default layout: a 16-bit RGB PNG, one
/// union mask PNG and, if present, a 16-bit depth PGM.
pub fn write_sample(sample: &Sample, root: &Path) -> Result<()> {
    let layout = Layout::default();
    let (h, w) = (sample.rows() as u32, sample.cols() as u32);
    for dir in [&layout.images, &layout.masks, &"depth".to_string()] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let q16 = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let rgb = ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
        Rgb([0, 1, 2].map(|c| q16(sample.image.get(0, c, y as usize, x as usize))))
    });
    save(DynamicImage::ImageRgb16(rgb), &root.join(&layout.images).join(format!("{}.png", sample.id)))?;
    let mask = ImageBuffer::<Luma<u8>, _>::from_fn(w, h, |x, y| {
        Luma([if sample.union.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    let mask_name = layout.mask_pattern.replace("{stem}", &sample.id);
    save(DynamicImage::ImageLuma8(mask), &root.join(&layout.masks).join(mask_name))?;
    if let Some(d) = &sample.depth {
        let img = ImageBuffer::<Luma<u16>, _>::from_fn(w, h, |x, y| Luma([q16(d.get(0, 0, y as usize, x as usize))]));
        save(
            DynamicImage::ImageLuma16(img),
            &root.join("depth").join(layout.depth_pattern.replace("{stem}", &sample.id)),
        )?;
    }
    Ok(())
}
