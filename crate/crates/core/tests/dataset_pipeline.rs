use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use polypseg_core::dataset::{
    assemble_batch, crop_sample, filter_polyp_frames, flip_horizontal, flip_vertical, load_dataset, load_sample,
    random_flip, read_manifest, resize_sample, sample_patch, synth_dataset, write_manifest, write_sample, Layout,
    Sample, SynthConfig, SynthKind,
};
use polypseg_core::raster::Mask;
use polypseg_core::tensor::{Shape, Tensor};
use polypseg_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Image channels hold the source row and column; mask k holds pixels with
/// `(i + j) % 3 == k`; depth holds a flat index.
fn coordinate_sample(rows: usize, cols: usize) -> Sample {
    let image = Tensor::from_fn(Shape::new(1, 3, rows, cols), |_, c, i, j| match c {
        0 => i as f64 / 1000.0,
        1 => j as f64 / 1000.0,
        _ => 0.5,
    });
    let masks = (0..2).map(|k| Mask::from_fn(rows, cols, |i, j| (i + j) % 3 == k)).collect();
    let depth = Tensor::from_fn(Shape::new(1, 1, rows, cols), |_, _, i, j| (i * cols + j) as f64);
    Sample::new("coords", image, masks, Some(depth)).unwrap()
}

fn decode(s: &Sample, i: usize, j: usize) -> (usize, usize) {
    let r = (s.image.get(0, 0, i, j) * 1000.0).round() as usize;
    let c = (s.image.get(0, 1, i, j) * 1000.0).round() as usize;
    (r, c)
}

fn assert_consistent(out: &Sample, cols: usize) {
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            let (r, c) = decode(out, i, j);
            assert_eq!(out.depth.as_ref().unwrap().get(0, 0, i, j), (r * cols + c) as f64);
            for (k, m) in out.masks.iter().enumerate() {
                assert_eq!(m.get(i, j), (r + c) % 3 == k);
            }
            assert_eq!(out.union.get(i, j), (r + c) % 3 != 2);
        }
    }
}

proptest! {
    #[test]
    fn augmentations_move_every_channel_together(
        rows in 4usize..20, cols in 4usize..20, seed in any::<u64>(), vertical in any::<bool>(), frac in 0.5f64..1.0,
    ) {
        let s = coordinate_sample(rows, cols);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flipped = random_flip(&s, &mut rng, vertical);
        assert_consistent(&flipped, cols);
        let size = ((rows.min(cols) as f64 * frac) as usize).max(1);
        let patch = sample_patch(&flipped, size, &mut rng).unwrap();
        prop_assert_eq!((patch.rows(), patch.cols()), (size, size));
        assert_consistent(&patch, cols);
        assert_consistent(&flip_vertical(&flip_horizontal(&s)), cols);
        assert_consistent(&crop_sample(&s, 1, 2, rows - 2, cols - 3).unwrap(), cols);
    }
}

#[test]
fn flips_map_pixels_to_their_mirror() {
    let s = coordinate_sample(5, 7);
    let h = flip_horizontal(&s);
    let v = flip_vertical(&s);
    for i in 0..5 {
        for j in 0..7 {
            assert_eq!(decode(&h, i, j), (i, 6 - j));
            assert_eq!(decode(&v, i, j), (4 - i, j));
        }
    }
    assert_eq!(h.union.count(), s.union.count());
}

#[test]
fn horizontal_flip_happens_about_half_the_time() {
    let s = coordinate_sample(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let flips = (0..2000)
        .filter(|_| random_flip(&s, &mut rng, false) != s)
        .count();
    // Binomial(2000, 0.5): sd ~ 22.
    assert!((900..1100).contains(&flips), "{flips}");
}

#[test]
fn patch_corners_are_uniform() {
    let corner = Tensor::from_fn(Shape::new(1, 3, 500, 500), |_, c, i, j| if c == 0 { i as f64 } else { j as f64 });
    let s = Sample::new("big", corner, vec![], None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let size = 224;
    let span = 500 - size + 1;
    let mut bins = [[0u32; 4]; 4];
    let draws = 10_000;
    for _ in 0..draws {
        let p = sample_patch(&s, size, &mut rng).unwrap();
        let (top, left) = (p.image.get(0, 0, 0, 0) as usize, p.image.get(0, 1, 0, 0) as usize);
        bins[top * 4 / span][left * 4 / span] += 1;
    }
    // Exact cell probabilities for 277 positions split into 4 bins.
    let widths: Vec<f64> = (0..4)
        .map(|b| (0..span).filter(|&x| x * 4 / span == b).count() as f64 / span as f64)
        .collect();
    let mut chi2 = 0.0;
    for (r, row) in bins.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            let e = draws as f64 * widths[r] * widths[c];
            chi2 += (n as f64 - e).powi(2) / e;
        }
    }
    // 99th percentile of chi-square with 15 degrees of freedom.
    assert!(chi2 < 30.578, "chi2 = {chi2}");
}

#[test]
fn exact_size_and_all_positive_patches() {
    let image = Tensor::filled(Shape::new(1, 3, 224, 224), 0.25);
    let s = Sample::new("full", image, vec![Mask::from_fn(224, 224, |_, _| true)], None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = sample_patch(&s, 224, &mut rng).unwrap();
    assert_eq!(p, s);
    assert_eq!(p.union.count(), 224 * 224);
    let small = resize_sample(&s, 100, 100).unwrap();
    assert!(matches!(sample_patch(&small, 224, &mut rng), Err(Error::Validation(_))));
}

#[test]
fn batches_stack_rgb_then_depth() {
    let samples: Vec<Sample> = (0..20)
        .map(|k| {
            let image = Tensor::filled(Shape::new(1, 3, 224, 224), k as f64 / 20.0);
            let depth = Tensor::filled(Shape::new(1, 1, 224, 224), 0.5 + k as f64 / 100.0);
            Sample::new(format!("b{k}"), image, vec![], Some(depth)).unwrap()
        })
        .collect();
    let (x, labels) = assemble_batch(&samples, false).unwrap();
    assert_eq!(x.shape(), Shape::new(20, 3, 224, 224));
    assert_eq!((labels.n, labels.h, labels.w), (20, 224, 224));
    let (x4, _) = assemble_batch(&samples[..2], true).unwrap();
    assert_eq!(x4.shape(), Shape::new(2, 4, 224, 224));
    assert_eq!(x4.plane(1, 3), samples[1].depth.as_ref().unwrap().plane(0, 0));
    assert!(assemble_batch(&[], false).is_err());
}

fn write_pair(root: &Path, stem: &str, mask: Option<bool>) {
    let img = RgbImage::from_fn(6, 5, |x, y| Rgb([(x * 40) as u8, (y * 50) as u8, 7]));
    img.save(root.join("images").join(format!("{stem}.png"))).unwrap();
    if let Some(positive) = mask {
        let m = GrayImage::from_fn(6, 5, |x, y| Luma([if positive && x < 2 && y < 2 { 255 } else { 0 }]));
        m.save(root.join("masks").join(format!("{stem}_mask.png"))).unwrap();
    }
}

fn scratch() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::create_dir_all(dir.path().join("masks")).unwrap();
    dir
}

#[test]
fn pairing_and_skip_report() {
    let dir = scratch();
    let layout = Layout::default();
    let empty = load_dataset(dir.path(), &layout).unwrap();
    assert!(empty.is_empty() && empty.skipped.is_empty());

    for k in 0..5 {
        write_pair(dir.path(), &format!("f{k}"), Some(true));
    }
    assert_eq!(load_dataset(dir.path(), &layout).unwrap().len(), 5);

    std::fs::remove_file(dir.path().join("masks/f3_mask.png")).unwrap();
    let m = load_dataset(dir.path(), &layout).unwrap();
    assert_eq!(m.len(), 4);
    assert_eq!(m.skipped.len(), 1);
    assert!(m.skipped[0].path.ends_with("f3.png"));
}

#[test]
fn undecodable_file_is_fatal_and_named() {
    let dir = scratch();
    write_pair(dir.path(), "good", Some(true));
    std::fs::write(dir.path().join("images/bad.png"), b"not an image").unwrap();
    std::fs::write(dir.path().join("masks/bad_mask.png"), b"nor this").unwrap();
    let err = load_dataset(dir.path(), &Layout::default()).unwrap_err();
    assert!(matches!(&err, Error::Decode { path, .. } if path.ends_with("bad.png")), "{err}");
}

#[test]
fn duplicate_ids_are_rejected() {
    let dir = scratch();
    write_pair(dir.path(), "a", Some(true));
    RgbImage::new(6, 5).save(dir.path().join("images/a.ppm")).unwrap();
    assert!(matches!(load_dataset(dir.path(), &Layout::default()), Err(Error::Validation(_))));
}

#[test]
fn polyp_filter_keeps_positive_frames() {
    let dir = scratch();
    for k in 0..10 {
        write_pair(dir.path(), &format!("p{k}"), Some(k % 3 == 0));
    }
    let m = load_dataset(dir.path(), &Layout::default()).unwrap();
    let kept = filter_polyp_frames(&m).unwrap();
    assert_eq!(kept.len(), 4);
    assert_eq!(filter_polyp_frames(&kept).unwrap(), kept);

    let none = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(none.path().join("images")).unwrap();
    std::fs::create_dir_all(none.path().join("masks")).unwrap();
    write_pair(none.path(), "e", Some(false));
    assert!(filter_polyp_frames(&load_dataset(none.path(), &Layout::default()).unwrap())
        .unwrap()
        .is_empty());
}

#[test]
fn written_samples_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        size: 32,
        count: 3,
        max_polyps: 3,
        kind: SynthKind::AmbiguousDepth,
        ..Default::default()
    };
    let samples = synth_dataset(&cfg).unwrap();
    for s in &samples {
        write_sample(s, dir.path()).unwrap();
    }
    let layout = Layout::from_toml("depth = \"depth\"\nsplit = \"test\"\n").unwrap();
    let manifest = load_dataset(dir.path(), &layout).unwrap();
    assert_eq!(manifest.split, "test");
    assert_eq!(manifest.len(), 3);
    assert_eq!(read_manifest(&write_manifest(&manifest)).unwrap(), manifest);
    for (s, r) in samples.iter().zip(&manifest.records) {
        let back = load_sample(r).unwrap();
        assert_eq!(back.id, s.id);
        assert_eq!(back.union, s.union);
        // Union files are split back in raster order of first pixel.
        let key = |m: &Mask| m.as_bytes().iter().position(|&b| b != 0);
        let mut want = s.masks.clone();
        want.sort_by_key(key);
        assert_eq!(back.masks, want);
        assert!(back.image.max_abs_diff(&s.image).unwrap() <= 0.5 / 65535.0 + 1e-7);
        let d = back.depth.as_ref().unwrap();
        assert!(d.max_abs_diff(s.depth.as_ref().unwrap()).unwrap() <= 0.5 / 65535.0 + 1e-7);
    }
    assert!(Layout::from_toml("colour = 1").is_err());
}
