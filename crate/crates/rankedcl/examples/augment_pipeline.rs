//! Run the two-crop augmentation pipeline on a synthetic image and write
//! the views as PPM files.
//!
//! Run with: cargo run --example augment_pipeline

use rankedcl::augment::{save_ppm, two_crop, AugmentConfig, RasterImage};
use rankedcl::rng::Rng;

fn main() -> rankedcl::Result<()> {
    // 64x64 gradient with a bright square, enough structure to see the
    // crop / flip / jitter effects
    let mut img = RasterImage::constant(64, 64, [0.0; 3]);
    for y in 0..64 {
        for x in 0..64 {
            img.set(y, x, 0, x as f64 / 63.0);
            img.set(y, x, 1, y as f64 / 63.0);
            img.set(y, x, 2, 0.25);
        }
    }
    for y in 8..24 {
        for x in 40..56 {
            for c in 0..3 {
                img.set(y, x, c, 0.95);
            }
        }
    }

    let cfg = AugmentConfig::default();
    cfg.validate()?;

    let out = std::env::temp_dir().join("rankedcl_augment");
    std::fs::create_dir_all(&out)?;
    save_ppm(&img, &out.join("input.ppm"))?;

    // each sample key yields a reproducible pair of views
    for sample in 0..3u64 {
        let key = Rng::new(7).derive(&[sample]);
        let (a, b) = two_crop(&img, &cfg, &key);
        let mean = |v: &RasterImage| {
            v.pixels.iter().sum::<f64>() / v.pixels.len() as f64
        };
        println!(
            "sample {sample}: view means {:.3} / {:.3} (normalized space)",
            mean(&a),
            mean(&b)
        );
        // undo normalization for viewable output
        let denorm = |v: &RasterImage| {
            let mut img = v.clone();
            for p in img.pixels.iter_mut() {
                *p = (*p * 0.5 + 0.5).clamp(0.0, 1.0);
            }
            img
        };
        save_ppm(&denorm(&a), &out.join(format!("view_{sample}_a.ppm")))?;
        save_ppm(&denorm(&b), &out.join(format!("view_{sample}_b.ppm")))?;
    }
    println!("wrote PPMs to {}", out.display());
    Ok(())
}
