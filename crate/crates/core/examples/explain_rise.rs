//! Saliency by randomized masking, demonstrated against a scorer with a
//! known ground truth: it reads only a planted 20x20 region, so the saliency
//! map must light up exactly there. Writes the heat overlay as a PNG.
//!
//!     cargo run --example explain_rise

use cxr_triage::saliency::{render_overlay, rise_saliency, Grid, MaskSpec};

fn main() -> cxr_triage::Result<()> {
    let size = 64usize;
    // an "X-ray": soft vertical gradient with a brighter planted region
    let (r0, c0, side) = (28usize, 12usize, 20usize);
    let mut pixels = vec![0.0f32; size * size];
    for r in 0..size {
        for c in 0..size {
            let mut v = 0.25 + 0.3 * (r as f32 / size as f32);
            if r >= r0 && r < r0 + side && c >= c0 && c < c0 + side {
                v += 0.35;
            }
            pixels[r * size + c] = v.min(1.0);
        }
    }
    let image = Grid::new(size, size, pixels);

    // black-box model: class-0 score is the mean intensity inside the
    // planted region; class 1 reads the opposite corner
    let region_mean = move |g: &Grid, top: usize, left: usize| -> f64 {
        let mut sum = 0.0f64;
        for r in top..top + side {
            for c in left..left + side {
                sum += f64::from(g.get(r, c));
            }
        }
        sum / (side * side) as f64
    };
    let scorer = |g: &Grid| -> cxr_triage::Result<Vec<f64>> {
        Ok(vec![region_mean(g, r0, c0), region_mean(g, 2, 40)])
    };

    let spec = MaskSpec {
        num_masks: 1000,
        seed: 5,
        ..Default::default()
    };
    let maps = rise_saliency(scorer, &image, &spec)?;

    let (peak_r, peak_c) = maps[0].argmax();
    let inside =
        peak_r >= r0 && peak_r < r0 + side && peak_c >= c0 && peak_c < c0 + side;
    println!(
        "planted region rows {r0}..{} cols {c0}..{}",
        r0 + side,
        c0 + side
    );
    println!("class-0 saliency peak at ({peak_r}, {peak_c}) -> inside region: {inside}");

    let out = std::env::temp_dir().join("cxr-triage-example-rise");
    std::fs::create_dir_all(&out).unwrap();
    for (i, map) in maps.iter().enumerate() {
        let path = out.join(format!("overlay_class{i}.png"));
        render_overlay(&image, map, &path)?;
        println!("class-{i} overlay -> {}", path.display());
    }
    Ok(())
}
