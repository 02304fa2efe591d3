//! Per-class positive/negative loss weights from training counts:
//! w+ = N_c/(N_c+P_c) and w- = P_c/(N_c+P_c), so the rare class's positive
//! term is amplified and the two always sum to one.
//!
//!     cargo run --example class_weights

use cxr_triage::loss::compute_class_weights;

fn main() -> cxr_triage::Result<()> {
    // four-class training counts at full dataset scale
    let counts = vec![
        ("Normal".to_string(), 1341usize),
        ("BacterialPneumonia".to_string(), 2530),
        ("ViralPneumonia".to_string(), 1337),
        ("COVID19".to_string(), 115),
    ];
    let total: usize = counts.iter().map(|(_, n)| n).sum();
    println!("training set: {total} images\n");
    println!("{:<20} {:>8} {:>12} {:>12}", "class", "P_c", "w+", "w-");

    let weights = compute_class_weights(&counts)?;
    for ((name, p), w) in counts.iter().zip(&weights) {
        println!("{name:<20} {p:>8} {:>12.6} {:>12.6}", w.pos, w.neg);
        assert!((w.pos + w.neg - 1.0).abs() <= 1e-15);
    }

    let covid = &weights[3];
    println!(
        "\nCOVID-19 positive errors weigh {:.1}x its negative errors",
        covid.pos / covid.neg
    );
    Ok(())
}
