//! Writes a small synthetic dataset to disk, reloads it and checks the
//! masks against the ellipses that produced them.
//!
//! cargo run --example synthetic_data -- <out dir> [n] [size]

use sdu_seg::data::{load_root, synth_dataset, synth_sample, SynthConfig};

fn main() -> sdu_seg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic".into());
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let size = args.next().and_then(|a| a.parse().ok()).unwrap_or(64);
    let cfg = SynthConfig::new(n, size, 1);

    let written = synth_dataset(out.as_ref(), &cfg)?;
    let loaded = load_root(out.as_ref())?;
    assert_eq!(written.digest(), loaded.digest());
    println!("{} samples in {out}, digest {}", loaded.len(), loaded.digest());

    for i in 0..n.min(4) {
        let s = synth_sample(&cfg, i)?;
        let fg = s.mask.iter().filter(|&&m| m == 1).count() as f64 / s.mask.len() as f64;
        println!(
            "{}: {} ellipses, gray {} on {}, foreground {:.1}%",
            s.id,
            s.ellipses.len(),
            s.foreground,
            s.background,
            100.0 * fg
        );
    }
    Ok(())
}
