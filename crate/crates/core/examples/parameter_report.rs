//! Prints the parameter table of a configuration and compares it with the
//! two-convolution baseline of the same widths.
//!
//! cargo run --example parameter_report -- [widths, e.g. 64,128,256,512]

use sdu_seg::models::{parse_widths, BlockKind, ModelConfig, ParameterReport, REFERENCE_TOTALS};

fn main() -> sdu_seg::Result<()> {
    let widths = match std::env::args().nth(1) {
        Some(w) => parse_widths(&w)?,
        None => vec![64, 128, 256, 512],
    };
    let sdu = ModelConfig::new(BlockKind::Sdu).with_widths(&widths);
    let unet = sdu.clone().with_kind(BlockKind::DoubleConv);
    let report = ParameterReport::for_config(&sdu)?.compare_with(&unet)?;
    print!("{report}");
    let mut levels: Vec<&str> = report.rows.iter().filter_map(|r| r.name.split('.').next()).collect();
    levels.dedup();
    for level in levels {
        println!("{level:<12} {:>10}", report.subtotal(&format!("{level}.")));
    }
    println!("without norm: {}", report.total_without_norm);
    for r in REFERENCE_TOTALS {
        println!("reference {:<10} {:>11}", r.network, r.parameters);
    }
    Ok(())
}
