//! Generates the phantom corpus, applies the stratified split and writes
//! it to disk as PNG images, paletted masks and a manifest.
//!
//! ```text
//! cargo run --release --example phantom_dataset -- [out_dir] [total] [seed]
//! ```

use std::path::PathBuf;

use segzoo::data::{
    generate_dataset, load_dataset, stratified_split, write_dataset, Split, ZoneCombo, CLASS_NAMES,
};

fn main() -> segzoo::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args
        .first()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("segzoo_phantoms"));
    let total = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(205);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut data = generate_dataset(seed, total)?;
    let split = stratified_split(&data.manifest, 0.85, seed)?;
    data.apply_split(&split);
    write_dataset(&dir, &data)?;

    println!("{total} phantoms written to {}", dir.display());
    println!("{:<6} {:>6} {:>6} {:>6}", "combo", "total", "train", "test");
    for combo in ZoneCombo::ALL {
        let of = |which: Option<Split>| {
            data.manifest
                .entries
                .iter()
                .filter(|e| e.combo == combo && (which.is_none() || e.split == which))
                .count()
        };
        println!(
            "{:<6} {:>6} {:>6} {:>6}",
            combo.code(),
            of(None),
            of(Some(Split::Train)),
            of(Some(Split::Test))
        );
    }

    let back = load_dataset(&dir)?;
    let first = &back.samples[0];
    let mut area = [0usize; 5];
    for &l in first.mask.labels() {
        area[l as usize] += 1;
    }
    println!("\n{} ({}) pixel counts:", first.id, first.combo.code());
    for (name, n) in CLASS_NAMES.iter().zip(area) {
        println!("  {name:<4} {n}");
    }
    Ok(())
}
