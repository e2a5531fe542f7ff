//! Generate the four-class interference dataset and write train/test CSVs.
//!
//! `cargo run --example generate_dataset -- [overlap] [out_dir]`

use std::path::PathBuf;

use class_interference::datagen::{interference_preset, save_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let overlap: f64 = args
        .next()
        .map_or(0.8, |s| s.parse().expect("overlap must be a number"));
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("cim-data"), PathBuf::from);

    let data = interference_preset(overlap, 42)?;
    let spec = data.meta().expect("generated data carries its spec");
    for (c, mean) in spec.class_means.iter().enumerate() {
        println!("class {c}: mean ({:+.2}, {:+.2})", mean[0], mean[1]);
    }

    let (train, test) = data.stratified_split(0.8)?;
    println!(
        "train counts {:?}, test counts {:?}",
        train.class_counts(),
        test.class_counts()
    );

    std::fs::create_dir_all(&out)?;
    save_csv(&train, out.join("train.csv"))?;
    save_csv(&test, out.join("test.csv"))?;
    println!("wrote {}", out.display());
    Ok(())
}
