//! Writing and reading FMX/LBL files and a fitted model.
//!
//! `cargo run --example file_formats -- [dir]`

use std::path::PathBuf;

use h_ensemble::io::{
    encode_fmx, load_model, read_fmx, read_lbl, save_model, write_fmx, write_lbl,
};
use h_ensemble::mcr::predict;
use h_ensemble::pipeline::{fit_ensemble, FitOptions};
use h_ensemble::synth::{generate_pool, AblationConfig};
use h_ensemble::FeatureMatrix;

fn main() -> h_ensemble::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);

    let one = FeatureMatrix::from_rows(&[vec![1.0]])?;
    println!("FMX bytes of [[1.0]]: {:02x?}", encode_fmx(&one)?);

    let data = generate_pool(&AblationConfig::default(), 1, 4)?;
    let fmx = dir.join("example_source_0.fmx");
    let lbl = dir.join("example_labels.lbl");
    write_fmx(&fmx, &data.train[0])?;
    write_lbl(&lbl, &data.train_labels)?;
    assert_eq!(read_fmx(&fmx)?, data.train[0]);
    assert_eq!(read_lbl(&lbl)?, data.train_labels);
    println!("round-tripped {} and {}", fmx.display(), lbl.display());

    let (model, _) = fit_ensemble(&data.train, &data.train_labels, &FitOptions::default())?;
    let path = dir.join("example_model.json");
    save_model(&path, &model)?;
    let loaded = load_model(&path)?;
    let same = predict(&model, &data.test)? == predict(&loaded, &data.test)?;
    println!(
        "model saved to {}; reloaded predictions identical: {same}",
        path.display()
    );
    Ok(())
}
