//! Renders the synthetic shapes dataset to disk and summarises it.
//!
//! cargo run --example gen_data -- [out_dir] [samples_per_class]

use std::path::PathBuf;

use dmpt::harness::synthetic::{generate, load_dataset, write_dataset, SyntheticSpec};

fn main() -> dmpt::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let per_class = args.next().map_or(40, |a| a.parse().expect("samples_per_class"));

    let spec = SyntheticSpec { samples_per_class: per_class, ..Default::default() };
    let data = generate(&spec, 0)?;
    write_dataset(&data, &root)?;

    // read it back the way the CLI does
    let back = load_dataset(&root)?;
    assert_eq!(back.samples.len(), data.samples.len());
    for (label, name) in back.class_names.iter().enumerate() {
        let boxes: Vec<_> = back.samples.iter().filter(|s| s.label == label).map(|s| s.bbox).collect();
        let mean_area = boxes.iter().map(|b| b.area()).sum::<usize>() as f64 / boxes.len() as f64;
        println!("{name:<14} {:3} images, mean object area {mean_area:.1} px", boxes.len());
    }
    println!("wrote {} images and manifest.tsv under {}", back.samples.len(), root.display());
    Ok(())
}
