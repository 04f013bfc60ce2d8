//! Builds the class-wise distance fields for a generated map, writes the
//! cache and reads it back.
//!
//! cargo run --release --example build_tdf [out.ctdf]

use std::time::Instant;

use semloc::pipeline::write_tdf_cache;
use semloc::semantic_map::{build_tdf, ClassSet, ClassTdf, CANONICAL_CLASSES};
use semloc::sim::{generate_world, WorldSpec};

fn main() -> semloc::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("semloc_example.ctdf").display().to_string());
    let world = generate_world(&WorldSpec { seed: 1, size: 256, ..Default::default() })?;
    let classes = ClassSet::portable();

    let t = Instant::now();
    let tdf = build_tdf(&world.map, &classes, 50.0)?;
    println!("{}x{} map, fields built in {:.1} ms", tdf.width(), tdf.height(), t.elapsed().as_secs_f64() * 1e3);

    let counts = world.map.class_counts();
    let (cx, cy) = (tdf.width() / 2, tdf.height() / 2);
    for (c, name) in CANONICAL_CLASSES.iter().enumerate() {
        println!("  {name:<10} {:>6} cells, distance at center {:.2} px", counts[c], tdf.value(c, cx, cy));
    }

    write_tdf_cache(out.as_ref(), &tdf)?;
    let bytes = std::fs::read(&out).expect("cache just written");
    let back = ClassTdf::read_cache(&bytes[..], &out)?;
    assert_eq!(back.plane(0), tdf.plane(0));
    println!("cache {out}: {} bytes, reads back identical", bytes.len());
    Ok(())
}
