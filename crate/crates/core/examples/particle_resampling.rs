//! The particle-set machinery on its own: weighting against a map, effective
//! sample size, systematic resampling, and the mixture fit that sets the
//! particle count.
//!
//! cargo run --release --example particle_resampling

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semloc::geometry::Se2;
use semloc::mcl::{
    adapt_particle_count, effective_sample_size, fit_gmm, mixture_area, normalize, systematic_resample, weigh,
    FilterConfig, Particle,
};
use semloc::polar::{rasterize_scan, PreparedScan};
use semloc::scan::SemanticScan;
use semloc::semantic_map::{build_tdf, ClassSet};
use semloc::sim::{simulate, ScenarioSpec, WorldSpec};

fn main() -> semloc::Result<()> {
    let spec = ScenarioSpec { world: WorldSpec { seed: 5, scale_true: 2.0, ..Default::default() }, length_m: 10.0, ..Default::default() };
    let sc = simulate(&spec)?;
    let classes = ClassSet::portable();
    let tdf = build_tdf(&sc.world.map, &classes, 50.0)?;
    let scan = SemanticScan::from_frame(&sc.scans[0], &classes);
    let prepared = PreparedScan::new(&rasterize_scan(&scan, &spec.grid, &classes));
    let cfg = FilterConfig::default();

    // two clouds: one around the true pose, one somewhere else
    let g = sc.ground_truth[0];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps: Vec<Particle> = (0..4000)
        .map(|i| {
            let (cx, cy) = if i % 2 == 0 { (g.x, g.y) } else { (g.x + 30.0, g.y - 20.0) };
            let pose = Se2::new(cx + rng.gen_range(-3.0..3.0), cy + rng.gen_range(-3.0..3.0), g.theta);
            Particle { pose, scale: 2.0, log_weight: 0.0 }
        })
        .collect();
    normalize(&mut ps);
    let n0 = ps.len() as f64;
    println!("uniform: ess {:.0} of {n0}", effective_sample_size(&ps));

    let costs = weigh(&mut ps, &prepared, &tdf, &cfg);
    normalize(&mut ps);
    let best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("weighted: ess {:.0}, best cost {best:.1}", effective_sample_size(&ps));

    let pts: Vec<[f64; 2]> = ps.iter().map(|p| p.scaled_position()).collect();
    let w: Vec<f64> = ps.iter().map(Particle::weight).collect();
    let before = mixture_area(&fit_gmm(&pts, Some(&w), cfg.gmm_components, &mut rng)?);

    let out = systematic_resample(&ps, ps.len(), &mut rng);
    let near = out.iter().filter(|p| (p.pose.x - g.x).hypot(p.pose.y - g.y) < 5.0).count();
    println!("resampled: {near} of {} particles near the true pose", out.len());

    let pts: Vec<[f64; 2]> = out.iter().map(|p| p.scaled_position()).collect();
    let after = mixture_area(&fit_gmm(&pts, None, cfg.gmm_components, &mut rng)?);
    println!(
        "mixture area {before:.0} -> {after:.0} px^2, particle count {} -> {}",
        adapt_particle_count(before, before, cfg.n_min, cfg.n_max),
        adapt_particle_count(after, before, cfg.n_min, cfg.n_max)
    );
    Ok(())
}
