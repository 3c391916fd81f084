//! Similarity distribution of the synthetic phantom suite, used to pick the
//! default QA floor. Prints registered and unregistered percentiles.

use atlasreg::config::parse_levels;
use atlasreg::pipeline::register_to_atlas;
use atlasreg_core::affine::AffineTransform;
use atlasreg_core::atlas::Phase;
use atlasreg_core::descriptor::DescriptorParams;
use atlasreg_core::phantom::CohortSpec;
use atlasreg_core::register::similarity;
use atlasreg_core::stats::percentile;
use atlasreg_core::transform::apply_affine;
use atlasreg_core::volume::Interp;

fn main() {
    let levels = parse_levels(atlasreg::synth::SMALL_LEVELS, 1.0).expect("valid schedule");
    let params = DescriptorParams::default();
    let (mut registered, mut unregistered) = (Vec::new(), Vec::new());
    for (i, phase) in Phase::ALL.into_iter().enumerate() {
        let mut spec = CohortSpec::new([32; 3], [3.0; 3], 100 + i as u64);
        spec.phase = phase;
        let (atlas, _) = spec.atlas();
        for s in spec.subjects(10) {
            let raw = apply_affine(
                &s.image,
                &AffineTransform::identity(),
                atlas.geometry(),
                Interp::Trilinear,
            )
            .expect("identity resample");
            unregistered.push(similarity(&atlas, &raw, &params).expect("same grid"));
            let reg = register_to_atlas(&atlas, &s.image, &params, &levels).expect("registration");
            registered.push(reg.similarity);
        }
    }
    for (name, v) in [("registered", &registered), ("unregistered", &unregistered)] {
        println!(
            "{name}: min {:.4} p5 {:.4} median {:.4} p95 {:.4} max {:.4}",
            percentile(v, 0.0).unwrap(),
            percentile(v, 5.0).unwrap(),
            percentile(v, 50.0).unwrap(),
            percentile(v, 95.0).unwrap(),
            percentile(v, 100.0).unwrap()
        );
    }
}
