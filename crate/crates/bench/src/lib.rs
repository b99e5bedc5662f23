//! Shared fixtures for the criterion benchmarks.

use dualcp::{synth, GuidanceMatrix, SynthData, SynthSpec};

/// Default synthetic benchmark, scaled to `dim` features.
pub fn fixture(dim: usize, num_classes: usize) -> SynthData {
    let plan = plan_for(num_classes);
    synth::generate(&SynthSpec {
        num_classes,
        dim,
        group_plan: plan,
        ..Default::default()
    })
    .expect("feasible benchmark spec")
}

/// Groups of four with a remainder group.
pub fn plan_for(num_classes: usize) -> Vec<usize> {
    let mut plan = vec![4; num_classes / 4];
    if !num_classes.is_multiple_of(4) {
        plan.push(num_classes % 4);
    }
    plan
}

pub fn guidance(dim: usize, num_classes: usize) -> GuidanceMatrix {
    fixture(dim, num_classes).guidance
}
