#![allow(dead_code)]

pub mod batteries;
pub mod oracle;

use std::path::PathBuf;
use std::sync::OnceLock;

use barrier_pair::bundle::{ArtifactBundle, SynthConfig};
use barrier_pair::config::{load_model, load_scenario};
use barrier_pair::sim::Scenario;

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(&root().join("scenarios").join(format!("{name}.toml"))).expect("scenario parses")
}

fn synth(name: &str) -> ArtifactBundle {
    let (file, plant, cons) = load_model(&root().join("models").join(format!("{name}.toml"))).expect("model parses");
    let d = file.synthesis.expect("model declares synthesis defaults");
    let cfg = SynthConfig {
        eps: d.eps,
        mu_cl: d.mu_cl,
        mu_p: d.mu_p,
        directions: d.directions,
        interp: d.interp,
    };
    ArtifactBundle::synthesize(&file.name, &plant, &cons, &cfg, &Default::default(), &Default::default()).expect("synthesis succeeds")
}

pub fn pendulum() -> &'static ArtifactBundle {
    static B: OnceLock<ArtifactBundle> = OnceLock::new();
    B.get_or_init(|| synth("pendulum"))
}

pub fn spring_mass() -> &'static ArtifactBundle {
    static B: OnceLock<ArtifactBundle> = OnceLock::new();
    B.get_or_init(|| synth("springmass"))
}
