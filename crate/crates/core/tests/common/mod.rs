#![allow(dead_code)]

use skelood::harness::ExperimentConfig;

/// Four classes, small networks, a few epochs: a whole campaign in seconds.
pub const TINY: &str = r#"
seed = 7
folds = 2

[family_a]
family = "A"
classes = ["wave", "squat", "walk", "jump"]
sequences_per_class = 40
frames = 24

[family_b]
family = "B"
classes = ["arm_circles", "bow"]
sequences_per_class = 6
frames = 24

[backbone]
widths = [8, 16]
kernel = 3

[classifier]
epochs = 30
batch_size = 16
lr = 1e-2
decay_every = 20
decay_factor = 0.1

[metric]
embed_dim = 8
hidden = 16
views = 2
embedding = { epochs = 4, batch_size = 16, lr = 1e-3, decay_every = 0, decay_factor = 0.1 }
classification = { epochs = 4, batch_size = 16, lr = 1e-3, decay_every = 0, decay_factor = 0.1 }
confidence = { epochs = 4, batch_size = 16, lr = 1e-3, decay_every = 0, decay_factor = 0.1 }
"#;

pub fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY).expect("tiny config")
}
