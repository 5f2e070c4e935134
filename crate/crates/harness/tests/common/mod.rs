#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sslab::config::ExperimentConfig;

/// A config whose runs train in a second or two. `runs` and `diagnostics`
/// are the bodies of those two tables.
pub fn tiny_toml(runs: &str, diagnostics: &str) -> String {
    format!(
        r#"
name = "tiny"
seed = 11

[dataset]
source = "synthetic"
kind = "oriented_shapes"
n_per_class = 15
class_count = 4
side = 32

[model]
width_multiplier = 0.25
blocks_per_stage = 1

[optim]
epochs = 2
decay_epochs = [1]
batch_size = 16

[runs]
{runs}

[probe]
pooled_dims = [256]
label_fractions = [1.0]
epochs = 4
decay_epochs = [2, 3]

[diagnostics]
{diagnostics}
"#
    )
}

pub const ROTATION_ONLY: &str = r#"pretexts = ["rotation"]"#;

pub fn tiny_config(runs: &str, diagnostics: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&tiny_toml(runs, diagnostics)).unwrap()
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn sslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sslab")).args(args).env("RUST_LOG", "warn").env_remove("SSLAB_OUT").output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
