use std::path::Path;
use std::process::{Command, Output};

pub const SMALL_RUN: &str = r#"
synthetic = "sine"
synthetic_length = 600
lookback = 10
window = 5
hidden = [16]
episodes = 10
train_episodes = [5, 10]
batchsize = 16
max_age = 200
k = 1
random_access = true
episode_len = 64
sync_period = 20
seed = 3
"#;

pub fn mrdqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrdqn"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}
