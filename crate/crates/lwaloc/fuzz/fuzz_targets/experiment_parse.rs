//! Experiment documents must never panic the parser, and anything accepted
//! must already satisfy spec validation. A fixed valid scene file is staged
//! so `scenario = "scene.toml"` can resolve.

#![no_main]

use std::path::PathBuf;
use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;

fn scene_dir() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join("lwaloc-fuzz-scenes");
        std::fs::create_dir_all(&dir).expect("creating the scene directory");
        let scene =
            lwaloc::config::scenario_to_toml(&lwaloc::channel::Scenario::default_scenario());
        std::fs::write(dir.join("scene.toml"), scene).expect("staging the scene file");
        dir
    })
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = lwaloc::experiment::parse_experiment(text, scene_dir()) {
        spec.validate().expect("accepted documents must validate");
    }
});
