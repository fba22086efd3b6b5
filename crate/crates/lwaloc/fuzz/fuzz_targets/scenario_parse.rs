//! Scene descriptions must never panic the parser, and anything accepted
//! must survive a render/reparse round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scenario) = lwaloc::config::parse_scenario(text) {
        let rendered = lwaloc::config::scenario_to_toml(&scenario);
        let reparsed =
            lwaloc::config::parse_scenario(&rendered).expect("rendered scene must reparse");
        assert_eq!(scenario, reparsed, "render/reparse must be an identity");
    }
});
