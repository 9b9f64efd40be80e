#![no_main]

use libfuzzer_sys::fuzz_target;
use uvrefine::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    // the last line doubles as a `key=value` override
    let overrides: Vec<String> = text.lines().last().map(|l| vec![l.to_string()]).unwrap_or_default();
    let _ = RunConfig::build(&text, None, &[]);
    if let Ok(config) = RunConfig::build(&text, None, &overrides) {
        let _ = config.schedule();
        let _ = config.refine_options();
        let _ = config.to_toml();
    }
});
