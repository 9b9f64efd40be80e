#![no_main]

use libfuzzer_sys::fuzz_target;
use uvrefine::CameraPose;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(pose) = CameraPose::parse_json(text) {
        let again = CameraPose::parse_json(&pose.to_json()).expect("re-parse of written pose");
        assert_eq!(pose, again);
    }
});
