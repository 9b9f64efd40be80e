#![no_main]

use libfuzzer_sys::fuzz_target;
use uvrefine::features::weights::WeightsBundle;

fuzz_target!(|data: &[u8]| {
    if let Ok(bundle) = WeightsBundle::from_bytes(data) {
        let bytes = bundle.to_bytes().expect("encode a decoded bundle");
        let again = WeightsBundle::from_bytes(&bytes).expect("decode a re-encoded bundle");
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }
});
