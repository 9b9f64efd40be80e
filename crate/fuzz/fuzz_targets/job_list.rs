#![no_main]

use libfuzzer_sys::fuzz_target;
use uvrefine_cli::jobs::parse_job_list;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(jobs) = parse_job_list(&text) {
        for job in &jobs {
            assert!(!job.args().is_empty());
        }
    }
});
