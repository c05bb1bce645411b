#![no_main]

use libfuzzer_sys::fuzz_target;

const FLEET: &str = "1 1 0 0 0 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21
1 2 0 0 0 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21
2 1 0 0 0 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16 17 18 19 20 21
";

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let fleet = tcmn_core::data::parse_cmapss_str(FLEET).unwrap();
        if let Ok(trajs) = tcmn_core::data::parse_rul_truth_str(text, fleet) {
            assert!(trajs.iter().all(|t| t.true_final_rul.is_some()));
        }
    }
});
