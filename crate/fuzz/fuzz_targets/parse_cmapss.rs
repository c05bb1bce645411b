#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(trajs) = tcmn_core::data::parse_cmapss_str(text) {
            // Whatever parses must survive a write/parse round trip.
            let again = tcmn_core::data::parse_cmapss_str(&tcmn_core::data::write_cmapss(&trajs)).unwrap();
            assert_eq!(again.len(), trajs.len());
        }
    }
});
