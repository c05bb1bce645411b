#![no_main]

use libfuzzer_sys::fuzz_target;
use tcmn_cli::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let bytes = ckpt.encode();
        assert_eq!(Checkpoint::decode(&bytes).unwrap().encode(), bytes);
        let _ = ckpt.network();
    }
});
