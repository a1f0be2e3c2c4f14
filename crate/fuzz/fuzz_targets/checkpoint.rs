#![no_main]

use libfuzzer_sys::fuzz_target;
use veinatn::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&ckpt).unwrap()).unwrap();
        assert_eq!(again.params, ckpt.params);
    }
});
