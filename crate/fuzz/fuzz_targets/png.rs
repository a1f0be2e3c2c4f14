#![no_main]

use libfuzzer_sys::fuzz_target;
use veinatn::image::{decode_image, decode_png, encode_png};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png(data) {
        assert_eq!(decode_image(&encode_png(&img).unwrap()).unwrap(), img);
    }
});
