#![no_main]

use libfuzzer_sys::fuzz_target;
use veinatn::metrics::{eer_from_det, parse_det_csv, tar_from_det, write_det_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(curve) = parse_det_csv(data) {
        assert_eq!(parse_det_csv(write_det_csv(&curve).as_bytes()).unwrap(), curve);
        let e = eer_from_det(&curve).unwrap();
        assert!((0.0..=1.0).contains(&e.eer));
        let _ = tar_from_det(&curve, 0.01);
    }
});
