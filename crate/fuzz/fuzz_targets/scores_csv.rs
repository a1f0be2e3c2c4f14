#![no_main]

use libfuzzer_sys::fuzz_target;
use veinatn::scores::{parse_scores_csv, scores_csv_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(pairs) = parse_scores_csv(data) {
        let bytes = scores_csv_bytes(&pairs).unwrap();
        assert_eq!(parse_scores_csv(&bytes).unwrap().len(), pairs.len());
    }
});
