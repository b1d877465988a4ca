#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(m) = dmrirecon::sparse::parse_matrix_market(text) {
        assert_eq!(m.nrows(), m.ncols());
    }
});
