#![no_main]

use dmrirecon::spectral::{coefficients_from_csv, coefficients_to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(c) = coefficients_from_csv(text) else { return };
    let again = coefficients_from_csv(&coefficients_to_csv(&c)).expect("written csv parses");
    assert_eq!(again.shape(), c.shape());
});
