#![no_main]

use dmrirecon::spectral::{decode_spectrum, encode_spectrum};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok((key, values, phi)) = decode_spectrum(data) else { return };
    assert_eq!(values.len(), phi.ncols());
    let (key2, v2, p2) = decode_spectrum(&encode_spectrum(&key, &values, &phi)).expect("encoded spectrum decodes");
    assert_eq!(key2, key);
    assert_eq!((v2.len(), p2.shape()), (values.len(), phi.shape()));
});
