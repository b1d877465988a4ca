#![no_main]

use dmrirecon::laplace_eig::{decode_basis, encode_basis};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok((key, pairs)) = decode_basis(data) else { return };
    assert_eq!(pairs.values.len(), pairs.vectors.ncols());
    let (key2, again) = decode_basis(&encode_basis(&key, &pairs)).expect("encoded basis decodes");
    assert_eq!(key2, key);
    assert_eq!(again.vectors.shape(), pairs.vectors.shape());
});
