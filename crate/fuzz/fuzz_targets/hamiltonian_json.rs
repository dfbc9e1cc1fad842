#![no_main]

use hamlearn::pauli::PauliSumHamiltonian;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(h) = PauliSumHamiltonian::from_json(text) {
        let again = PauliSumHamiltonian::from_json(&h.to_json().unwrap()).unwrap();
        assert_eq!(h.num_sites(), again.num_sites());
    }
});
