#![no_main]

use hamlearn::data::{CountTable, Dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::from_bytes(data) {
        let bytes = ds.to_bytes().unwrap();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap().records.len(), ds.records.len());
        let _ = CountTable::from_dataset(&ds);
    }
});
