#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape::pipeline::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = Checkpoint::from_json(data) {
        let bytes = state.to_json().unwrap();
        assert_eq!(Checkpoint::from_json(&bytes).unwrap(), state);
    }
});
