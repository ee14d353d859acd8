#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(file) = ctxgcn::io::decode_annotations(text) {
            let again = ctxgcn::io::encode_annotations(&file).unwrap();
            assert!(ctxgcn::io::decode_annotations(&again).is_ok());
        }
    }
});
