#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = ctxgcn::io::decode_fmap(data) {
        assert_eq!(ctxgcn::io::encode_fmap(&map).unwrap(), data);
    }
});
