#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = ctxgcn::io::decode_checkpoint(data) {
        let bytes = ctxgcn::io::encode_checkpoint(&ckpt).unwrap();
        assert!(ctxgcn::io::decode_checkpoint(&bytes).is_ok());
    }
});
