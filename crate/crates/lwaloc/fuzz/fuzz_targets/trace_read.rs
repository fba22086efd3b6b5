//! Trace files must never panic the reader, and anything accepted must
//! re-serialize to a stable canonical form.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = lwaloc::trace::read_trace(data) {
        let mut bytes = Vec::new();
        lwaloc::trace::write_trace(&trace, &mut bytes).expect("writing a parsed trace");
        let reread =
            lwaloc::trace::read_trace(bytes.as_slice()).expect("canonical form must reparse");
        let mut bytes_again = Vec::new();
        lwaloc::trace::write_trace(&reread, &mut bytes_again).expect("writing the reread trace");
        assert_eq!(bytes, bytes_again, "canonical form must be a fixed point");
    }
});
