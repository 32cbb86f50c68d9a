#![no_main]

use ieci::output::{parse_trace, TraceWriter};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = parse_trace(data) else { return };
    let Some(dim) = rows.first().map(|r| r.x.len()) else { return };
    let mut w = TraceWriter::new(Vec::new(), dim).expect("writer");
    for r in &rows {
        w.write(r).expect("parsed row writes");
    }
});
