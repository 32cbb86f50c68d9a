#![no_main]

use ieci::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.emit().expect("valid config emits")).expect("emitted config parses");
        assert_eq!(again, cfg);
    }
});
