//! Minimal stderr logging gated by the `KERATITIS_LOG` environment variable
//! (`quiet`, `info` or `debug`; default `info`).

use std::sync::OnceLock;

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum Level {
    Quiet,
    Info,
    Debug,
}

fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("KERATITIS_LOG").as_deref() {
        Ok("quiet") => Level::Quiet,
        Ok("debug") => Level::Debug,
        _ => Level::Info,
    })
}

pub fn info(msg: &str) {
    if level() >= Level::Info {
        eprintln!("[keratitis] {msg}");
    }
}

pub fn debug(msg: &str) {
    if level() >= Level::Debug {
        eprintln!("[keratitis:debug] {msg}");
    }
}
