//! Shared helpers for the integration suites.
#![allow(dead_code)]

pub mod gradcheck;

use std::time::Instant;

/// Prints one `PASS`/`FAIL` line per acceptance criterion and returns whether it passed.
pub fn report(id: &str, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "[{}] criterion {id}: {name} -- {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }

    pub fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

use gazetrack::data::{synth_generate, FrameSample, SessionRecord, SynthConfig};
use gazetrack::geometry::DeviceTable;
use gazetrack::{DeviceSpec, Orientation};

pub fn devices() -> DeviceTable {
    DeviceTable::builtin()
}

pub fn phone() -> DeviceSpec {
    devices().get("synthPhone").unwrap().clone()
}

pub fn tablet() -> DeviceSpec {
    devices().get("synthTablet").unwrap().clone()
}

/// Desk-scale corpus of `n` subjects starting at id `first`.
pub fn corpus(
    n: u32,
    first: u32,
    dots: u32,
    frames: u32,
    seed: u64,
    tweak: impl FnOnce(&mut SynthConfig),
) -> (Vec<SessionRecord>, Vec<FrameSample>) {
    let mut cfg = SynthConfig::desk();
    cfg.n_subjects = n;
    cfg.first_subject = first;
    cfg.dots_per_session = dots;
    cfg.frames_per_dot = frames;
    tweak(&mut cfg);
    synth_generate(&cfg, &phone(), Orientation::Portrait, seed).unwrap()
}

pub fn refs(frames: &[FrameSample]) -> Vec<&FrameSample> {
    frames.iter().collect()
}
