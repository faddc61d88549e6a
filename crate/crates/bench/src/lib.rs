//! Shared fixtures for the benchmarks.

use kinmix_core::phantom::{add_noise, default_noise, render_noise_free};
use kinmix_core::{default_phantom, DynamicImage, FrameScheme, TacModel};

pub struct Fixture {
    pub clean: DynamicImage,
    pub noisy: DynamicImage,
    pub frames: FrameScheme,
    pub tac: TacModel,
}

/// Built-in phantom with one noise realization.
pub fn fixture(seed: u64) -> Fixture {
    let spec = default_phantom();
    let frames = spec.frames.clone().expect("built-in frames");
    let tac = TacModel::plain(spec.input.as_ref().expect("built-in input"), &frames).expect("valid model");
    let clean = render_noise_free(&spec).expect("renders");
    let noisy = add_noise(&clean, &frames, &default_noise(seed)).expect("noise");
    Fixture { clean, noisy, frames, tac }
}
