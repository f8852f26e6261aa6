//! Fixtures shared by the benchmarks.

use hsriqm_core::csc::{learn_dictionary, ConvDictionary};
use hsriqm_core::imgio::extract_patches;
use hsriqm_core::{synth, GrayImage};

pub fn reference(size: usize) -> GrayImage {
    synth::reference_image(size, 11).expect("synthetic reference")
}

pub fn degraded(size: usize, amplitude: f64) -> GrayImage {
    synth::distort(&reference(size), amplitude, 3).expect("synthetic distortion")
}

pub fn small_dictionary(k: usize, side: usize) -> ConvDictionary {
    let patches = extract_patches(&reference(64), 16, 8).expect("patches");
    learn_dictionary(&patches, k, side, 0.05, 3, 5).expect("dictionary").0
}
