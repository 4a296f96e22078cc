//! Shared fixtures for the criterion benchmarks.

use qbe_core::quantizer::make_resistor_ladder;
use qbe_core::signal::{acquire, sine_basis, AcquisitionRecord, ParamVector};
use qbe_core::QuantizerModel;

pub const LAMBDA: f64 = 0.1155545;

/// 8-bit ladder over [-10, 10] V with 0.215 step of INL.
pub fn ladder() -> QuantizerModel {
    make_resistor_ladder(8, -10.0, 10.0, 0.02, Some(0.215), 1).expect("fixed seed ladder")
}

/// Sine record of `samples` codes at half a step of noise.
pub fn sine_record(q: &QuantizerModel, samples: usize) -> AcquisitionRecord {
    let step = q.step();
    let params = ParamVector::new(vec![30.0 * step, 40.0 * step, 0.5 * step], Some(0.5 * step)).unwrap();
    acquire(&params, &sine_basis(), LAMBDA, samples, q, 3).unwrap()
}
