//! Builds every model variant at desk size and runs one forward pass.

use handseg::network::{Model, ModelConfig, Variant};
use handseg::tensor::Tensor;

fn main() -> handseg::Result<()> {
    let base = ModelConfig::desk();
    let c = base.crop_size;
    let images = Tensor::full(&[2, 3, c, c], 0.5);
    for v in Variant::ALL {
        let model = Model::new(base.clone().with_variant(v), 1)?;
        let t = std::time::Instant::now();
        let out = model.predict(&images)?;
        println!(
            "{:<16} {:>8} weights  {:>2} classes  handedness {:.3?}  rel depth {:+7.1} mm  {:.0} ms",
            v.name(),
            model.params.weight_count(),
            model.config.classes(),
            out[0].handedness,
            out[0].rel_depth_mm,
            t.elapsed().as_secs_f64() * 1e3,
        );
    }
    Ok(())
}
