//! Train under the three optimizer presets and compare how flat the
//! class-0/class-1 interference surface is around each solution.

use class_interference::cctm::mistake_rate;
use class_interference::datagen::interference_preset;
use class_interference::interference::{
    compute_class_gradients, sample_surface, surface_stats, SurfaceMetric, SurfaceSpec,
};
use class_interference::nn::{MlpModel, MlpSpec};
use class_interference::optim::{train, Preset};

fn main() -> class_interference::Result<()> {
    let seed = 0;
    let (train_set, test_set) = interference_preset(0.8, seed)?.stratified_split(0.8)?;
    let spec = SurfaceSpec::new(0, 1, 0.5, 19, SurfaceMetric::MistakeRate)?;
    for preset in Preset::ALL {
        let model = MlpModel::init(MlpSpec::new(2, vec![16], 4)?, seed)?;
        let model = train(
            model,
            &train_set,
            &preset.config(seed),
            &mut |_, _, _: &MlpModel| Ok(()),
        )?;
        let grads = compute_class_gradients(&model, &train_set)?;
        let stats = surface_stats(&sample_surface(&model, &grads, &train_set, &spec)?, 0.02);
        println!(
            "{preset:>9}: train {:.4} test {:.4}  flat fraction {:.3}  surface range [{:.3}, {:.3}]",
            mistake_rate(&model, &train_set)?,
            mistake_rate(&model, &test_set)?,
            stats.flat_fraction,
            stats.min,
            stats.max
        );
    }
    Ok(())
}
