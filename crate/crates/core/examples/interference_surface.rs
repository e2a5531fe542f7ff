//! Sample the mistake-rate surface spanned by two class gradients of a trained
//! model and print it as a coarse text heatmap.

use class_interference::datagen::interference_preset;
use class_interference::interference::{
    compute_class_gradients, sample_surface, surface_stats, SurfaceMetric, SurfaceSpec,
};
use class_interference::nn::{MlpModel, MlpSpec};
use class_interference::optim::{train, Preset};

fn main() -> class_interference::Result<()> {
    let seed = 1;
    let (train_set, _) = interference_preset(0.8, seed)?.stratified_split(0.8)?;
    let model = MlpModel::init(MlpSpec::new(2, vec![16], 4)?, seed)?;
    let model = train(
        model,
        &train_set,
        &Preset::AnnealLr.config(seed),
        &mut |_, _, _: &MlpModel| Ok(()),
    )?;

    let grads = compute_class_gradients(&model, &train_set)?;
    let spec = SurfaceSpec::new(0, 1, 0.5, 19, SurfaceMetric::MistakeRate)?;
    let grid = sample_surface(&model, &grads, &train_set, &spec)?;
    let stats = surface_stats(&grid, 0.02);
    println!(
        "center {:.4}, min {:.4}, max {:.4}, flat fraction {:.3}",
        stats.center, stats.min, stats.max, stats.flat_fraction
    );

    // Rows are θ1 (class 0 step), columns θ2 (class 1 step).
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let span = (stats.max - stats.min).max(1e-12);
    for row in &grid.values {
        let line: String = row
            .iter()
            .map(|v| shades[(((v - stats.min) / span) * 9.0).round() as usize])
            .collect();
        println!("|{line}|");
    }
    Ok(())
}
