//! Class gradients, ego models, and the mixing identity: a convex mix of two
//! ego models is the interference model at scaled step sizes.

use class_interference::datagen::interference_preset;
use class_interference::interference::{
    compute_class_gradients, ego_model_set, evaluate_metric, full_gradient, interference_model,
    mixing_identity_gap, SurfaceMetric,
};
use class_interference::nn::{MlpModel, MlpSpec};

fn main() -> class_interference::Result<()> {
    let (train, _) = interference_preset(0.8, 3)?.stratified_split(0.8)?;
    let model = MlpModel::init(MlpSpec::new(2, vec![16], 4)?, 3)?;
    let w = model.params();

    let grads = compute_class_gradients(&model, &train)?;
    println!("class gradient norms {:.4?}", grads.norms());
    let gap = grads
        .weighted_mean()
        .max_abs_diff(&full_gradient(&model, &train)?)?;
    println!("size-weighted mean vs full gradient: max gap {gap:.1e}");

    // Stepping along one class's gradient mostly helps that class.
    let alphas = [0.0, 0.5, 1.0, 2.0];
    let egos = ego_model_set(w, &grads, 0, &alphas)?;
    for (a, p) in egos.alphas.iter().zip(&egos.models) {
        let m = model.with_params(p.clone())?;
        println!(
            "ego(class 0, α={a}): loss on class 0 {:.4}, on class 1 {:.4}",
            evaluate_metric(&m, &train, SurfaceMetric::ClassLoss(0))?,
            evaluate_metric(&m, &train, SurfaceMetric::ClassLoss(1))?
        );
    }

    let (g0, g1) = (grads.gradient(0)?, grads.gradient(1)?);
    for lambda in [0.0, 0.25, 0.5, 1.0] {
        let gap = mixing_identity_gap(w, g0, g1, 1.0, 2.0, lambda)?;
        println!("λ={lambda}: mix of ego models vs interference model, max gap {gap:.1e}");
    }
    let joint = interference_model(w, g0, g1, 0.5, 0.5)?;
    println!("joint step norm {:.4}", joint.sub_scaled(w, 1.0)?.norm());
    Ok(())
}
