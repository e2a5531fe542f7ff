//! Compare backprop gradients with central finite differences on a small MLP.

use class_interference::nn::{MlpModel, MlpSpec, ParamVector, Sample};

fn main() -> class_interference::Result<()> {
    let spec = MlpSpec::new(3, vec![6, 4], 3)?;
    let model = MlpModel::init(spec, 1)?;
    println!("{} parameters", model.params().len());

    let samples = [
        Sample::new(vec![0.5, -1.0, 2.0], 0),
        Sample::new(vec![-0.3, 0.8, 0.1], 2),
        Sample::new(vec![1.5, 1.5, -0.7], 1),
    ];
    let h = 1e-5;
    for s in &samples {
        let g = model.sample_gradient(s)?;
        let mut worst: f64 = 0.0;
        for k in 0..g.len() {
            let shifted = |d: f64| -> class_interference::Result<f64> {
                let mut v = model.params().clone().into_vec();
                v[k] += d;
                model.with_params(ParamVector::from_vec(v)?)?.sample_loss(s)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            worst = worst.max((g.as_slice()[k] - fd).abs() / (fd.abs() + 1e-8));
        }
        println!(
            "label {}: loss {:.6}, |grad| {:.4}, max relative error {:.2e}",
            s.label,
            model.sample_loss(s)?,
            g.norm(),
            worst
        );
    }
    Ok(())
}
