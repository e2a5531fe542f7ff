//! Train with the annealed preset, then report the cross-class test matrix.
//! The model round-trips through the binary model format on the way.

use class_interference::cctm::compute_cctm;
use class_interference::datagen::interference_preset;
use class_interference::nn::{MlpModel, MlpSpec};
use class_interference::optim::{train, Preset};

fn main() -> class_interference::Result<()> {
    let seed = 0;
    let (train_set, test_set) = interference_preset(0.8, seed)?.stratified_split(0.8)?;
    let model = MlpModel::init(MlpSpec::new(2, vec![16], 4)?, seed)?;
    let model = train(
        model,
        &train_set,
        &Preset::AnnealLr.config(seed),
        &mut |_, _, _: &MlpModel| Ok(()),
    )?;

    let restored = MlpModel::from_bytes(&model.to_bytes())?;
    assert_eq!(restored.params(), model.params());

    let cctm = compute_cctm(&restored, &test_set)?;
    let names: Vec<String> = (0..4).map(|c| format!("c{c}")).collect();
    print!("{}", cctm.rates_csv(&names));
    println!("test mistake rate {:.4}", cctm.mistake_rate());
    println!("recall {:.3?}", cctm.recall());
    println!("symmetry(0, 1) {:.3}", cctm.symmetry_score(0, 1)?);
    Ok(())
}
