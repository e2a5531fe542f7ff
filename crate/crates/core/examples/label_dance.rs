//! Record a per-epoch trace, then read the dancing notes of class 0 and the
//! label-dance events between class pairs.

use class_interference::dancing::{dance_events, dancing_notes, NO_INTERFERENCE};
use class_interference::datagen::interference_preset;
use class_interference::nn::{MlpModel, MlpSpec};
use class_interference::optim::{train_with_trace, Preset};

fn main() -> class_interference::Result<()> {
    let seed = 2;
    let (train, _) = interference_preset(0.8, seed)?.stratified_split(0.8)?;
    let model = MlpModel::init(MlpSpec::new(2, vec![16], 4)?, seed)?;
    let (_, trace) = train_with_trace(model, &train, &Preset::AnnealLr.config(seed), 1)?;

    let notes = dancing_notes(&trace, 0, 0.001)?;
    for (e, (n, r)) in notes
        .epochs
        .iter()
        .zip(notes.notes.iter().zip(&notes.max_rates))
    {
        if e % 25 == 0 {
            let target = if *n == NO_INTERFERENCE {
                "none".to_string()
            } else {
                n.to_string()
            };
            println!("epoch {e:>3}: class 0 most confused with {target} (rate {r:.3})");
        }
    }

    for (a, b) in [(0, 1), (2, 3)] {
        let events = dance_events(&trace, a, b, 0.5, 21)?;
        println!("classes {a},{b}: {} dance events", events.len());
        for ev in events {
            println!("  epochs {}..={}", ev.start, ev.end);
        }
    }
    Ok(())
}
