//! Instantiates every ablation case and reports which modules it keeps and
//! how many parameters that costs.
//!
//! ```text
//! cargo run --release --example ablations
//! ```

use deepfgs::{AblationCase, DeepFgs, ModelConfig};

fn main() -> deepfgs::Result<()> {
    let on_off = |b: bool| if b { "on " } else { "off" };
    println!("case    FRR  FFM  MEM  parameters");
    for case in AblationCase::ALL {
        let (frr, ffm, mem) = case.flags();
        let model = DeepFgs::<f32>::new(ModelConfig::default().with_ablation(case))?;
        println!(
            "{:<7} {}  {}  {}  {:10}",
            format!("{case:?}"),
            on_off(frr),
            on_off(ffm),
            on_off(mem),
            model.param_count()
        );
    }
    Ok(())
}
