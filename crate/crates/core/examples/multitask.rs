//! Couple each client's local training to a shared model with a proximal
//! term, and see how the coupling strength trades personal fit for
//! agreement.

use fedsim::learning::{generate_task, local_train, mean_loss, SyntheticSpec, TrainingConfig};
use fedsim::training_patterns::{AnchorSource, MultiTaskPlan};
use fedsim::{ParamVector, TaskKind};

fn main() -> fedsim::Result<()> {
    let mut spec = SyntheticSpec::new(TaskKind::LinearRegression, 2, 0.0);
    spec.concept_modes = 2;
    let task = generate_task(&spec, 5)?;
    let shared = ParamVector::zeros(spec.n_features + 1);
    let base = TrainingConfig::new(0.05, 20, 10);

    println!("{:>8} {:>14} {:>16}", "lambda", "local loss", "dist to shared");
    for lambda in [0.0, 0.1, 1.0, 10.0, 100.0] {
        let plan = MultiTaskPlan { anchor_source: AnchorSource::Global, lambda };
        let cfg = plan.apply(&base);
        let data = &task.partitions[1];
        let trained = local_train(&shared, data, &cfg, plan.anchor(&shared, None))?;
        println!("{lambda:>8} {:>14.4} {:>16.4}", mean_loss(&trained, data)?, trained.distance(&shared));
    }
    Ok(())
}
