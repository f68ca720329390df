//! Payload sizes and reconstruction error of the update compression schemes.

use fedsim::model_mgmt::{compress, decompress, Scheme};
use fedsim::simulator::{run_scenario, Scenario};
use fedsim::{ParamVector, TaskKind};

fn main() -> fedsim::Result<()> {
    let v = ParamVector::new((0..100).map(|i| ((i * 37) % 23) as f64 / 7.0 - 1.5).collect(), 0)?;
    println!("{:<18} {:>8} {:>8} {:>12}", "scheme", "payload", "header", "max error");
    for scheme in [
        Scheme::None,
        Scheme::Topk { k: 10 },
        Scheme::Topk { k: 100 },
        Scheme::Quantize { bits: 16 },
        Scheme::Quantize { bits: 8 },
        Scheme::Quantize { bits: 4 },
    ] {
        let packed = compress(&v, scheme)?;
        let back = decompress(&packed)?;
        let err = v.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{:<18} {:>8} {:>8} {:>12.2e}",
            format!("{scheme:?}"),
            packed.compressed_bytes(),
            packed.header_bytes(),
            err
        );
    }

    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 10, 20, 4);
    s.data.n_features = 49;
    let raw = run_scenario(&s)?.summary;
    s.compression = Some(Scheme::Topk { k: 5 });
    let sparse = run_scenario(&s)?.summary;
    println!(
        "\n20 rounds, 10 clients: {} bytes up raw vs {} with top-5 ({:.1}% saved); final loss {:.4} vs {:.4}",
        raw.total_bytes_up,
        sparse.total_bytes_up,
        100.0 * (1.0 - sparse.total_bytes_up as f64 / raw.total_bytes_up as f64),
        raw.final_loss,
        sparse.final_loss
    );
    Ok(())
}
