//! Regenerates data/a1a_synthetic.libsvm: a deterministic stand-in with the
//! a1a schema (binary sparse features, labels in {-1, +1}, d = 120,
//! 200 rows). Swap in the real dataset via the config's target.path when
//! available; the file format is identical.

use std::fmt::Write as _;
use uha_core::rng::{CounterRng, Rand};

fn main() {
    let features = 120u32;
    let rows = 200usize;
    let mut rng = CounterRng::from_seed(0xA1A);
    let mut out = String::new();
    for _ in 0..rows {
        let label = if rng.uniform() < 0.25 { "+1" } else { "-1" };
        out.push_str(label);
        // ~14 active binary features per row, strictly increasing indices.
        let mut idx = 0u32;
        while idx < features {
            idx += 1 + (rng.next_u64() % ((features / 14) as u64 * 2)) as u32;
            if idx <= features {
                write!(out, " {idx}:1").unwrap();
            }
        }
        out.push('\n');
    }
    std::fs::create_dir_all("data").unwrap();
    std::fs::write("data/a1a_synthetic.libsvm", out).unwrap();
    println!("wrote data/a1a_synthetic.libsvm");
}
