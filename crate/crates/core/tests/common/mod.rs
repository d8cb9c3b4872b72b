#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TAIWAN_HEADER: &str = "ID,LIMIT_BAL,SEX,EDUCATION,MARRIAGE,AGE,PAY_0,PAY_2,PAY_3,PAY_4,PAY_5,PAY_6,\
BILL_AMT1,BILL_AMT2,BILL_AMT3,BILL_AMT4,BILL_AMT5,BILL_AMT6,\
PAY_AMT1,PAY_AMT2,PAY_AMT3,PAY_AMT4,PAY_AMT5,PAY_AMT6,default payment next month";

/// CSV in the UCI credit-card layout with a saturating repayment-status
/// effect on default. Values stay inside the declared feature ranges.
pub fn taiwan_like_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from(TAIWAN_HEADER);
    s.push('\n');
    for id in 1..=n {
        let limit = (rng.gen_range(1..=50) * 10_000) as f64;
        let sex = rng.gen_range(1..=2);
        let edu = rng.gen_range(1..=4);
        let mar = rng.gen_range(1..=3);
        let age = rng.gen_range(21..=70);
        let mut pay = [0i64; 6];
        let mut status: i64 = match rng.gen_range(0..100) {
            0..=19 => -2,
            20..=49 => -1,
            50..=79 => 0,
            80..=91 => 1,
            92..=97 => 2,
            _ => rng.gen_range(3..=8),
        };
        for p in pay.iter_mut() {
            *p = status;
            if rng.gen::<f64>() < 0.3 {
                status = (status + rng.gen_range(-1..=1)).clamp(-2, 8);
            }
        }
        let mut bills = [0f64; 6];
        let mut pays = [0f64; 6];
        let util = rng.gen::<f64>();
        for k in 0..6 {
            bills[k] = (limit * util * rng.gen_range(0.8..1.1)).round();
            pays[k] = (bills[k] * rng.gen_range(0.0..0.2)).round();
        }
        let late = pay[0].max(0) as f64;
        let logit = -1.9 + 2.2 * late.min(2.0) + 0.1 * (late - 2.0).max(0.0) + 0.25 * pay[1].max(0) as f64
            - 0.35 * (limit / 100_000.0)
            + 0.4 * util
            - 0.8 * (pays[0] / (bills[0] + 1.0))
            + 0.01 * (age as f64 - 35.0);
        let p = 1.0 / (1.0 + (-logit).exp());
        let y = u8::from(rng.gen::<f64>() < p);
        let _ = write!(s, "{id},{limit},{sex},{edu},{mar},{age}");
        for v in pay {
            let _ = write!(s, ",{v}");
        }
        for v in bills.iter().chain(&pays) {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{y}");
    }
    s
}

pub fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
