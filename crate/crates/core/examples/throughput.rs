use bfsim_core::crypto::{AddressDeriver, ModelParams, SecretKey};
use std::time::Instant;

fn main() {
    for d in [1u32, 2, 4, 8, 16, 32] {
        let params = ModelParams::new(32, 16)
            .unwrap()
            .with_digest_bits(d)
            .unwrap();
        let mut deriver = AddressDeriver::new(&params);
        let n: u64 = if d <= 4 { 2_000_000 } else { 500_000 };
        let start = Instant::now();
        let mut acc = 0u64;
        for v in 0..n {
            let sk = SecretKey::from_uint(v as u128, &params);
            let h = deriver.addr_hash(&sk);
            acc = acc.wrapping_add(h.as_bytes()[0] as u64);
        }
        let dt = start.elapsed().as_secs_f64();
        println!(
            "d={d:>2}  {:>10.0} keys/s  ({:.1} ns/key)  [{acc}]",
            n as f64 / dt,
            dt / n as f64 * 1e9
        );
    }
}
