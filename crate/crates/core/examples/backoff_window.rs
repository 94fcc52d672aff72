//! How forwarding utility shapes channel access: high-utility senders draw
//! from short contention windows, and every failure doubles the window.

use helper_core::mac::MacParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let p = MacParams::default();
    println!("{:>6} {:>10} {:>10} {:>10}", "u", "retry 0", "retry 1", "retry 2");
    for u in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let w: Vec<String> = (0..3).map(|r| format!("{}", p.window(u, r))).collect();
        println!("{u:>6.2} {:>10} {:>10} {:>10}", w[0], w[1], w[2]);
    }

    // two contenders, one with a strong hop and one with a weak one
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rounds = 10_000;
    let mut strong_first = 0;
    for _ in 0..rounds {
        let strong = p.backoff(0.9, 0, &mut rng);
        let weak = p.backoff(0.1, 0, &mut rng);
        if strong < weak || (strong == weak && rng.gen_bool(0.5)) {
            strong_first += 1;
        }
    }
    println!("u=0.9 wins the channel over u=0.1 in {:.1}% of rounds", 100.0 * strong_first as f64 / rounds as f64);
}
